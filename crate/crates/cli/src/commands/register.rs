//! `register`: every member of a group onto the group reference.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bodyatlas::cohort::SubjectRecord;
use bodyatlas::registration::{register_pair, RegResult};
use bodyatlas::transform::{warp_labels, warp_scalar, AffineTransform, DisplacementField, TransformChain, VelocityField};
use bodyatlas::volume::{nifti, ScalarVolume};
use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, group_context, image_path, labels_path, load_image, load_label_map, millis, Ctx, GroupContext};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_file, relative, sha256_hex, RunManifest, TOOL_VERSION};
use crate::store::{self, SubjectResult};

pub fn group_dir(root: &Path, ctx: &GroupContext) -> PathBuf {
    root.join("register").join(ctx.spec.to_string())
}

#[derive(Serialize)]
struct KeyParts<'a> {
    tool_version: &'a str,
    preprocess: &'a bodyatlas::preprocess::PreprocessConfig,
    registration: &'a bodyatlas::registration::RegConfig,
    labels: &'a BTreeMap<String, String>,
    reference: &'a str,
    fixed: String,
    moving: String,
    moving_labels: Option<String>,
}

/// Content hash of everything one subject's outputs depend on.
fn subject_key(cfg: &PipelineConfig, reference: &SubjectRecord, r: &SubjectRecord) -> CliResult<String> {
    let parts = KeyParts {
        tool_version: TOOL_VERSION,
        preprocess: &cfg.preprocess,
        registration: &cfg.registration,
        labels: &cfg.labels,
        reference: &reference.id,
        fixed: hash_file(&image_path(cfg, reference))?,
        moving: hash_file(&image_path(cfg, r))?,
        moving_labels: labels_path(cfg, r).map(|p| hash_file(&p)).transpose()?,
    };
    Ok(sha256_hex(&serde_json::to_vec(&parts).expect("key serializes")))
}

/// Existing outputs are reusable when their key matches and every file
/// still has the recorded hash.
fn reusable(dir: &Path, key: &str) -> Option<SubjectResult> {
    let r = store::read_result(&dir.join(store::RESULT)).ok()?;
    if r.key != key {
        return None;
    }
    r.files.iter().all(|(name, h)| hash_file(&dir.join(name)).is_ok_and(|x| x == *h)).then_some(r)
}

fn write_trace(path: &Path, res: &RegResult, affine_trace: &[Vec<f64>]) -> CliResult<()> {
    let mut s = String::from("stage,level,iteration,cost\n");
    let n = affine_trace.len();
    for (i, costs) in affine_trace.iter().enumerate() {
        for (k, c) in costs.iter().enumerate() {
            writeln!(s, "affine,{},{k},{c:e}", n - 1 - i).unwrap();
        }
    }
    for l in &res.trace {
        for (k, c) in l.costs.iter().enumerate() {
            writeln!(s, "deformable,{},{k},{c:e}", l.level).unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn register_one(cfg: &PipelineConfig, ctx: &GroupContext, fixed: &ScalarVolume, r: &SubjectRecord, dir: &Path, key: String) -> CliResult<SubjectResult> {
    create_dir(dir)?;
    let grid = fixed.grid();
    let is_reference = r.id == ctx.choice.id;
    let moving = if is_reference { fixed.clone() } else { load_image(&image_path(cfg, r))? };
    let (affine, velocity, field, converged, reverted, res) = if is_reference {
        // the reference is its own identity registration
        let spacing = grid.spacing() * *cfg.registration.control_spacing_schedule.last().expect("validated schedule");
        let v = VelocityField::zeros(grid, spacing)?;
        (AffineTransform::identity(), v, DisplacementField::zeros(grid.clone()), true, false, None)
    } else {
        let p = register_pair(fixed, &moving, &cfg.preprocess, &cfg.registration)?;
        let d = p.deformable.clone();
        (p.deformable.affine, d.velocity, d.total_field, d.converged && p.affine.converged, d.reverted_to_affine, Some(p))
    };
    let chain = TransformChain::affine_then_field(AffineTransform::identity(), field.clone());
    let warped = warp_scalar(&moving, &chain, grid)?;
    let folding_ratio = field.folding_ratio(None)?;

    store::write_affine(&dir.join(store::AFFINE), &affine)?;
    store::write_velocity(&dir.join(store::VELOCITY), &velocity)?;
    nifti::save_scalar(&warped, dir.join(store::WARPED))?;
    let mut names = vec![store::AFFINE, store::VELOCITY, store::WARPED];
    if let Some(lp) = labels_path(cfg, r) {
        let labels = load_label_map(cfg, &lp)?;
        let w = warp_labels(&labels, &chain, grid)?;
        nifti::save_labels(&w.hard, dir.join(store::WARPED_LABELS))?;
        names.push(store::WARPED_LABELS);
    }
    match &res {
        Some(p) => write_trace(&dir.join(store::TRACE), &p.deformable, &p.affine.trace)?,
        None => std::fs::write(dir.join(store::TRACE), "stage,level,iteration,cost\n")?,
    }
    names.push(store::TRACE);
    let files = names.iter().map(|n| Ok((n.to_string(), hash_file(&dir.join(n))?))).collect::<CliResult<_>>()?;
    let result = SubjectResult { id: r.id.clone(), key, is_reference, converged, reverted_to_affine: reverted, folding_ratio, files };
    store::write_result(&dir.join(store::RESULT), &result)?;
    Ok(result)
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config()?;
    let root = ctx.out_root()?;
    let gctx = group_context(cfg, ctx.group()?)?;
    let gdir = group_dir(&root, &gctx);
    create_dir(&gdir)?;
    let reference = gctx.reference().clone();
    let fixed = load_image(&image_path(cfg, &reference))?;
    let mut manifest = RunManifest::new("register", Some(gctx.spec.to_string()), ctx.config_hash(), ctx.seed);

    let outcomes: Vec<(String, CliResult<(SubjectResult, bool)>, u64)> = gctx
        .members
        .par_iter()
        .map(|r| {
            let t = Instant::now();
            let dir = gdir.join(&r.id);
            let out = subject_key(cfg, &reference, r).and_then(|key| match reusable(&dir, &key).filter(|_| ctx.resume) {
                Some(prev) => Ok((prev, true)),
                None => register_one(cfg, &gctx, &fixed, r, &dir, key).map(|x| (x, false)),
            });
            (r.id.clone(), out, millis(t))
        })
        .collect();

    let mut failures = Vec::new();
    for (id, out, ms) in outcomes {
        match out {
            Ok((res, reused)) => {
                if reused {
                    log::info!("{id}: outputs up to date");
                } else {
                    manifest.timings_ms.insert(id.clone(), ms);
                }
                if res.reverted_to_affine {
                    manifest.warnings.push(format!("{id}: deformable stage reverted to affine"));
                }
                if !res.converged {
                    manifest.warnings.push(format!("{id}: iteration limit reached"));
                }
                for name in res.files.keys().chain([&store::RESULT.to_string()]) {
                    manifest.add_output(&gdir.join(&id).join(name), &root)?;
                }
            }
            Err(e) => {
                log::error!("{id}: {e}");
                manifest.failures.insert(id.clone(), e.to_string());
                failures.push((id, e.to_string()));
            }
        }
    }
    manifest.inputs.insert(relative(&image_path(cfg, &reference), &cfg.paths.image_root), hash_file(&image_path(cfg, &reference))?);
    manifest.write(&gdir.join("manifest.json"))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial(failures))
    }
}

/// Saved `(affine, velocity)` of one subject.
pub fn load_transform(dir: &Path) -> CliResult<(AffineTransform, VelocityField)> {
    Ok((store::read_affine(&dir.join(store::AFFINE))?, store::read_velocity(&dir.join(store::VELOCITY))?))
}

