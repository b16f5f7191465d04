//! `eval`: per-structure Dice and HD95 of every non-reference subject
//! before registration, after the affine stage and after the deformable one.

use std::fs::File;

use bodyatlas::metrics::{evaluate_labels, report, write_metrics_csv, Stage, SubjectMetrics};
use bodyatlas::transform::{warp_labels, DisplacementField, TransformChain};
use rayon::prelude::*;

use super::register::{group_dir, load_transform};
use super::{create_dir, group_context, labels_path, load_label_map, structures, Ctx};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::store;

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config()?;
    let root = ctx.out_root()?;
    let gctx = group_context(cfg, ctx.group()?)?;
    let rdir = group_dir(&root, &gctx);
    let reference = gctx.reference().clone();
    let ref_path = labels_path(cfg, &reference).ok_or_else(|| CliError::Config(format!("reference {} has no label map", reference.id)))?;
    let ref_labels = load_label_map(cfg, &ref_path)?;
    let grid = ref_labels.grid().clone();
    let names = structures(cfg, &ref_labels);
    let mut manifest = RunManifest::new("eval", Some(gctx.spec.to_string()), ctx.config_hash(), ctx.seed);

    let eval_one = |r: &bodyatlas::cohort::SubjectRecord| -> CliResult<Vec<SubjectMetrics>> {
        let lp = labels_path(cfg, r).ok_or_else(|| CliError::Config(format!("{} has no label map", r.id)))?;
        let labels = load_label_map(cfg, &lp)?;
        let dir = rdir.join(&r.id);
        let res = store::read_result(&dir.join(store::RESULT))?;
        let (affine, _) = load_transform(&dir)?;
        let pre = warp_labels(&labels, &TransformChain::identity(), &grid)?.hard;
        let aff = warp_labels(&labels, &TransformChain::affine(affine), &grid)?.hard;
        let aff_fold = DisplacementField::from_affine(grid.clone(), &affine).folding_ratio(None)?;
        let def = bodyatlas::volume::nifti::load_labels(dir.join(store::WARPED_LABELS), labels.names())?;
        let mut rows = evaluate_labels(&r.id, Stage::PreReg, &ref_labels, &pre, &names, 0.0)?;
        rows.extend(evaluate_labels(&r.id, Stage::Affine, &ref_labels, &aff, &names, aff_fold)?);
        rows.extend(evaluate_labels(&r.id, Stage::Deformable, &ref_labels, &def, &names, res.folding_ratio)?);
        Ok(rows)
    };
    let outcomes: Vec<(String, CliResult<Vec<SubjectMetrics>>)> =
        gctx.members.par_iter().filter(|r| r.id != reference.id).map(|r| (r.id.clone(), eval_one(r))).collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (id, out) in outcomes {
        match out {
            Ok(r) => rows.extend(r),
            Err(e) => {
                log::error!("{id}: {e}");
                manifest.failures.insert(id.clone(), e.to_string());
                failures.push((id, e.to_string()));
            }
        }
    }
    let dir = root.join("eval").join(gctx.spec.to_string());
    create_dir(&dir)?;
    let csv = dir.join("metrics.csv");
    write_metrics_csv(File::create(&csv)?, &rows)?;
    manifest.add_output(&csv, &root)?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, report(&rows).to_text())?;
    manifest.add_output(&txt, &root)?;
    manifest.write(&dir.join("manifest.json"))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial(failures))
    }
}
