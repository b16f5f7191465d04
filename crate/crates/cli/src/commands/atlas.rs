//! `atlas`: initial and unbiased anatomical and probability atlases of a
//! registered group.

use std::path::Path;

use bodyatlas::atlas::{
    build_initial_atlas, build_label_atlas, mean_inverse_field, soft_labels_by_name, unbias, unbias_probability, CohortRegistration, Provenance, SubjectRegistration,
};
use bodyatlas::registration::compose_total;
use bodyatlas::transform::{warp_labels, warp_scalar, AffineTransform, TransformChain};
use bodyatlas::volume::{nifti, ImageGrid, ScalarVolume};
use rayon::prelude::*;

use super::register::{group_dir, load_transform};
use super::{create_dir, group_context, image_path, labels_path, load_image, load_label_map, structures, Ctx};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::store;

fn load_subject(cfg: &PipelineConfig, r: &bodyatlas::cohort::SubjectRecord, dir: &Path, grid: &ImageGrid) -> CliResult<SubjectRegistration> {
    store::read_result(&dir.join(store::RESULT)).map_err(|e| CliError::Fatal(format!("{}: no registration result ({e}); run `register` first", r.id)))?;
    let (affine, velocity) = load_transform(dir)?;
    let total_field = compose_total(&affine, &velocity, grid);
    let chain = TransformChain::affine_then_field(AffineTransform::identity(), total_field.clone());
    let warped_image = warp_scalar(&load_image(&image_path(cfg, r))?, &chain, grid)?;
    let warped_labels = match labels_path(cfg, r) {
        Some(p) => soft_labels_by_name(&warp_labels(&load_label_map(cfg, &p)?, &chain, grid)?),
        None => Default::default(),
    };
    Ok(SubjectRegistration { id: r.id.clone(), affine, velocity, total_field, warped_image, warped_labels })
}

fn save(vol: &ScalarVolume, prov: &Provenance, dir: &Path, stem: &str, root: &Path, manifest: &mut RunManifest) -> CliResult<()> {
    let img = dir.join(format!("{stem}.nii.gz"));
    nifti::save_scalar(vol, &img)?;
    let side = dir.join(format!("{stem}.json"));
    std::fs::write(&side, serde_json::to_vec_pretty(prov).expect("provenance serializes"))?;
    manifest.add_output(&img, root)?;
    manifest.add_output(&side, root)?;
    Ok(())
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config()?;
    let root = ctx.out_root()?;
    let gctx = group_context(cfg, ctx.group()?)?;
    let rdir = group_dir(&root, &gctx);
    let reference = gctx.reference().clone();
    let grid = load_image(&image_path(cfg, &reference))?.grid().clone();
    let mut manifest = RunManifest::new("atlas", Some(gctx.spec.to_string()), ctx.config_hash(), ctx.seed);

    let loaded: Vec<(String, CliResult<SubjectRegistration>)> =
        gctx.members.par_iter().map(|r| (r.id.clone(), load_subject(cfg, r, &rdir.join(&r.id), &grid))).collect();
    let mut subjects = Vec::new();
    let mut failures = Vec::new();
    for (id, s) in loaded {
        match s {
            Ok(s) => subjects.push(s),
            Err(e) => {
                log::warn!("{id}: left out of the atlas: {e}");
                manifest.warnings.push(format!("{id}: left out: {e}"));
                failures.push((id, e.to_string()));
            }
        }
    }
    if subjects.is_empty() {
        return Err(CliError::Fatal(format!("group {}: no registered subjects", gctx.spec)));
    }
    let reg = CohortRegistration::new(reference.id.clone(), Some(gctx.spec), grid.clone(), subjects)?;
    let variant = cfg.atlas.inverse_variant;
    let phi = mean_inverse_field(&reg, variant)?;
    for (id, res) in &phi.excluded {
        manifest.warnings.push(format!("{id}: inverse residual {res:.3} voxels, left out of the mean inverse field"));
    }

    let dir = root.join("atlas").join(gctx.spec.to_string());
    create_dir(&dir.join("labels"))?;
    let prov = |kind: &str, structure: Option<&str>, unbiased: bool| Provenance {
        kind: kind.to_string(),
        structure: structure.map(str::to_string),
        group: Some(gctx.spec.to_string()),
        reference_id: reference.id.clone(),
        n_subjects: reg.subjects().len(),
        subject_ids: reg.ids(),
        unbiased,
        inverse_variant: unbiased.then_some(variant),
        excluded_from_mean_inverse: if unbiased { phi.excluded.iter().map(|e| e.0.clone()).collect() } else { Vec::new() },
        config_hash: cfg.hash(),
    };

    let initial = build_initial_atlas(&reg)?;
    save(&initial.volume, &prov("anatomical", None, false), &dir, "atlas_initial", &root, &mut manifest)?;
    let unbiased = unbias(&initial, &phi)?;
    save(&unbiased.volume, &prov("anatomical", None, true), &dir, "atlas", &root, &mut manifest)?;
    let field = dir.join("mean_inverse_field.nii.gz");
    nifti::save_vector_field(&grid, phi.field.vectors(), &field)?;
    manifest.add_output(&field, &root)?;

    if let Some(lp) = labels_path(cfg, &reference) {
        let ref_labels = load_label_map(cfg, &lp)?;
        for name in structures(cfg, &ref_labels) {
            if reg.subjects().iter().any(|s| !s.warped_labels.contains_key(&name)) {
                manifest.warnings.push(format!("structure {name}: missing from some subjects, no probability atlas"));
                continue;
            }
            let p = build_label_atlas(&reg, &name)?;
            save(&p.volume, &prov("probability", Some(&name), false), &dir.join("labels"), &format!("{name}_initial"), &root, &mut manifest)?;
            let pu = unbias_probability(&p, &phi)?;
            save(&pu.volume, &prov("probability", Some(&name), true), &dir.join("labels"), &name, &root, &mut manifest)?;
        }
    }
    manifest.write(&dir.join("manifest.json"))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial(failures))
    }
}
