//! `vbm`: voxelwise two-group comparison of maps already on one grid.

use std::path::{Path, PathBuf};

use bodyatlas::vbm::{vbm_pipeline, VbmConfig};
use bodyatlas::volume::{nifti, Mask, ScalarVolume};

use super::{create_dir, load_image, Ctx};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub struct VbmArgs {
    pub maps_a: Vec<PathBuf>,
    pub maps_b: Vec<PathBuf>,
    pub mask: Option<PathBuf>,
}

/// Files as given; a directory stands for its `*.nii`/`*.nii.gz` files in
/// name order.
fn expand(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_str().is_some_and(|s| s.ends_with(".nii") || s.ends_with(".nii.gz")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_all(paths: &[PathBuf], which: &str) -> CliResult<Vec<ScalarVolume>> {
    let files = expand(paths)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("group {which} has no maps")));
    }
    files.iter().map(|f| load_image(f)).collect()
}

fn indicator(m: &Mask) -> ScalarVolume {
    ScalarVolume::new(m.grid().clone(), m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).expect("one value per voxel")
}

pub fn run(ctx: &Ctx, args: &VbmArgs) -> CliResult<()> {
    let cfg: VbmConfig = ctx.cfg.as_ref().map(|c| c.vbm.clone()).unwrap_or_default();
    let root = ctx.out_root()?;
    let a = load_all(&args.maps_a, "A")?;
    let b = load_all(&args.maps_b, "B")?;
    let mask = match &args.mask {
        Some(p) => {
            let v = load_image(p)?;
            Some(Mask::new(v.grid().clone(), v.values().iter().map(|&x| x > 0.5).collect())?)
        }
        None => None,
    };
    let stats = vbm_pipeline(&a, &b, mask.as_ref(), &cfg)?;

    let dir = root.join("vbm");
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("vbm", None, ctx.config_hash(), ctx.seed);
    for p in expand(&args.maps_a)?.iter().chain(&expand(&args.maps_b)?).chain(&args.mask) {
        manifest.add_input(p, &root)?;
    }
    let mut save = |v: &ScalarVolume, name: &str| -> CliResult<()> {
        let p: PathBuf = dir.join(name);
        nifti::save_scalar(v, &p)?;
        manifest.add_output(&p, &root)?;
        Ok(())
    };
    save(&stats.t, "t.nii.gz")?;
    save(&stats.z, "z.nii.gz")?;
    save(&stats.p, "p.nii.gz")?;
    save(&stats.p_adjusted, "p_adjusted.nii.gz")?;
    save(&indicator(&stats.significant), "significant.nii.gz")?;
    save(&indicator(&stats.mask), "mask.nii.gz")?;
    let summary: &Path = &dir.join("summary.txt");
    std::fs::write(summary, stats.summary(cfg.alpha))?;
    manifest.add_output(summary, &root)?;
    manifest.write(&dir.join("manifest.json"))?;
    log::info!("vbm: {} significant voxels of {}", stats.significant_count(), stats.mask.count());
    Ok(())
}
