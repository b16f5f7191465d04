//! `phantom`: a synthetic cohort laid out as pipeline input.
//!
//! Writes `images/`, `subjects.csv` and a `pipeline.toml` pointing at them,
//! so `bodyatlas --config <out>/pipeline.toml cohort` runs as is.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use bodyatlas::cohort::write_subjects;
use bodyatlas::phantom::{label_names, make_cohort, PhantomSpec, Variation};
use bodyatlas::volume::nifti;
use serde::{Deserialize, Serialize};

use super::{create_dir, millis, Ctx};
use crate::config::{AtlasSection, Paths, PipelineConfig, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomFile {
    pub spec: PhantomSpec,
    pub variation: Variation,
}

impl PhantomFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let f: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        f.spec.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(f)
    }
}

pub struct PhantomArgs {
    pub n: usize,
    pub spec: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: &PhantomArgs) -> CliResult<()> {
    let root = ctx.out.clone().ok_or_else(|| CliError::Usage("phantom needs --out".into()))?;
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let file = match &args.spec {
        Some(p) => PhantomFile::load(p)?,
        None => PhantomFile::default(),
    };
    let t = std::time::Instant::now();
    let members = make_cohort(args.n, &file.spec, &file.variation, ctx.seed)?;
    let images = root.join("images");
    create_dir(&images)?;
    let mut manifest = RunManifest::new("phantom", None, None, ctx.seed);
    for m in &members {
        let img = images.join(&m.record.image);
        nifti::save_scalar(&m.image, &img)?;
        manifest.add_output(&img, &root)?;
        for l in &m.record.labels {
            let p = images.join(l);
            nifti::save_labels(&m.labels, &p)?;
            manifest.add_output(&p, &root)?;
        }
    }
    let records: Vec<_> = members.iter().map(|m| m.record.clone()).collect();
    let table = root.join("subjects.csv");
    write_subjects(File::create(&table)?, &records)?;
    manifest.add_output(&table, &root)?;

    let cfg = PipelineConfig {
        schema_version: SCHEMA_VERSION,
        seed: ctx.seed,
        workers: None,
        paths: Paths { subjects: "subjects.csv".into(), image_root: "images".into(), output_root: "out".into() },
        labels: label_names().into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
        preprocess: Default::default(),
        registration: Default::default(),
        atlas: AtlasSection::default(),
        vbm: Default::default(),
    };
    let cfg_path = root.join("pipeline.toml");
    std::fs::write(&cfg_path, cfg.to_toml())?;
    manifest.add_output(&cfg_path, &root)?;
    manifest.timings_ms.insert("render".into(), millis(t));
    manifest.write(&root.join("manifest.json"))?;
    log::info!("phantom: {} subjects written to {}", members.len(), root.display());
    Ok(())
}
