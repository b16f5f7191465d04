pub mod atlas;
pub mod cohort;
pub mod eval;
pub mod phantom;
pub mod register;
pub mod render;
pub mod vbm;

use std::fs::File;
use std::path::{Path, PathBuf};

use bodyatlas::cohort::{read_subjects, select_groups, select_reference, GroupSpec, ReferenceChoice, SubjectRecord};
use bodyatlas::volume::{nifti, LabelVolume, ScalarVolume};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Settings shared by every subcommand after flag/config merging.
pub struct Ctx {
    pub cfg: Option<PipelineConfig>,
    pub out: Option<PathBuf>,
    pub group: Option<GroupSpec>,
    pub seed: u64,
    pub resume: bool,
}

impl Ctx {
    pub fn config(&self) -> CliResult<&PipelineConfig> {
        self.cfg.as_ref().ok_or_else(|| CliError::Usage("--config is required for this command".into()))
    }

    pub fn group(&self) -> CliResult<GroupSpec> {
        self.group.ok_or_else(|| CliError::Usage("--group is required for this command".into()))
    }

    /// `--out` when given, else the configured output root.
    pub fn out_root(&self) -> CliResult<PathBuf> {
        match (&self.out, &self.cfg) {
            (Some(o), _) => Ok(o.clone()),
            (None, Some(c)) => Ok(c.paths.output_root.clone()),
            (None, None) => Err(CliError::Usage("--out or --config is required".into())),
        }
    }

    pub fn config_hash(&self) -> Option<String> {
        self.cfg.as_ref().map(|c| c.hash())
    }
}

pub fn load_table(cfg: &PipelineConfig) -> CliResult<Vec<SubjectRecord>> {
    let f = File::open(&cfg.paths.subjects).map_err(|e| CliError::Config(format!("{}: {e}", cfg.paths.subjects.display())))?;
    read_subjects(f).map_err(|e| CliError::Config(format!("{}: {e}", cfg.paths.subjects.display())))
}

/// One group's members (sorted by id) and its reference.
pub struct GroupContext {
    pub spec: GroupSpec,
    pub members: Vec<SubjectRecord>,
    pub choice: ReferenceChoice,
}

impl GroupContext {
    pub fn reference(&self) -> &SubjectRecord {
        self.members.iter().find(|r| r.id == self.choice.id).expect("reference is a member")
    }
}

pub fn group_context(cfg: &PipelineConfig, spec: GroupSpec) -> CliResult<GroupContext> {
    let records = load_table(cfg)?;
    let partition = select_groups(&records);
    let members = partition.groups.get(&spec).cloned().unwrap_or_default();
    if members.is_empty() {
        return Err(CliError::Fatal(format!("group {spec} has no eligible subjects")));
    }
    let choice = select_reference(&members)?;
    Ok(GroupContext { spec, members, choice })
}

pub fn image_path(cfg: &PipelineConfig, r: &SubjectRecord) -> PathBuf {
    cfg.paths.image_root.join(&r.image)
}

/// The first non-empty label column.
pub fn labels_path(cfg: &PipelineConfig, r: &SubjectRecord) -> Option<PathBuf> {
    r.labels.iter().find(|l| !l.trim().is_empty()).map(|l| cfg.paths.image_root.join(l))
}

pub fn load_image(path: &Path) -> CliResult<ScalarVolume> {
    nifti::load_scalar(path).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))
}

pub fn load_label_map(cfg: &PipelineConfig, path: &Path) -> CliResult<LabelVolume> {
    nifti::load_labels(path, &cfg.label_names()?).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Fatal(format!("{}: {e}", dir.display())))
}

/// Structures to evaluate: the configured list, else every named label of
/// the reference.
pub fn structures(cfg: &PipelineConfig, reference: &LabelVolume) -> Vec<String> {
    if cfg.atlas.structures.is_empty() {
        reference.names().values().cloned().collect()
    } else {
        cfg.atlas.structures.clone()
    }
}

pub fn millis(t: std::time::Instant) -> u64 {
    t.elapsed().as_millis() as u64
}
