//! The `bodyatlas` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod render;
pub mod store;

use std::ffi::OsString;
use std::path::PathBuf;

use bodyatlas::cohort::GroupSpec;
use clap::{Args, Parser, Subcommand};

use commands::phantom::PhantomArgs;
use commands::render::RenderArgs;
use commands::vbm::VbmArgs;
use commands::Ctx;
use config::PipelineConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bodyatlas", version, about = "Whole-body atlas pipeline: cohort selection, registration, atlases, evaluation and VBM")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Group such as `female_normal` or `male_obese`.
    #[arg(long, global = true)]
    pub group: Option<GroupSpec>,
    /// Worker threads (default: config, then all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Reuse subject outputs whose content key still matches (default).
    #[arg(long, global = true, overrides_with = "no_resume")]
    pub resume: bool,
    #[arg(long, global = true, overrides_with = "resume")]
    pub no_resume: bool,
    /// Output root (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Health filter, sex × BMI groups and references.
    Cohort,
    /// Register a group onto its reference.
    Register,
    /// Initial and unbiased atlases of a registered group.
    Atlas,
    /// Dice/HD95/folding before and after registration.
    Eval,
    /// Two-group voxelwise comparison.
    Vbm(VbmCmd),
    /// Write a synthetic cohort.
    Phantom(PhantomCmd),
    /// One slice to PNG.
    Render(RenderCmd),
}

#[derive(Debug, Args)]
pub struct VbmCmd {
    /// Group A maps (files or directories).
    #[arg(long, num_args = 1.., required = true)]
    pub maps_a: Vec<PathBuf>,
    /// Group B maps; positive effects mean B > A.
    #[arg(long, num_args = 1.., required = true)]
    pub maps_b: Vec<PathBuf>,
    /// Analysis mask (voxels > 0.5); default: mean map above the default level.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomCmd {
    /// Number of subjects.
    #[arg(long, default_value_t = 12)]
    pub n: usize,
    /// TOML with optional `[spec]` and `[variation]` tables.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderCmd {
    #[arg(long)]
    pub volume: PathBuf,
    /// `path[:alpha]`, repeatable; colors follow the palette order.
    #[arg(long)]
    pub overlay: Vec<String>,
    #[arg(long, default_value = "axial")]
    pub plane: render::Plane,
    /// Index, or fraction of the axis when it has a decimal point.
    #[arg(long, default_value = "0.5")]
    pub slice: render::SlicePos,
    /// Intensity window `lo,hi`; full range by default.
    #[arg(long)]
    pub window: Option<String>,
    /// PNG path.
    #[arg(long, short = 'o')]
    pub png: PathBuf,
}

fn workers(cli: &Cli, cfg: Option<&PipelineConfig>) -> CliResult<usize> {
    match cli.workers.or(cfg.and_then(|c| c.workers)) {
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
    let n = workers(&cli, cfg.as_ref())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Fatal(e.to_string()))?;
    let ctx = Ctx {
        seed: cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0),
        cfg,
        out: cli.out.clone(),
        group: cli.group,
        resume: !cli.no_resume,
    };
    log::debug!("{n} worker thread(s)");
    pool.install(|| match &cli.command {
        Command::Cohort => commands::cohort::run(&ctx),
        Command::Register => commands::register::run(&ctx),
        Command::Atlas => commands::atlas::run(&ctx),
        Command::Eval => commands::eval::run(&ctx),
        Command::Vbm(a) => commands::vbm::run(&ctx, &VbmArgs { maps_a: a.maps_a.clone(), maps_b: a.maps_b.clone(), mask: a.mask.clone() }),
        Command::Phantom(a) => commands::phantom::run(&ctx, &PhantomArgs { n: a.n, spec: a.spec.clone() }),
        Command::Render(a) => commands::render::run(&RenderArgs {
            volume: a.volume.clone(),
            overlays: a.overlay.clone(),
            plane: a.plane,
            slice: a.slice,
            window: a.window.clone(),
            out: a.png.clone(),
        }),
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.code()
        }
    }
}
