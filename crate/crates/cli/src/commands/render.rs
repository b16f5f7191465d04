//! `render`: one orthogonal slice to PNG.

use std::path::PathBuf;

use bodyatlas::volume::ScalarVolume;

use super::load_image;
use crate::error::{CliError, CliResult};
use crate::render::{render_slice, Overlay, Plane, SlicePos, PALETTE};

pub struct RenderArgs {
    pub volume: PathBuf,
    /// `path` or `path:alpha`.
    pub overlays: Vec<String>,
    pub plane: Plane,
    pub slice: SlicePos,
    /// `lo,hi`.
    pub window: Option<String>,
    pub out: PathBuf,
}

fn parse_overlay(s: &str) -> CliResult<(PathBuf, f64)> {
    match s.rsplit_once(':') {
        Some((p, a)) if a.parse::<f64>().is_ok() => Ok((PathBuf::from(p), a.parse().unwrap())),
        _ => Ok((PathBuf::from(s), 0.5)),
    }
}

fn parse_window(s: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("invalid window `{s}` (expected lo,hi)"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

pub fn run(args: &RenderArgs) -> CliResult<()> {
    let base = load_image(&args.volume)?;
    let ovs: Vec<(ScalarVolume, f64)> = args
        .overlays
        .iter()
        .map(|s| {
            let (p, a) = parse_overlay(s)?;
            Ok((load_image(&p)?, a))
        })
        .collect::<CliResult<_>>()?;
    let overlays: Vec<Overlay> = ovs.iter().enumerate().map(|(i, (v, a))| Overlay { volume: v, color: PALETTE[i % PALETTE.len()], alpha: *a }).collect();
    let window = args.window.as_deref().map(parse_window).transpose()?;
    let img = render_slice(&base, &overlays, args.plane, args.slice, window)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save_with_format(&args.out, image::ImageFormat::Png).map_err(|e| CliError::Fatal(format!("{}: {e}", args.out.display())))
}
