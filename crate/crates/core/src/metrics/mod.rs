//! Overlap and surface-distance scores between segmentations, and the
//! per-stage registration report built from them.

mod edt;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::percentile;
use crate::volume::Mask;

pub use report::{evaluate_labels, report, write_metrics_csv, RegistrationReport, Stage, StageSummary, StructureSummary, SubjectMetrics};

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks agree perfectly (1.0).
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "dice masks")?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        log::debug!("dice of two empty masks taken as 1");
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// How the two directed distance sets become one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hd95Mode {
    /// Quantile of both directed sets taken together.
    #[default]
    Pooled,
    /// Larger of the two directed quantiles.
    MaxOfDirected,
}

/// Distances (mm) from each surface voxel of `from` to the nearest surface
/// voxel of `to`. Grid axes are orthonormal, so the separable transform is
/// exact.
fn directed(from: &Mask, to: &Mask) -> Vec<f64> {
    let sq = edt::squared_edt(to);
    from.set_offsets().into_iter().map(|o| sq[o].sqrt()).collect()
}

fn surfaces(a: &Mask, b: &Mask) -> Result<(Mask, Mask)> {
    a.grid().ensure_same(b.grid(), "surface-distance masks")?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("surface-distance mask"));
    }
    Ok((a.boundary(), b.boundary()))
}

/// 95th percentile (linear interpolation) of the surface-to-surface
/// distances in mm.
pub fn hd95(a: &Mask, b: &Mask) -> Result<f64> {
    hd95_with(a, b, Hd95Mode::Pooled)
}

pub fn hd95_with(a: &Mask, b: &Mask, mode: Hd95Mode) -> Result<f64> {
    let (sa, sb) = surfaces(a, b)?;
    let mut ab = directed(&sa, &sb);
    let mut ba = directed(&sb, &sa);
    Ok(match mode {
        Hd95Mode::Pooled => {
            ab.append(&mut ba);
            ab.sort_by(f64::total_cmp);
            percentile(&ab, 95.0)
        }
        Hd95Mode::MaxOfDirected => {
            ab.sort_by(f64::total_cmp);
            ba.sort_by(f64::total_cmp);
            percentile(&ab, 95.0).max(percentile(&ba, 95.0))
        }
    })
}

/// Largest surface-to-surface distance in mm.
pub fn hausdorff(a: &Mask, b: &Mask) -> Result<f64> {
    let (sa, sb) = surfaces(a, b)?;
    Ok(directed(&sa, &sb).into_iter().chain(directed(&sb, &sa)).fold(0.0, f64::max))
}
