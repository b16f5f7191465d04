//! Pairwise registration: affine stage, then a multi-resolution stationary
//! velocity field on a B-spline lattice, both minimizing an image metric
//! (plus bending energy for the deformable part).

mod affine;
mod bending;
mod config;
mod ffd;
mod metric;
mod optimizer;

pub use affine::{register_affine, AffineResult};
pub use bending::bending_energy;
pub use config::{Metric, RegConfig};
pub use ffd::{compose_total, register_ffd, total_cost, total_cost_and_gradient, LevelTrace, RegResult};
pub use metric::{metric_ncc, metric_ssd};
pub use optimizer::StopReason;

use crate::error::{Error, Result};
use crate::preprocess::{com_init, prepare, PreprocessConfig};
use crate::transform::AffineTransform;
use crate::volume::{downsample2, pyramid, Mask, ScalarVolume};

/// Every stage of [`register_pair`].
#[derive(Clone, Debug)]
pub struct PairResult {
    pub init: AffineTransform,
    pub affine: AffineResult,
    pub deformable: RegResult,
    pub fixed_mask: Mask,
}

/// Full pairwise pipeline on raw volumes: preprocess both, initialize from
/// the body masks, then affine and deformable stages over the whole grid.
pub fn register_pair(fixed: &ScalarVolume, moving: &ScalarVolume, pre: &PreprocessConfig, cfg: &RegConfig) -> Result<PairResult> {
    cfg.validate()?;
    let (f, fixed_mask) = prepare(fixed, pre)?;
    let (m, moving_mask) = prepare(moving, pre)?;
    let init = com_init(&fixed_mask, &moving_mask, pre)?;
    let affine = register_affine(&f, &m, &init, cfg, None)?;
    let deformable = register_ffd(&f, &m, &affine.affine, cfg, None)?;
    Ok(PairResult { init, affine, deformable, fixed_mask })
}

pub(crate) fn mask_offsets(fixed: &ScalarVolume, mask: Option<&Mask>) -> Result<Vec<usize>> {
    match mask {
        Some(m) => {
            fixed.grid().ensure_same(m.grid(), "fixed image and registration mask")?;
            let o = m.set_offsets();
            if o.is_empty() {
                return Err(Error::Empty("registration mask"));
            }
            Ok(o)
        }
        None => Ok((0..fixed.grid().len()).collect()),
    }
}

/// Fixed and moving pyramids with the metric voxels of each level.
pub(crate) struct Levels {
    fixed: Vec<ScalarVolume>,
    moving: Vec<ScalarVolume>,
    offsets: Vec<Vec<usize>>,
}

impl Levels {
    pub(crate) fn build(fixed: &ScalarVolume, moving: &ScalarVolume, mask: Option<&Mask>, n: usize) -> Result<Self> {
        let fp = pyramid(fixed, n)?;
        let mp = pyramid(moving, n)?;
        let mut offsets = vec![mask_offsets(fixed, mask)?];
        if let Some(m) = mask {
            // a coarse voxel counts when at least a quarter of its block is in the mask
            let mut ind = ScalarVolume::new(m.grid().clone(), m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
            for lvl in 1..n {
                ind = downsample2(&ind)?;
                let o: Vec<usize> = ind.values().iter().enumerate().filter(|(_, &v)| v >= 0.25).map(|(o, _)| o).collect();
                if o.is_empty() {
                    return Err(Error::InvalidArgument(format!("registration mask vanishes at pyramid level {lvl}")));
                }
                offsets.push(o);
            }
        } else {
            offsets.extend(fp[1..].iter().map(|f| (0..f.grid().len()).collect()));
        }
        Ok(Self { fixed: fp, moving: mp, offsets })
    }

    pub(crate) fn len(&self) -> usize {
        self.fixed.len()
    }

    pub(crate) fn get(&self, lvl: usize) -> (&ScalarVolume, &ScalarVolume, &[usize]) {
        (&self.fixed[lvl], &self.moving[lvl], &self.offsets[lvl])
    }
}
