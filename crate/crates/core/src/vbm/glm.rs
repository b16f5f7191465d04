//! Voxelwise ordinary least squares with a t-contrast.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Mask, ScalarVolume};

#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    /// Subjects × regressors.
    pub x: DMatrix<f64>,
    pub contrast: DVector<f64>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, contrast: DVector<f64>) -> Result<Self> {
        if contrast.len() != x.ncols() {
            return Err(Error::LengthMismatch { expected: x.ncols(), got: contrast.len() });
        }
        Ok(Self { x, contrast })
    }

    /// Intercept plus an indicator of group B; the contrast is `B - A`.
    pub fn two_group(n_a: usize, n_b: usize) -> Self {
        let n = n_a + n_b;
        let x = DMatrix::from_fn(n, 2, |r, c| if c == 0 || r >= n_a { 1.0 } else { 0.0 });
        Self { x, contrast: DVector::from_vec(vec![0.0, 1.0]) }
    }

    pub fn rank(&self) -> usize {
        let sv = self.x.clone().svd(false, false).singular_values;
        let tol = sv.max() * 1e-10 * self.x.nrows().max(self.x.ncols()) as f64;
        sv.iter().filter(|&&s| s > tol).count()
    }
}

#[derive(Clone, Debug)]
pub struct GlmFit {
    pub beta: Vec<ScalarVolume>,
    pub sigma2: ScalarVolume,
    pub t: ScalarVolume,
    pub df: usize,
    /// Voxels with zero residual variance; their t is set to 0.
    pub degenerate: Mask,
}

/// Least squares `β = (XᵀX)⁻¹ Xᵀ y` at every voxel of `mask` (all voxels
/// when `None`) and `t = cᵀβ / √(σ̂² cᵀ(XᵀX)⁻¹c)` with `df = n - rank`.
/// Voxels outside the mask get zeros.
pub fn fit_glm(maps: &[ScalarVolume], design: &DesignMatrix, mask: Option<&Mask>) -> Result<GlmFit> {
    let n = maps.len();
    let p = design.x.ncols();
    if design.x.nrows() != n {
        return Err(Error::LengthMismatch { expected: design.x.nrows(), got: n });
    }
    if n <= p {
        return Err(Error::InvalidArgument(format!("{n} subjects cannot fit {p} regressors")));
    }
    let grid = maps[0].grid().clone();
    for m in maps {
        grid.ensure_same(m.grid(), "subject maps")?;
    }
    if let Some(m) = mask {
        grid.ensure_same(m.grid(), "maps and analysis mask")?;
    }
    if design.rank() < p {
        return Err(Error::RankDeficient);
    }
    let xtx_inv = (design.x.transpose() * &design.x).try_inverse().ok_or(Error::RankDeficient)?;
    let pinv = &xtx_inv * design.x.transpose();
    let c = &design.contrast;
    let c_var = (c.transpose() * &xtx_inv * c)[(0, 0)];
    let df = n - p;
    let per_voxel: Vec<(Vec<f64>, f64, f64, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|o| {
            if mask.is_some_and(|m| !m.bits()[o]) {
                return (vec![0.0; p], 0.0, 0.0, false);
            }
            let y = DVector::from_iterator(n, maps.iter().map(|m| m.values()[o]));
            let beta = &pinv * &y;
            let resid = &y - &design.x * &beta;
            let rss = resid.norm_squared();
            let sigma2 = rss / df as f64;
            // relative to the data scale: rounding leaves a tiny residual on exact fits
            let degenerate = !(rss > 1e-24 * (1.0 + y.norm_squared()));
            let t = if degenerate { 0.0 } else { c.dot(&beta) / (sigma2 * c_var).sqrt() };
            (beta.iter().copied().collect(), if degenerate { 0.0 } else { sigma2 }, t, degenerate)
        })
        .collect();
    let beta = (0..p)
        .map(|j| ScalarVolume::new(grid.clone(), per_voxel.iter().map(|v| v.0[j]).collect()))
        .collect::<Result<Vec<_>>>()?;
    let sigma2 = ScalarVolume::new(grid.clone(), per_voxel.iter().map(|v| v.1).collect())?;
    let t = ScalarVolume::new(grid.clone(), per_voxel.iter().map(|v| v.2).collect())?;
    let degenerate = Mask::new(grid, per_voxel.iter().map(|v| v.3).collect())?;
    Ok(GlmFit { beta, sigma2, t, df, degenerate })
}
