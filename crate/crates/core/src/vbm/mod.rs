//! Voxel-based morphometry: smoothing, a two-group GLM, z-maps and
//! false-discovery-rate thresholding.

mod dist;
mod fdr;
mod glm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{gaussian_smooth, Mask, ScalarVolume};

pub use dist::{normal_upper_tail, t_to_z_scalar, t_upper_tail};
pub use fdr::{fdr_bh, BhResult};
pub use glm::{fit_glm, DesignMatrix, GlmFit};

/// Voxels whose pooled group mean stays at or below this are left out of
/// the default analysis mask.
pub const DEFAULT_MASK_LEVEL: f64 = 1e-3;

/// Student-t volume to z-scores.
pub fn t_to_z(t: &ScalarVolume, df: usize) -> Result<ScalarVolume> {
    if df < 1 {
        return Err(Error::InvalidArgument("t_to_z needs df ≥ 1".into()));
    }
    t.map(|v| t_to_z_scalar(v, df as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// Only `B > A` counts.
    Greater,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// Threshold BH-adjusted p-values.
    #[default]
    Fdr,
    /// Threshold raw p-values.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbmConfig {
    pub sigma_mm: f64,
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub correction: Correction,
}

impl Default for VbmConfig {
    fn default() -> Self {
        Self { sigma_mm: 4.0, alpha: 1e-3, sidedness: Sidedness::TwoSided, correction: Correction::Fdr }
    }
}

impl VbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_mm >= 0.0 && self.sigma_mm.is_finite()) {
            return Err(Error::InvalidArgument(format!("vbm sigma_mm must be non-negative, got {}", self.sigma_mm)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("vbm alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StatMap {
    pub t: ScalarVolume,
    pub z: ScalarVolume,
    /// Raw p-values; 1 outside the analysis mask.
    pub p: ScalarVolume,
    /// BH-adjusted p-values over the mask; 1 outside.
    pub p_adjusted: ScalarVolume,
    pub significant: Mask,
    pub mask: Mask,
    pub df: usize,
    pub correction: Correction,
    pub n_a: usize,
    pub n_b: usize,
}

impl StatMap {
    pub fn significant_count(&self) -> usize {
        self.significant.count()
    }

    /// Short structured summary.
    pub fn summary(&self, alpha: f64) -> String {
        format!(
            "n_a = {}\nn_b = {}\ndf = {}\nalpha = {}\ncorrection = {}\nmask_voxels = {}\nsignificant_voxels = {}\n",
            self.n_a,
            self.n_b,
            self.df,
            alpha,
            match self.correction {
                Correction::Fdr => "fdr",
                Correction::None => "none",
            },
            self.mask.count(),
            self.significant_count()
        )
    }
}

/// Voxels where the mean over all maps exceeds [`DEFAULT_MASK_LEVEL`].
pub fn default_mask(maps: &[&ScalarVolume]) -> Result<Mask> {
    let grid = maps.first().ok_or(Error::Empty("map list"))?.grid().clone();
    let n = maps.len() as f64;
    let bits = (0..grid.len()).into_par_iter().map(|o| maps.iter().fold(0.0, |a, m| a + m.values()[o]) / n > DEFAULT_MASK_LEVEL).collect();
    Mask::new(grid, bits)
}

/// Smooth both groups, fit intercept + group, convert to z and p, correct
/// and threshold inside the mask (the default mask when `None`).
pub fn vbm_pipeline(group_a: &[ScalarVolume], group_b: &[ScalarVolume], mask: Option<&Mask>, cfg: &VbmConfig) -> Result<StatMap> {
    cfg.validate()?;
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Empty("vbm group"));
    }
    let grid = group_a[0].grid().clone();
    for m in group_a.iter().chain(group_b) {
        grid.ensure_same(m.grid(), "vbm maps")?;
    }
    let smoothed = group_a.iter().chain(group_b).map(|m| gaussian_smooth(m, cfg.sigma_mm)).collect::<Result<Vec<_>>>()?;
    let mask = match mask {
        Some(m) => {
            grid.ensure_same(m.grid(), "vbm maps and mask")?;
            m.clone()
        }
        None => default_mask(&smoothed.iter().collect::<Vec<_>>())?,
    };
    let design = DesignMatrix::two_group(group_a.len(), group_b.len());
    let fit = fit_glm(&smoothed, &design, Some(&mask))?;
    let z = t_to_z(&fit.t, fit.df)?;
    let df = fit.df as f64;
    let offsets = mask.set_offsets();
    let p_in: Vec<f64> = offsets
        .par_iter()
        .map(|&o| {
            let t = fit.t.values()[o];
            match cfg.sidedness {
                Sidedness::TwoSided => (2.0 * t_upper_tail(t.abs(), df)).min(1.0),
                Sidedness::Greater => t_upper_tail(t, df),
            }
        })
        .collect();
    let mut p = vec![1.0; grid.len()];
    let mut p_adj = vec![1.0; grid.len()];
    let mut sig = vec![false; grid.len()];
    if !offsets.is_empty() {
        let bh = fdr_bh(&p_in, cfg.alpha)?;
        for (k, &o) in offsets.iter().enumerate() {
            p[o] = p_in[k];
            p_adj[o] = bh.adjusted[k];
            sig[o] = match cfg.correction {
                Correction::Fdr => bh.adjusted[k] < cfg.alpha,
                Correction::None => p_in[k] < cfg.alpha,
            };
        }
    }
    Ok(StatMap {
        t: fit.t,
        z,
        p: ScalarVolume::new(grid.clone(), p)?,
        p_adjusted: ScalarVolume::new(grid.clone(), p_adj)?,
        significant: Mask::new(grid, sig)?,
        mask,
        df: fit.df,
        correction: cfg.correction,
        n_a: group_a.len(),
        n_b: group_b.len(),
    })
}

/// `k` of `0..n`, drawn uniformly without replacement and sorted.
pub fn subsample(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidArgument(format!("cannot draw {k} of {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}
