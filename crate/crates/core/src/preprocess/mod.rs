//! Intensity normalization, body masks and spatial initialization.

mod icp;
mod intensity;
mod kdtree;
mod mask;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use icp::{boundary_points, com_init, procrustes, MAX_ICP_POINTS};
pub use intensity::{contrast_clip, mask_background, min_max_normalize, percentile};
pub use kdtree::KdTree;
pub use mask::{body_mask, close, fill_holes_axial, largest_component, otsu_threshold};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Otsu,
    Fixed,
}

/// Degrees of freedom estimated by ICP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcpMode {
    Translation,
    Rigid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Percentiles, `0 ≤ clip_low < clip_high ≤ 100`.
    pub clip_low: f64,
    pub clip_high: f64,
    pub mask_threshold_mode: ThresholdMode,
    /// Threshold on normalized intensity for [`ThresholdMode::Fixed`].
    pub fixed_threshold: f64,
    /// Closing radius in voxels.
    pub morph_radius: usize,
    pub icp_enabled: bool,
    pub icp_mode: IcpMode,
    pub icp_max_iters: usize,
    /// Stop once the mean closest-point distance changes by less (mm).
    pub icp_tolerance: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clip_low: 1.0,
            clip_high: 99.0,
            mask_threshold_mode: ThresholdMode::Otsu,
            fixed_threshold: 0.1,
            morph_radius: 2,
            icp_enabled: true,
            icp_mode: IcpMode::Rigid,
            icp_max_iters: 200,
            icp_tolerance: 1e-6,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.clip_low && self.clip_low < self.clip_high && self.clip_high <= 100.0) {
            return Err(Error::InvalidArgument(format!("clip percentiles {} / {} out of order", self.clip_low, self.clip_high)));
        }
        if !(self.icp_tolerance > 0.0) {
            return Err(Error::InvalidArgument("icp_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Clipped, normalized and background-masked intensities plus the body mask.
pub fn prepare(vol: &crate::volume::ScalarVolume, cfg: &PreprocessConfig) -> Result<(crate::volume::ScalarVolume, crate::volume::Mask)> {
    cfg.validate()?;
    let clipped = contrast_clip(vol, cfg.clip_low, cfg.clip_high)?;
    let mask = body_mask(&clipped, cfg)?;
    Ok((mask_background(&clipped, &mask)?, mask))
}
