//! Intensity normalization and percentile clipping.

use crate::error::{Error, Result};
use crate::volume::{Mask, ScalarVolume};

/// Maps values affinely onto `[0, 1]`. A constant volume becomes all zeros.
pub fn min_max_normalize(vol: &ScalarVolume) -> ScalarVolume {
    let (lo, hi) = vol.min_max();
    rescale(vol, lo, hi)
}

fn rescale(vol: &ScalarVolume, lo: f64, hi: f64) -> ScalarVolume {
    let range = hi - lo;
    if !(range > 0.0) {
        log::warn!("constant intensity range [{lo}, {hi}]; output set to zero");
        return ScalarVolume::filled(vol.grid().clone(), 0.0);
    }
    let values = vol.values().iter().map(|&v| ((v.clamp(lo, hi) - lo) / range).clamp(0.0, 1.0)).collect();
    ScalarVolume::from_parts(vol.grid().clone(), values)
}

/// Empirical percentile with linear interpolation between order statistics
/// (rank `p/100 · (n-1)`).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Clamps to the `[p_low, p_high]` percentile range, then rescales to `[0, 1]`.
pub fn contrast_clip(vol: &ScalarVolume, p_low: f64, p_high: f64) -> Result<ScalarVolume> {
    if !(0.0..100.0).contains(&p_low) || !(p_high > p_low && p_high <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentiles must satisfy 0 ≤ low < high ≤ 100, got {p_low}, {p_high}")));
    }
    let mut sorted = vol.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, p_low);
    let hi = percentile(&sorted, p_high);
    Ok(rescale(vol, lo, hi))
}

/// Zeroes every voxel outside `mask`.
pub fn mask_background(vol: &ScalarVolume, mask: &Mask) -> Result<ScalarVolume> {
    vol.grid().ensure_same(mask.grid(), "volume and mask")?;
    let values = vol.values().iter().zip(mask.bits()).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
    Ok(ScalarVolume::from_parts(vol.grid().clone(), values))
}
