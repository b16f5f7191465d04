//! Separable Gaussian filtering and factor-two pyramid reduction.

use rayon::prelude::*;

use super::data::ScalarVolume;
use super::grid::ImageGrid;
use crate::error::{Error, Result};

/// Prefilter width (in fine voxels) applied before 2×2×2 block averaging.
pub const DOWNSAMPLE_SIGMA_VOXELS: f64 = 0.85;

/// Half-kernel of a Gaussian truncated at ±3σ (index 0 is the center tap).
fn half_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    (0..=radius).map(|d| (-(d as f64).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
}

/// One axis of a separable Gaussian. Taps falling outside the grid are
/// dropped and the remaining weights renormalized.
fn convolve_axis(values: &[f64], dims: [usize; 3], axis: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || dims[axis] == 1 {
        return values.to_vec();
    }
    let kernel = half_kernel(sigma);
    let radius = kernel.len() as i64 - 1;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as i64;
    (0..values.len())
        .into_par_iter()
        .map(|o| {
            let pos = match axis {
                0 => o % dims[0],
                1 => (o / dims[0]) % dims[1],
                _ => o / (dims[0] * dims[1]),
            } as i64;
            let center = values[o];
            // center + Σ w (v - center) / Σ w: constants pass through exactly
            let mut wsum = kernel[0];
            let mut acc = 0.0;
            for d in 1..=radius {
                let w = kernel[d as usize];
                if pos - d >= 0 {
                    acc += w * (values[o - d as usize * stride] - center);
                    wsum += w;
                }
                if pos + d < n {
                    acc += w * (values[o + d as usize * stride] - center);
                    wsum += w;
                }
            }
            center + acc / wsum
        })
        .collect()
}

/// Separable Gaussian smoothing with per-axis widths in voxels.
pub(crate) fn gaussian_voxels(values: &[f64], dims: [usize; 3], sigma: [f64; 3]) -> Vec<f64> {
    let x = convolve_axis(values, dims, 0, sigma[0]);
    let y = convolve_axis(&x, dims, 1, sigma[1]);
    convolve_axis(&y, dims, 2, sigma[2])
}

/// Gaussian smoothing with an isotropic width in mm.
///
/// The kernel is truncated at ±3σ and renormalized per axis, so constant
/// images are preserved exactly; `sigma_mm == 0` returns the input
/// unchanged.
pub fn gaussian_smooth(vol: &ScalarVolume, sigma_mm: f64) -> Result<ScalarVolume> {
    if !(sigma_mm >= 0.0) || !sigma_mm.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {sigma_mm}")));
    }
    if sigma_mm == 0.0 {
        return Ok(vol.clone());
    }
    let s = vol.grid().spacing();
    let sigma = [sigma_mm / s.x, sigma_mm / s.y, sigma_mm / s.z];
    let out = gaussian_voxels(vol.values(), vol.grid().dims(), sigma);
    Ok(ScalarVolume::from_parts(vol.grid().clone(), out))
}

/// Halves every dimension (ceil) after a light Gaussian prefilter.
///
/// Coarse voxel values are the means of their (up to) 2×2×2 fine blocks.
pub fn downsample2(vol: &ScalarVolume) -> Result<ScalarVolume> {
    let fine = vol.grid();
    let coarse = fine.downsampled()?;
    let fd = fine.dims();
    let s = DOWNSAMPLE_SIGMA_VOXELS;
    let smooth = gaussian_voxels(vol.values(), fd, [s, s, s]);
    let out: Vec<f64> = (0..coarse.len())
        .into_par_iter()
        .map(|o| {
            let [ci, cj, ck] = coarse.coords(o);
            let mut first = None;
            let mut acc = 0.0;
            let mut n = 0usize;
            for k in 2 * ck..(2 * ck + 2).min(fd[2]) {
                for j in 2 * cj..(2 * cj + 2).min(fd[1]) {
                    for i in 2 * ci..(2 * ci + 2).min(fd[0]) {
                        let v = smooth[i + fd[0] * (j + fd[1] * k)];
                        let base = *first.get_or_insert(v);
                        acc += v - base;
                        n += 1;
                    }
                }
            }
            first.unwrap_or(0.0) + acc / n as f64
        })
        .collect();
    Ok(ScalarVolume::from_parts(coarse, out))
}

/// Successive `downsample2` results: index 0 is the input, the last entry
/// the coarsest level.
pub fn pyramid(vol: &ScalarVolume, levels: usize) -> Result<Vec<ScalarVolume>> {
    let mut out = vec![vol.clone()];
    for _ in 1..levels {
        let next = downsample2(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

/// Grid pyramid matching [`pyramid`].
pub fn grid_pyramid(grid: &ImageGrid, levels: usize) -> Result<Vec<ImageGrid>> {
    let mut out = vec![grid.clone()];
    for _ in 1..levels {
        let next = out.last().unwrap().downsampled()?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn grid(d: [usize; 3]) -> ImageGrid {
        ImageGrid::axis_aligned(d, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn downsample_constant_is_exact() {
        let v = ScalarVolume::filled(grid([9, 8, 7]), 0.1);
        let d = downsample2(&v).unwrap();
        assert_eq!(d.grid().dims(), [5, 4, 4]);
        assert!(d.values().iter().all(|&x| x == 0.1));
    }

    #[test]
    fn full_collapse_is_block_mean() {
        let v = ScalarVolume::new(grid([2, 2, 2]), (0..8).map(f64::from).collect()).unwrap();
        let d = downsample2(&v).unwrap();
        assert_eq!(d.grid().dims(), [1, 1, 1]);
        assert!((d.values()[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn twice_on_eight_cubed() {
        let v = ScalarVolume::filled(grid([8, 8, 8]), 1.0);
        let d = downsample2(&downsample2(&v).unwrap()).unwrap();
        assert_eq!(d.grid().dims(), [2, 2, 2]);
        assert_eq!(d.grid().spacing(), Vec3::repeat(4.0));
        // extent preserved within one coarse voxel
        let fine_center = v.grid().center();
        assert!((d.grid().center() - fine_center).norm() < 1e-12);
    }

    #[test]
    fn degenerate_axis_rejected() {
        let v = ScalarVolume::filled(grid([1, 4, 4]), 1.0);
        assert!(matches!(downsample2(&v), Err(Error::DegenerateAxis { axis: 0, .. })));
    }

    #[test]
    fn smoothing_preserves_constants_and_identity() {
        let v = ScalarVolume::filled(grid([7, 6, 5]), 0.3);
        assert_eq!(gaussian_smooth(&v, 2.5).unwrap(), v);
        let r = ScalarVolume::new(grid([3, 3, 3]), (0..27).map(|i| (i as f64 * 0.77).sin()).collect()).unwrap();
        let s = gaussian_smooth(&r, 0.0).unwrap();
        assert!(r.values().iter().zip(s.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn impulse_response_center() {
        let n = 21;
        let mut values = vec![0.0; n * n * n];
        let g = grid([n, n, n]);
        values[g.offset(10, 10, 10)] = 1.0;
        let v = ScalarVolume::new(g.clone(), values).unwrap();
        let s = gaussian_smooth(&v, 2.0).unwrap();
        // independent per-axis normalized kernel center
        let w: Vec<f64> = (-6i32..=6).map(|d| (-(d as f64).powi(2) / 8.0).exp()).collect();
        let c = 1.0 / w.iter().sum::<f64>();
        assert!((s.values()[g.offset(10, 10, 10)] - c * c * c).abs() < 1e-12);
    }
}
