//! Image dissimilarities with their derivative per warped voxel.

use super::config::Metric;
use crate::error::{Error, Result};
use crate::par;
use crate::volume::{Mask, ScalarVolume};

/// Cost and `∂D/∂warped` over the voxels `offsets`; the derivative vector
/// has one entry per grid voxel (zero off the mask).
pub(crate) fn evaluate(metric: Metric, fixed: &[f64], warped: &[f64], offsets: &[usize]) -> Result<(f64, Vec<f64>)> {
    if offsets.is_empty() {
        return Err(Error::Empty("metric mask"));
    }
    match metric {
        Metric::Ssd => Ok(ssd(fixed, warped, offsets)),
        Metric::Ncc => ncc(fixed, warped, offsets),
    }
}

/// Cost only; identical arithmetic to [`evaluate`].
#[cfg(test)]
pub(crate) fn cost(metric: Metric, fixed: &[f64], warped: &[f64], offsets: &[usize]) -> Result<f64> {
    evaluate(metric, fixed, warped, offsets).map(|r| r.0)
}

fn ssd(fixed: &[f64], warped: &[f64], offsets: &[usize]) -> (f64, Vec<f64>) {
    let n = offsets.len() as f64;
    let c = par::sum_by(offsets.len(), |k| {
        let d = warped[offsets[k]] - fixed[offsets[k]];
        d * d
    }) / n;
    let mut g = vec![0.0; fixed.len()];
    for &o in offsets {
        g[o] = 2.0 * (warped[o] - fixed[o]) / n;
    }
    (c, g)
}

fn ncc(fixed: &[f64], warped: &[f64], offsets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = offsets.len() as f64;
    let mf = par::sum_by(offsets.len(), |k| fixed[offsets[k]]) / n;
    let mw = par::sum_by(offsets.len(), |k| warped[offsets[k]]) / n;
    let sff = par::sum_by(offsets.len(), |k| (fixed[offsets[k]] - mf).powi(2));
    let sww = par::sum_by(offsets.len(), |k| (warped[offsets[k]] - mw).powi(2));
    let sfw = par::sum_by(offsets.len(), |k| (fixed[offsets[k]] - mf) * (warped[offsets[k]] - mw));
    // rounding leaves a tiny positive sum for constant images
    let negligible = |ss: f64, mean: f64| !(ss > n * 1e-20 * (1.0 + mean * mean));
    if negligible(sff, mf) {
        return Err(Error::ZeroVariance("fixed image over the metric mask"));
    }
    if negligible(sww, mw) {
        return Err(Error::ZeroVariance("warped image over the metric mask"));
    }
    let den = (sff * sww).sqrt();
    let rho = sfw / den;
    let mut g = vec![0.0; fixed.len()];
    for &o in offsets {
        // ∂ρ/∂w_i; the mean terms cancel because Σ(f - f̄) = Σ(w - w̄) = 0
        let drho = (fixed[o] - mf) / den - rho * (warped[o] - mw) / sww;
        g[o] = -2.0 * rho * drho;
    }
    Ok((1.0 - rho * rho, g))
}

fn offsets_for(fixed: &ScalarVolume, warped: &ScalarVolume, mask: Option<&Mask>) -> Result<Vec<usize>> {
    fixed.grid().ensure_same(warped.grid(), "fixed and warped images")?;
    match mask {
        Some(m) => {
            fixed.grid().ensure_same(m.grid(), "image and metric mask")?;
            Ok(m.set_offsets())
        }
        None => Ok((0..fixed.grid().len()).collect()),
    }
}

/// Mean squared difference over `mask` (all voxels when `None`) and its
/// derivative `2 (warped - F) / |mask|`.
pub fn metric_ssd(fixed: &ScalarVolume, warped: &ScalarVolume, mask: Option<&Mask>) -> Result<(f64, Vec<f64>)> {
    let offsets = offsets_for(fixed, warped, mask)?;
    evaluate(Metric::Ssd, fixed.values(), warped.values(), &offsets)
}

/// `1 - ρ²` for the global correlation coefficient ρ over `mask`, and its
/// derivative.
pub fn metric_ncc(fixed: &ScalarVolume, warped: &ScalarVolume, mask: Option<&Mask>) -> Result<(f64, Vec<f64>)> {
    let offsets = offsets_for(fixed, warped, mask)?;
    evaluate(Metric::Ncc, fixed.values(), warped.values(), &offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ImageGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> ScalarVolume {
        let g = ImageGrid::axis_aligned([n, n, n], [1.0; 3], [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarVolume::new(g.clone(), (0..g.len()).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn ssd_cases() {
        let a = random(5, 1);
        assert_eq!(metric_ssd(&a, &a, None).unwrap().0, 0.0);
        let z = ScalarVolume::filled(a.grid().clone(), 0.0);
        let o = ScalarVolume::filled(a.grid().clone(), 1.0);
        assert_eq!(metric_ssd(&z, &o, None).unwrap().0, 1.0);
        let b = random(5, 2);
        let brute: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 125.0;
        assert!((metric_ssd(&a, &b, None).unwrap().0 - brute).abs() < 1e-10);
        assert!(metric_ssd(&a, &b, Some(&Mask::empty(a.grid().clone()))).is_err());
    }

    #[test]
    fn ncc_cases() {
        let a = random(6, 3);
        let lin = a.map(|v| 2.5 * v - 1.0).unwrap();
        assert!(metric_ncc(&a, &lin, None).unwrap().0.abs() < 1e-12);
        let big_a = random(64, 4);
        let big_b = random(64, 5);
        assert!((metric_ncc(&big_a, &big_b, None).unwrap().0 - 1.0).abs() < 0.05);
        let flat = ScalarVolume::filled(a.grid().clone(), 0.3);
        assert!(matches!(metric_ncc(&a, &flat, None), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = random(5, 6);
        let w = random(5, 7);
        let mask = Mask::new(f.grid().clone(), (0..125).map(|i| i % 3 != 0).collect()).unwrap();
        for metric in [Metric::Ssd, Metric::Ncc] {
            let offsets = mask.set_offsets();
            let (_, g) = evaluate(metric, f.values(), w.values(), &offsets).unwrap();
            for i in [1usize, 2, 40, 77, 124] {
                let h = 1e-6;
                let mut wp = w.values().to_vec();
                wp[i] += h;
                let mut wm = w.values().to_vec();
                wm[i] -= h;
                let fd = (cost(metric, f.values(), &wp, &offsets).unwrap() - cost(metric, f.values(), &wm, &offsets).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-6), "{metric:?} {i}: {fd} vs {}", g[i]);
            }
        }
    }
}
