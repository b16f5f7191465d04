//! Twelve-parameter affine registration, coarse to fine.

use rayon::prelude::*;

use super::config::RegConfig;
use super::metric;
use super::optimizer::{descend, Settings, StopReason};
use super::Levels;
use crate::error::Result;
use crate::transform::AffineTransform;
use crate::volume::{Boundary, Mask, ScalarVolume};
use crate::{Mat3, Vec3};

#[derive(Clone, Debug)]
pub struct AffineResult {
    pub affine: AffineTransform,
    /// Accepted-step costs per level, coarsest first.
    pub trace: Vec<Vec<f64>>,
    pub converged: bool,
}

/// Parameters: `R·B` row-major then `τ`, for `x ↦ B (x - c) + c + τ`.
struct Param {
    center: Vec3,
    radius: f64,
}

impl Param {
    fn to_affine(&self, p: &[f64]) -> AffineTransform {
        let b = Mat3::from_row_slice(&p[..9]) / self.radius;
        let tau = Vec3::new(p[9], p[10], p[11]);
        AffineTransform { matrix: b, translation: self.center - b * self.center + tau }
    }

    fn from_affine(&self, a: &AffineTransform) -> Vec<f64> {
        let mut p: Vec<f64> = (0..9).map(|i| a.matrix[(i / 3, i % 3)] * self.radius).collect();
        let tau = a.apply(&self.center) - self.center;
        p.extend(tau.iter());
        p
    }
}

/// Metric of `M ∘ A` against `F` and, optionally, its gradient in
/// parameter space.
fn evaluate(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    offsets: &[usize],
    cfg: &RegConfig,
    param: &Param,
    p: &[f64],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let a = param.to_affine(p);
    let grid = fixed.grid();
    let samples: Vec<(f64, Vec3)> = (0..grid.len())
        .into_par_iter()
        .map(|o| moving.sample_with_gradient(&a.apply(&grid.voxel_center(o)), Boundary::Zero))
        .collect();
    let warped: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (cost, dw) = metric::evaluate(cfg.metric, fixed.values(), &warped, offsets)?;
    if !want_grad {
        return Ok((cost, None));
    }
    let mut g = vec![0.0; 12];
    // fixed-order accumulation over the mask
    let chunks: Vec<[f64; 12]> = offsets
        .par_chunks(crate::par::CHUNK)
        .map(|chunk| {
            let mut acc = [0.0; 12];
            for &o in chunk {
                let gi = samples[o].1 * dw[o];
                let r = grid.voxel_center(o) - param.center;
                for i in 0..3 {
                    for j in 0..3 {
                        acc[3 * i + j] += gi[i] * r[j] / param.radius;
                    }
                    acc[9 + i] += gi[i];
                }
            }
            acc
        })
        .collect();
    for c in chunks {
        for k in 0..12 {
            g[k] += c[k];
        }
    }
    Ok((cost, Some(g)))
}

/// Gradient-descent affine registration of `moving` onto `fixed` starting
/// from `init`, returning the pull-back map `x_fixed ↦ x_moving`.
pub fn register_affine(fixed: &ScalarVolume, moving: &ScalarVolume, init: &AffineTransform, cfg: &RegConfig, mask: Option<&Mask>) -> Result<AffineResult> {
    cfg.validate()?;
    let levels = Levels::build(fixed, moving, mask, cfg.levels)?;
    let ext = fixed.grid().extent();
    let param = Param { center: fixed.grid().center(), radius: ((ext.x + ext.y + ext.z) / 6.0).max(1.0) };
    let mut p = param.from_affine(init);
    let mut trace = Vec::new();
    let mut converged = true;
    for lvl in (0..levels.len()).rev() {
        let (f, m, offsets) = levels.get(lvl);
        let h = f.grid().min_spacing();
        let settings = Settings {
            max_iters: cfg.affine_max_iters,
            step_init: cfg.step_init * h,
            step_min: 1e-4 * h,
            step_max: 8.0 * cfg.step_init * h,
            shrink: cfg.step_shrink,
            grow: 2.0,
            armijo: cfg.armijo,
            grad_tol: cfg.grad_tol,
            memory: cfg.lbfgs_memory,
        };
        let out = descend(p, lvl, &settings, |x, g| evaluate(f, m, offsets, cfg, &param, x, g))?;
        converged &= out.stop != StopReason::MaxIterations;
        p = out.x;
        trace.push(out.trace);
    }
    let affine = param.to_affine(&p);
    AffineTransform::new(affine.matrix, affine.translation).map(|affine| AffineResult { affine, trace, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ImageGrid;

    fn blob_image(g: &ImageGrid, a: &AffineTransform) -> ScalarVolume {
        ScalarVolume::from_fn(g.clone(), |p| {
            let q = a.apply(&p);
            let e = (q.x / 18.0).powi(2) + (q.y / 13.0).powi(2) + (q.z / 15.0).powi(2);
            let inner = ((q - Vec3::new(6.0, 3.0, -2.0)).norm() / 5.0).powi(2);
            (-e * e * 2.0).exp() * 0.8 + 0.4 * (-inner).exp()
        })
    }

    fn grid() -> ImageGrid {
        ImageGrid::axis_aligned([32, 28, 30], [2.0; 3], [-31.0, -27.0, -29.0]).unwrap()
    }

    #[test]
    fn parameter_round_trip() {
        let param = Param { center: Vec3::new(1.0, 2.0, 3.0), radius: 20.0 };
        let a = AffineTransform::new(Mat3::new(1.1, 0.1, 0.0, -0.05, 0.9, 0.02, 0.0, 0.03, 1.0), Vec3::new(4.0, -1.0, 2.0)).unwrap();
        let b = param.to_affine(&param.from_affine(&a));
        assert!((a.matrix - b.matrix).abs().max() < 1e-14 && (a.translation - b.translation).norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = grid();
        let f = blob_image(&g, &AffineTransform::identity());
        let m = blob_image(&g, &AffineTransform::from_translation(Vec3::new(1.3, -0.7, 0.4)));
        let param = Param { center: g.center(), radius: 15.0 };
        let offsets: Vec<usize> = (0..g.len()).collect();
        let cfg = RegConfig::default();
        let a0 = AffineTransform::new(Mat3::new(1.02, 0.01, 0.0, 0.0, 0.98, 0.01, 0.02, 0.0, 1.01), Vec3::new(0.3, 0.1, -0.2)).unwrap();
        let p = param.from_affine(&a0);
        let (_, grad) = evaluate(&f, &m, &offsets, &cfg, &param, &p, true).unwrap();
        let grad = grad.unwrap();
        for k in 0..12 {
            let h = 1e-5;
            let mut pp = p.clone();
            pp[k] += h;
            let mut pm = p.clone();
            pm[k] -= h;
            let fd = (evaluate(&f, &m, &offsets, &cfg, &param, &pp, false).unwrap().0 - evaluate(&f, &m, &offsets, &cfg, &param, &pm, false).unwrap().0) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-3 * fd.abs().max(1e-7), "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn identity_and_translation_recovery() {
        let g = grid();
        let f = blob_image(&g, &AffineTransform::identity());
        let cfg = RegConfig::default();
        let r = register_affine(&f, &f, &AffineTransform::identity(), &cfg, None).unwrap();
        let corners = [Vec3::new(-31.0, -27.0, -29.0), Vec3::new(31.0, 27.0, 29.0), Vec3::new(-31.0, 27.0, 0.0)];
        assert!(r.affine.max_deviation_from_identity(&corners) < 0.2);
        // moving(y) = fixed(y - t): pull-back is +t
        let t = Vec3::new(16.0, 0.0, 0.0);
        let m = blob_image(&g, &AffineTransform::from_translation(-t));
        let r = register_affine(&f, &m, &AffineTransform::identity(), &cfg, None).unwrap();
        assert!((r.affine.translation - t).norm() < 1.0, "{:?}", r.affine);
        assert!(r.trace.iter().all(|l| l.windows(2).all(|w| w[1] <= w[0] + 1e-12)));
    }

    #[test]
    fn scale_recovery() {
        let g = grid();
        let f = blob_image(&g, &AffineTransform::identity());
        // moving(y) = fixed(y / 1.1): the pull-back scales by 1.1
        let m = blob_image(&g, &AffineTransform::new(Mat3::identity() / 1.1, Vec3::zeros()).unwrap());
        let r = register_affine(&f, &m, &AffineTransform::identity(), &RegConfig::default(), None).unwrap();
        let scale = r.affine.matrix.determinant().cbrt();
        assert!((scale - 1.1).abs() < 0.011, "{:?}", r.affine);
    }
}
