//! Multi-resolution diffeomorphic registration with a B-spline velocity.

use rayon::prelude::*;

use super::bending::bending_energy;
use super::config::RegConfig;
use super::metric;
use super::optimizer::{descend, Settings, StopReason};
use super::Levels;
use crate::error::Result;
use crate::transform::{exp_velocity, exp_with_tape, AffineTransform, BSplineLattice, DisplacementField, VelocityField};
use crate::volume::{Boundary, Mask, ScalarVolume};
use crate::Vec3;

#[derive(Clone, Debug)]
pub struct LevelTrace {
    /// Pyramid level, 0 being the full-resolution grid.
    pub level: usize,
    pub control_spacing: Vec3,
    /// Total cost at the start and after every accepted step.
    pub costs: Vec<f64>,
    pub stop: StopReason,
}

#[derive(Clone, Debug)]
pub struct RegResult {
    pub affine: AffineTransform,
    /// Velocity on the finest lattice.
    pub velocity: VelocityField,
    /// `A ∘ exp(v)` as one displacement on the fixed grid.
    pub total_field: DisplacementField,
    pub trace: Vec<LevelTrace>,
    pub converged: bool,
    /// The deformable stage ended worse than the affine one and was dropped.
    pub reverted_to_affine: bool,
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|c| [c.x, c.y, c.z]).collect()
}

fn unflatten(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// `D(F, M ∘ A ∘ exp(v)) + λ·bending(v)` on the grid of `fixed`, with the
/// exact gradient with respect to the lattice coefficients on request.
#[allow(clippy::too_many_arguments)]
pub(crate) fn level_cost(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    offsets: &[usize],
    affine: &AffineTransform,
    lattice: &BSplineLattice,
    cfg: &RegConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<Vec3>>)> {
    let grid = fixed.grid();
    let velocity = VelocityField::new(lattice.clone());
    let (u, tape) = exp_with_tape(&velocity, grid, want_grad);
    let samples: Vec<(f64, Vec3)> = (0..grid.len())
        .into_par_iter()
        .map(|o| moving.sample_with_gradient(&affine.apply(&(grid.voxel_center(o) + u.vectors()[o])), Boundary::Zero))
        .collect();
    let warped: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (d, dw) = metric::evaluate(cfg.metric, fixed.values(), &warped, offsets)?;
    let (e, ge) = if cfg.lambda > 0.0 { bending_energy(lattice) } else { (0.0, Vec::new()) };
    let cost = d + cfg.lambda * e;
    if !want_grad {
        return Ok((cost, None));
    }
    let at = affine.matrix.transpose();
    let du: Vec<Vec3> = samples.par_iter().zip(&dw).map(|(s, &w)| if w == 0.0 { Vec3::zeros() } else { at * s.1 * w }).collect();
    let mut g = tape.expect("recorded").backward(lattice, &du);
    if cfg.lambda > 0.0 {
        for (a, b) in g.iter_mut().zip(&ge) {
            *a += b * cfg.lambda;
        }
    }
    Ok((cost, Some(g)))
}

/// The objective exactly as optimized, on the full-resolution grids.
pub fn total_cost(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    affine: &AffineTransform,
    velocity: &VelocityField,
    cfg: &RegConfig,
    mask: Option<&Mask>,
) -> Result<f64> {
    let offsets = super::mask_offsets(fixed, mask)?;
    level_cost(fixed, moving, &offsets, affine, &velocity.lattice, cfg, false).map(|r| r.0)
}

/// [`total_cost`] with its gradient with respect to the lattice coefficients.
pub fn total_cost_and_gradient(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    affine: &AffineTransform,
    velocity: &VelocityField,
    cfg: &RegConfig,
    mask: Option<&Mask>,
) -> Result<(f64, Vec<Vec3>)> {
    let offsets = super::mask_offsets(fixed, mask)?;
    let (c, g) = level_cost(fixed, moving, &offsets, affine, &velocity.lattice, cfg, true)?;
    Ok((c, g.expect("requested")))
}

/// Metric alone for a given velocity, on the full-resolution grids.
fn metric_only(fixed: &ScalarVolume, moving: &ScalarVolume, offsets: &[usize], affine: &AffineTransform, velocity: &VelocityField, cfg: &RegConfig) -> Result<f64> {
    let cfg = RegConfig { lambda: 0.0, ..cfg.clone() };
    level_cost(fixed, moving, offsets, affine, &velocity.lattice, &cfg, false).map(|r| r.0)
}

/// Dense `A ∘ exp(v)` on the grid of `fixed`.
pub fn compose_total(affine: &AffineTransform, velocity: &VelocityField, grid: &crate::volume::ImageGrid) -> DisplacementField {
    let u = exp_velocity(velocity, grid);
    let vectors = (0..grid.len())
        .into_par_iter()
        .map(|o| {
            let x = grid.voxel_center(o);
            affine.apply(&(x + u.vectors()[o])) - x
        })
        .collect();
    DisplacementField::from_parts(grid.clone(), vectors)
}

/// Deformable registration after an affine stage: per pyramid level,
/// coarsest first, gradient descent on the velocity lattice, which is then
/// subdivided for the next level.
pub fn register_ffd(fixed: &ScalarVolume, moving: &ScalarVolume, affine: &AffineTransform, cfg: &RegConfig, mask: Option<&Mask>) -> Result<RegResult> {
    cfg.validate()?;
    let levels = Levels::build(fixed, moving, mask, cfg.levels)?;
    let fine = fixed.grid();
    let spacing0 = fine.spacing() * cfg.control_spacing_schedule[0];
    let mut lattice = BSplineLattice::covering(fine, spacing0)?;
    let mut trace = Vec::new();
    let mut converged = true;
    for (step, lvl) in (0..levels.len()).rev().enumerate() {
        if step > 0 {
            lattice = lattice.refined(fine)?;
        }
        let (f, m, offsets) = levels.get(lvl);
        let h = f.grid().min_spacing();
        let settings = Settings {
            max_iters: cfg.max_iters,
            step_init: cfg.step_init * h,
            step_min: 1e-3 * h,
            step_max: 4.0 * cfg.step_init * h,
            shrink: cfg.step_shrink,
            grow: 2.0,
            armijo: cfg.armijo,
            grad_tol: cfg.grad_tol,
            memory: cfg.lbfgs_memory,
        };
        let template = lattice.clone();
        let out = descend(flatten(lattice.coeffs()), lvl, &settings, |x, want| {
            let l = template.with_coeffs(unflatten(x));
            level_cost(f, m, offsets, affine, &l, cfg, want).map(|(c, g)| (c, g.map(|g| flatten(&g))))
        })?;
        log::debug!("level {lvl}: {} steps, cost {:.6e} -> {:.6e}, {:?}", out.trace.len() - 1, out.trace[0], out.trace.last().unwrap(), out.stop);
        converged &= out.stop != StopReason::MaxIterations;
        lattice = template.with_coeffs(unflatten(&out.x));
        trace.push(LevelTrace { level: lvl, control_spacing: lattice.spacing(), costs: out.trace, stop: out.stop });
    }
    let mut velocity = VelocityField::new(lattice);
    let (f0, m0, off0) = levels.get(0);
    let zero = VelocityField::new(velocity.lattice.with_coeffs(vec![Vec3::zeros(); velocity.lattice.len()]));
    let affine_only = metric_only(f0, m0, off0, affine, &zero, cfg)?;
    let deformed = metric_only(f0, m0, off0, affine, &velocity, cfg)?;
    let mut reverted = false;
    if deformed > affine_only {
        log::warn!("deformable stage raised the metric ({affine_only:.6e} -> {deformed:.6e}); keeping the affine result");
        velocity = zero;
        reverted = true;
    }
    let total_field = compose_total(affine, &velocity, fine);
    Ok(RegResult { affine: *affine, velocity, total_field, trace, converged, reverted_to_affine: reverted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ImageGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> ImageGrid {
        let h = (n as f64 - 1.0) * 2.0 / 2.0;
        ImageGrid::axis_aligned([n, n, n], [2.0; 3], [-h, -h, -h]).unwrap()
    }

    fn image(g: &ImageGrid) -> ScalarVolume {
        ScalarVolume::from_fn(g.clone(), |p| {
            let r = (p.x / 10.0).powi(2) + (p.y / 8.0).powi(2) + (p.z / 9.0).powi(2);
            (-r).exp() + 0.3 * (-((p - Vec3::new(4.0, -3.0, 2.0)).norm_squared() / 16.0)).exp()
        })
    }

    fn random_lattice(g: &ImageGrid, amp: f64) -> BSplineLattice {
        let mut l = BSplineLattice::covering(g, Vec3::repeat(8.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in l.coeffs_mut() {
            *c = Vec3::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(-amp..amp));
        }
        l
    }

    fn check_gradient(amp: f64, tol: f64) {
        let g = grid(16);
        let f = image(&g);
        let m = ScalarVolume::from_fn(g.clone(), |p| image(&g).sample(&(p + Vec3::new(1.0, 0.5, -0.5)), Boundary::Zero));
        let l = random_lattice(&g, amp);
        let a = AffineTransform::new(crate::Mat3::identity() * 1.01, Vec3::new(0.2, 0.0, 0.1)).unwrap();
        let offsets: Vec<usize> = (0..g.len()).collect();
        let cfg = RegConfig { lambda: 0.01, ..Default::default() };
        let (_, grad) = level_cost(&f, &m, &offsets, &a, &l, &cfg, true).unwrap();
        let grad = grad.unwrap();
        let d = l.dims();
        for (i, j, k, comp) in [(3, 3, 3, 0), (4, 5, 3, 1), (2, 3, 4, 2), (5, 4, 4, 1)] {
            let o = l.offset(i, j, k);
            let h = 1e-6;
            let mut lp = l.clone();
            lp.coeffs_mut()[o][comp] += h;
            let mut lm = l.clone();
            lm.coeffs_mut()[o][comp] -= h;
            let fd = (level_cost(&f, &m, &offsets, &a, &lp, &cfg, false).unwrap().0 - level_cost(&f, &m, &offsets, &a, &lm, &cfg, false).unwrap().0) / (2.0 * h);
            let an = grad[o][comp];
            assert!((fd - an).abs() <= tol * fd.abs().max(1e-9), "{i} {j} {k} {comp}: fd {fd} an {an} ({d:?})");
        }
    }

    #[test]
    fn gradient_exact_without_squaring() {
        // max velocity under 0.4 voxel: no squaring steps
        check_gradient(0.3, 1e-5);
    }

    #[test]
    fn gradient_exact_with_squaring() {
        check_gradient(3.0, 1e-3);
    }

    #[test]
    fn total_cost_recomposes() {
        let g = grid(12);
        let f = image(&g);
        let m = image(&g).map(|v| v * 0.9).unwrap();
        let v = VelocityField::new(random_lattice(&g, 1.0));
        let a = AffineTransform::identity();
        let cfg = RegConfig { lambda: 0.5, ..Default::default() };
        let total = total_cost(&f, &m, &a, &v, &cfg, None).unwrap();
        let warped = crate::transform::warp_scalar(&m, &crate::transform::TransformChain::affine_then_field(a, exp_velocity(&v, &g)), &g).unwrap();
        let d = metric::metric_ssd(&f, &warped, None).unwrap().0;
        let e = bending_energy(&v.lattice).0;
        assert!((total - (d + 0.5 * e)).abs() < 1e-12);
        let cfg0 = RegConfig { lambda: 0.0, ..Default::default() };
        assert!((total_cost(&f, &m, &a, &v, &cfg0, None).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn identical_images_stay_put() {
        let g = grid(24);
        let f = image(&g);
        let cfg = RegConfig { levels: 2, control_spacing_schedule: vec![8.0, 4.0], max_iters: 20, ..Default::default() };
        let r = register_ffd(&f, &f, &AffineTransform::identity(), &cfg, None).unwrap();
        assert!(r.total_field.max_norm_voxels() < 0.2);
        assert_eq!(r.total_field.folding_ratio(None).unwrap(), 0.0);
    }
}
