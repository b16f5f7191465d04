//! Stationary velocity fields and their group exponential.

use rayon::prelude::*;

use super::bspline::BSplineLattice;
use super::field::{corners_with_grad, sample_vectors, DisplacementField};
use crate::error::Result;
use crate::volume::ImageGrid;
use crate::{Mat3, Vec3};

/// Upper bound on scaling-and-squaring steps.
pub const MAX_SQUARINGS: u32 = 12;

/// Largest per-step displacement, as a fraction of the smallest voxel side.
const STEP_FRACTION: f64 = 0.4;

/// A stationary velocity `v(x)` parameterized by a cubic B-spline lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub lattice: BSplineLattice,
}

impl VelocityField {
    pub fn new(lattice: BSplineLattice) -> Self {
        Self { lattice }
    }

    /// Zero velocity on a lattice covering `grid`.
    pub fn zeros(grid: &ImageGrid, control_spacing: Vec3) -> Result<Self> {
        Ok(Self { lattice: BSplineLattice::covering(grid, control_spacing)? })
    }

    pub fn evaluate(&self, p: &Vec3) -> Vec3 {
        self.lattice.evaluate(p)
    }

    pub fn negated(&self) -> Self {
        let coeffs = self.lattice.coeffs().iter().map(|c| -c).collect();
        Self { lattice: self.lattice.with_coeffs(coeffs) }
    }
}

/// Number of squarings so that `max_norm / 2^N < 0.4 · min_spacing`.
pub fn squaring_steps(max_norm: f64, min_spacing: f64) -> u32 {
    let limit = STEP_FRACTION * min_spacing;
    let mut n = 0;
    while max_norm / f64::powi(2.0, n as i32) >= limit {
        if n == MAX_SQUARINGS {
            log::warn!("velocity of {max_norm:.3} mm needs more than {MAX_SQUARINGS} squarings; capping");
            return n;
        }
        n += 1;
    }
    n
}

/// Intermediate fields of one exponentiation, kept for the reverse pass.
pub(crate) struct ExpTape {
    grid: ImageGrid,
    /// `u_0 … u_{N-1}`; `u_{k+1} = u_k ∘ u_k`.
    steps: Vec<Vec<Vec3>>,
    scale: f64,
}

/// `exp(v)` as a displacement on `grid`, by scaling and squaring.
pub fn exp_velocity(v: &VelocityField, grid: &ImageGrid) -> DisplacementField {
    exp_with_tape(v, grid, false).0
}

pub(crate) fn exp_with_tape(v: &VelocityField, grid: &ImageGrid, record: bool) -> (DisplacementField, Option<ExpTape>) {
    let sampled = v.lattice.sample_on_grid(grid);
    let max_norm = sampled.iter().map(|u| u.norm()).fold(0.0, f64::max);
    let n = squaring_steps(max_norm, grid.min_spacing());
    let scale = f64::powi(2.0, -(n as i32));
    let mut u: Vec<Vec3> = sampled.into_iter().map(|x| x * scale).collect();
    let mut steps = Vec::new();
    let dims = grid.dims();
    for _ in 0..n {
        let next: Vec<Vec3> = (0..grid.len())
            .into_par_iter()
            .map(|o| {
                let ci = grid.index_from_world(&(grid.voxel_center(o) + u[o]));
                u[o] + sample_vectors(&u, dims, &ci)
            })
            .collect();
        if record {
            steps.push(std::mem::replace(&mut u, next));
        } else {
            u = next;
        }
    }
    let field = DisplacementField::from_parts(grid.clone(), u);
    let tape = record.then(|| ExpTape { grid: grid.clone(), steps, scale });
    (field, tape)
}

impl ExpTape {
    /// Pulls `∂L/∂u_N` (one vector per voxel) back to the lattice
    /// coefficients of `v`, differentiating every squaring step exactly.
    pub(crate) fn backward(&self, lattice: &BSplineLattice, grad: &[Vec3]) -> Vec<Vec3> {
        let grid = &self.grid;
        let dims = grid.dims();
        let w2i: Mat3 = *grid.world_to_index_matrix();
        let mut lambda = grad.to_vec();
        for u in self.steps.iter().rev() {
            // direct and position-dependence terms, per voxel
            let local: Vec<(Vec3, [usize; 8], [f64; 8])> = (0..grid.len())
                .into_par_iter()
                .map(|o| {
                    let ci = grid.index_from_world(&(grid.voxel_center(o) + u[o]));
                    let (off, w, dw) = corners_with_grad(dims, &ci);
                    let mut g_idx = Mat3::zeros();
                    for n in 0..8 {
                        g_idx += u[off[n]] * dw[n].transpose();
                    }
                    let jac = g_idx * w2i;
                    let l = lambda[o];
                    (l + jac.transpose() * l, off, w)
                })
                .collect();
            let mut next: Vec<Vec3> = local.iter().map(|(d, _, _)| *d).collect();
            // scatter into the interpolation corners, in voxel order
            for (o, (_, off, w)) in local.iter().enumerate() {
                let l = lambda[o];
                for n in 0..8 {
                    next[off[n]] += l * w[n];
                }
            }
            lambda = next;
        }
        let scale = self.scale;
        lattice.adjoint_on_grid(grid, &lambda).into_iter().map(|g| g * scale).collect()
    }
}
