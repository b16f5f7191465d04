//! Dense displacement fields on an image grid.

use rayon::prelude::*;

use super::affine::AffineTransform;
use crate::error::{Error, Result};
use crate::volume::{ImageGrid, Mask, ScalarVolume};
use crate::{Mat3, Vec3};

/// Eight clamped trilinear corners at continuous index `ci`, with each
/// weight's derivative with respect to `ci`. Derivatives along clamped axes
/// are zero.
#[inline]
pub(crate) fn corners_with_grad(dims: [usize; 3], ci: &Vec3) -> ([usize; 8], [f64; 8], [Vec3; 8]) {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut f = [0.0; 3];
    let mut live = [false; 3];
    for a in 0..3 {
        let n = dims[a];
        let c = ci[a];
        if n > 1 && c >= 0.0 && c < (n - 1) as f64 {
            let b = c.floor();
            lo[a] = b as usize;
            hi[a] = lo[a] + 1;
            f[a] = c - b;
            live[a] = true;
        } else if c >= 0.0 || c.is_nan() {
            lo[a] = n - 1;
            hi[a] = n - 1;
        }
    }
    let mut off = [0usize; 8];
    let mut w = [0.0; 8];
    let mut dw = [Vec3::zeros(); 8];
    for n in 0..8 {
        let bit = [n & 1, (n >> 1) & 1, (n >> 2) & 1];
        let idx = [0, 1, 2].map(|a| if bit[a] == 1 { hi[a] } else { lo[a] });
        off[n] = idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]);
        let t = [0, 1, 2].map(|a| if bit[a] == 1 { f[a] } else { 1.0 - f[a] });
        let s = [0, 1, 2].map(|a| if bit[a] == 1 { 1.0 } else { -1.0 });
        w[n] = t[0] * t[1] * t[2];
        dw[n] = Vec3::new(
            if live[0] { s[0] * t[1] * t[2] } else { 0.0 },
            if live[1] { t[0] * s[1] * t[2] } else { 0.0 },
            if live[2] { t[0] * t[1] * s[2] } else { 0.0 },
        );
    }
    (off, w, dw)
}

/// Clamped trilinear interpolation of a vector buffer at continuous index `ci`.
#[inline]
pub(crate) fn sample_vectors(vectors: &[Vec3], dims: [usize; 3], ci: &Vec3) -> Vec3 {
    let (off, w, _) = corners_with_grad(dims, ci);
    (0..8).fold(Vec3::zeros(), |acc, n| acc + vectors[off[n]] * w[n])
}

/// A transform `x ↦ x + u(x)` stored as one world-mm vector per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    grid: ImageGrid,
    vectors: Vec<Vec3>,
}

/// Outcome of [`DisplacementField::invert`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionReport {
    pub iterations: usize,
    pub converged: bool,
    /// Largest `‖(d ∘ d⁻¹)(x) - x‖` over the grid, in voxels.
    pub residual_voxels: f64,
}

impl DisplacementField {
    pub fn new(grid: ImageGrid, vectors: Vec<Vec3>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: vectors.len() });
        }
        if let Some(i) = vectors.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, vectors })
    }

    pub(crate) fn from_parts(grid: ImageGrid, vectors: Vec<Vec3>) -> Self {
        debug_assert_eq!(grid.len(), vectors.len());
        Self { grid, vectors }
    }

    pub fn zeros(grid: ImageGrid) -> Self {
        let n = grid.len();
        Self { grid, vectors: vec![Vec3::zeros(); n] }
    }

    /// Displacement of `f` evaluated at every voxel center.
    pub fn from_fn<F>(grid: ImageGrid, f: F) -> Self
    where
        F: Fn(&Vec3) -> Vec3 + Sync,
    {
        let vectors = (0..grid.len()).into_par_iter().map(|o| f(&grid.voxel_center(o))).collect();
        Self { grid, vectors }
    }

    /// Dense version of an affine map: `u(x) = A(x) - x`.
    pub fn from_affine(grid: ImageGrid, a: &AffineTransform) -> Self {
        Self::from_fn(grid, |p| a.apply(p) - p)
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vec3> {
        self.vectors
    }

    /// Displacement at world point `p` (trilinear, clamped to the grid).
    pub fn sample(&self, p: &Vec3) -> Vec3 {
        sample_vectors(&self.vectors, self.grid.dims(), &self.grid.index_from_world(p))
    }

    /// `p + u(p)`.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p + self.sample(p)
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest displacement length expressed in voxels of this grid.
    pub fn max_norm_voxels(&self) -> f64 {
        let s = self.grid.spacing();
        self.vectors.iter().map(|v| v.component_div(&s).norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid.clone(), vectors: self.vectors.iter().map(|v| v * factor).collect() }
    }

    /// `self ∘ inner`: `x + u_in(x) + u_self(x + u_in(x))`.
    pub fn compose(&self, inner: &DisplacementField) -> Result<Self> {
        self.grid.ensure_same(&inner.grid, "displacement composition")?;
        let dims = self.grid.dims();
        let vectors = (0..self.grid.len())
            .into_par_iter()
            .map(|o| {
                let ui = inner.vectors[o];
                let ci = self.grid.index_from_world(&(self.grid.voxel_center(o) + ui));
                ui + sample_vectors(&self.vectors, dims, &ci)
            })
            .collect();
        Ok(Self { grid: self.grid.clone(), vectors })
    }

    /// Fixed-point inversion `w(x) ← -u(x + w(x))`, stopping once the largest
    /// update drops below `tol_voxels` or after `iters` sweeps.
    pub fn invert(&self, iters: usize, tol_voxels: f64) -> (Self, InversionReport) {
        let dims = self.grid.dims();
        let s = self.grid.spacing();
        let mut w: Vec<Vec3> = self.vectors.iter().map(|v| -v).collect();
        let mut report = InversionReport { iterations: 0, converged: false, residual_voxels: f64::INFINITY };
        for it in 0..iters {
            let next: Vec<Vec3> = (0..self.grid.len())
                .into_par_iter()
                .map(|o| {
                    let ci = self.grid.index_from_world(&(self.grid.voxel_center(o) + w[o]));
                    -sample_vectors(&self.vectors, dims, &ci)
                })
                .collect();
            let update = next.iter().zip(&w).map(|(a, b)| (a - b).component_div(&s).norm()).fold(0.0, f64::max);
            w = next;
            report.iterations = it + 1;
            if update < tol_voxels {
                report.converged = true;
                break;
            }
        }
        let inv = Self { grid: self.grid.clone(), vectors: w };
        report.residual_voxels = self.inverse_residual(&inv);
        (inv, report)
    }

    /// Largest `‖(self ∘ inv)(x) - x‖` in voxels.
    pub fn inverse_residual(&self, inv: &DisplacementField) -> f64 {
        self.inverse_residual_in(inv, None)
    }

    /// As [`DisplacementField::inverse_residual`], restricted to `roi` on
    /// the grid of `inv`.
    pub fn inverse_residual_in(&self, inv: &DisplacementField, roi: Option<&Mask>) -> f64 {
        let s = self.grid.spacing();
        let dims = self.grid.dims();
        (0..inv.grid.len())
            .into_par_iter()
            .filter(|&o| roi.is_none_or(|m| m.bits()[o]))
            .map(|o| {
                let y = inv.grid.voxel_center(o) + inv.vectors[o];
                let r = inv.vectors[o] + sample_vectors(&self.vectors, dims, &self.grid.index_from_world(&y));
                r.component_div(&s).norm()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `∂u/∂x` (world) at voxel `o` by central differences, one-sided at
    /// the grid boundary.
    pub fn displacement_gradient(&self, o: usize) -> Mat3 {
        let dims = self.grid.dims();
        let idx = self.grid.coords(o);
        let mut g_idx = Mat3::zeros();
        for a in 0..3 {
            if dims[a] < 2 {
                continue;
            }
            let step = |d: i64| {
                let mut q = idx;
                q[a] = (idx[a] as i64 + d) as usize;
                self.vectors[self.grid.offset(q[0], q[1], q[2])]
            };
            let (plus, minus, h) = if idx[a] == 0 {
                (step(1), self.vectors[o], 1.0)
            } else if idx[a] + 1 == dims[a] {
                (self.vectors[o], step(-1), 1.0)
            } else {
                (step(1), step(-1), 2.0)
            };
            g_idx.set_column(a, &((plus - minus) / h));
        }
        g_idx * self.grid.world_to_index_matrix()
    }

    /// `det(I + ∇u)` at every voxel.
    pub fn jacobian_det(&self) -> ScalarVolume {
        let values = (0..self.grid.len())
            .into_par_iter()
            .map(|o| (Mat3::identity() + self.displacement_gradient(o)).determinant())
            .collect();
        ScalarVolume::from_parts(self.grid.clone(), values)
    }

    /// Fraction of voxels with `det ≤ 0`, over `roi` or, when none is given,
    /// over the voxels away from the grid boundary.
    pub fn folding_ratio(&self, roi: Option<&Mask>) -> Result<f64> {
        let interior;
        let roi = match roi {
            Some(r) => {
                self.grid.ensure_same(r.grid(), "folding roi")?;
                r
            }
            None => {
                interior = Mask::interior(self.grid.clone());
                &interior
            }
        };
        let offsets = roi.set_offsets();
        if offsets.is_empty() {
            return Err(Error::Empty("folding roi"));
        }
        let folded = offsets
            .par_iter()
            .filter(|&&o| (Mat3::identity() + self.displacement_gradient(o)).determinant() <= 0.0)
            .count();
        Ok(folded as f64 / offsets.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ImageGrid {
        ImageGrid::axis_aligned([12, 10, 14], [2.0, 3.0, 2.0], [-11.0, -13.5, -13.0]).unwrap()
    }

    fn smooth(g: &ImageGrid, amp: f64, phase: f64) -> DisplacementField {
        DisplacementField::from_fn(g.clone(), |p| {
            Vec3::new(
                amp * (p.y * 0.11 + phase).sin(),
                amp * (p.z * 0.09 - phase).cos(),
                amp * (p.x * 0.13 + 0.5 * phase).sin(),
            )
        })
    }

    #[test]
    fn corner_derivatives_match_finite_differences() {
        let dims = [4, 5, 6];
        let ci = Vec3::new(1.3, 2.7, 0.4);
        let (_, _, dw) = corners_with_grad(dims, &ci);
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = 1e-6;
            let (_, wp, _) = corners_with_grad(dims, &(ci + e));
            let (_, wm, _) = corners_with_grad(dims, &(ci - e));
            for n in 0..8 {
                assert!(((wp[n] - wm[n]) / 2e-6 - dw[n][a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn compose_identity_elements_and_translations() {
        let g = grid();
        let d = smooth(&g, 1.5, 0.3);
        let z = DisplacementField::zeros(g.clone());
        assert_eq!(d.compose(&z).unwrap(), d);
        let back = z.compose(&d).unwrap();
        assert!(back.vectors().iter().zip(d.vectors()).all(|(a, b)| (a - b).norm() < 1e-12));
        let t1 = DisplacementField::from_fn(g.clone(), |_| Vec3::new(1.0, -2.0, 0.5));
        let t2 = DisplacementField::from_fn(g.clone(), |_| Vec3::new(0.25, 3.0, -1.0));
        let c = t1.compose(&t2).unwrap();
        assert!(c.vectors().iter().all(|v| (v - Vec3::new(1.25, 1.0, -0.5)).norm() < 1e-12));
    }

    #[test]
    fn compose_matches_pointwise_evaluation() {
        let g = grid();
        let a = smooth(&g, 2.0, 0.1);
        let b = smooth(&g, 1.0, 1.7);
        let c = a.compose(&b).unwrap();
        for o in (0..g.len()).step_by(17) {
            let x = g.voxel_center(o);
            let y = b.apply(&x);
            let expected = a.apply(&y) - x;
            assert!((c.vectors()[o] - expected).norm() < 1e-6);
        }
        let other = ImageGrid::axis_aligned([12, 10, 14], [1.0; 3], [0.0; 3]).unwrap();
        assert!(a.compose(&DisplacementField::zeros(other)).is_err());
    }

    #[test]
    fn inversion() {
        let g = grid();
        let (z, rep) = DisplacementField::zeros(g.clone()).invert(10, 1e-6);
        assert!(z.vectors().iter().all(|v| v.norm() == 0.0) && rep.converged);
        let t = DisplacementField::from_fn(g.clone(), |_| Vec3::new(1.0, 2.0, -3.0));
        let (ti, _) = t.invert(20, 1e-9);
        // interior voxels, where the shifted read stays on the grid
        let o = g.offset(6, 5, 7);
        assert!((ti.vectors()[o] + Vec3::new(1.0, 2.0, -3.0)).norm() < 1e-12);
        let d = smooth(&g, 1.5, 0.7);
        let (di, rep) = d.invert(50, 1e-6);
        assert!(rep.converged, "{rep:?}");
        assert!(rep.residual_voxels < 0.1);
        assert!((d.inverse_residual(&di) - rep.residual_voxels).abs() < 1e-15);
    }

    #[test]
    fn jacobians_of_linear_fields() {
        let g = grid();
        assert!(DisplacementField::zeros(g.clone()).jacobian_det().values().iter().all(|&v| v == 1.0));
        let alpha = 0.1;
        let lin = DisplacementField::from_fn(g.clone(), |p| p * alpha);
        let det = lin.jacobian_det();
        for o in 0..g.len() {
            assert!((det.values()[o] - (1.0 + alpha).powi(3)).abs() < 1e-6);
        }
        let fold = DisplacementField::from_fn(g.clone(), |p| Vec3::new(-2.0 * p.x, 0.0, 0.0));
        let det = fold.jacobian_det();
        assert!(det.values().iter().all(|&v| (v + 1.0).abs() < 1e-9));
        assert_eq!(fold.folding_ratio(None).unwrap(), 1.0);
        assert_eq!(DisplacementField::zeros(g.clone()).folding_ratio(None).unwrap(), 0.0);
        assert!(fold.folding_ratio(Some(&Mask::empty(g))).is_err());
    }

    #[test]
    fn half_folded_field() {
        let g = ImageGrid::axis_aligned([20, 6, 6], [1.0; 3], [0.0; 3]).unwrap();
        // x < 10 folded, x ≥ 10 identity
        let d = DisplacementField::from_fn(g.clone(), |p| if p.x < 9.5 { Vec3::new(-2.0 * p.x, 0.0, 0.0) } else { Vec3::new(-19.0, 0.0, 0.0) });
        let full = Mask::full(g.clone());
        let r = d.folding_ratio(Some(&full)).unwrap();
        // independent count: voxels whose central difference along x is ≤ -1
        let mut folded = 0;
        for o in 0..g.len() {
            let i = g.coords(o)[0] as i64;
            let u = |i: i64| if (i as f64) < 9.5 { -2.0 * i as f64 } else { -19.0 };
            let (a, b, h) = if i == 0 { (u(1), u(0), 1.0) } else if i == 19 { (u(19), u(18), 1.0) } else { (u(i + 1), u(i - 1), 2.0) };
            if 1.0 + (a - b) / h <= 0.0 {
                folded += 1;
            }
        }
        assert_eq!(r, folded as f64 / g.len() as f64);
        assert!((r - 0.5).abs() <= 1.0 / 20.0 + 1e-12);
    }
}
