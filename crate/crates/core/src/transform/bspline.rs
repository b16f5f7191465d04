//! Uniform cubic B-spline lattices of 3-vectors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::ImageGrid;
use crate::{Mat3, Vec3};

/// Cubic B-spline basis weights for fractional offset `u ∈ [0, 1)`.
#[inline]
pub fn basis(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    let u2 = u * u;
    let u3 = u2 * u;
    [v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0, (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0]
}

/// First derivatives of [`basis`] with respect to `u`.
#[inline]
pub fn basis_d1(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    [-v * v / 2.0, (9.0 * u * u - 12.0 * u) / 6.0, (-9.0 * u * u + 6.0 * u + 3.0) / 6.0, u * u / 2.0]
}

/// Second derivatives of [`basis`] with respect to `u`.
#[inline]
pub fn basis_d2(u: f64) -> [f64; 4] {
    [1.0 - u, 3.0 * u - 2.0, -3.0 * u + 1.0, u]
}

/// Regular lattice of control vectors whose tensor-product cubic B-spline
/// defines a smooth vector field over world space.
///
/// Control point `(a, b, c)` sits at `origin + direction · (spacing ⊙ (a, b, c))`.
#[derive(Clone, Debug, PartialEq)]
pub struct BSplineLattice {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    direction: Mat3,
    coeffs: Vec<Vec3>,
}

/// Per-axis interpolation footprint of a set of sample positions.
struct AxisTable {
    base: Vec<usize>,
    weights: Vec<[f64; 4]>,
    /// For each control index, the `(sample index, weight)` pairs it feeds.
    inverse: Vec<Vec<(usize, f64)>>,
}

impl AxisTable {
    fn new(positions: impl Iterator<Item = f64>, n_ctrl: usize) -> Option<Self> {
        let mut base = Vec::new();
        let mut weights = Vec::new();
        let mut inverse = vec![Vec::new(); n_ctrl];
        for (s, u) in positions.enumerate() {
            let fl = u.floor();
            let b = fl as i64 - 1;
            if b < 0 || b as usize + 3 >= n_ctrl {
                return None;
            }
            let w = basis(u - fl);
            for (t, wt) in w.iter().enumerate() {
                inverse[b as usize + t].push((s, *wt));
            }
            base.push(b as usize);
            weights.push(w);
        }
        Some(Self { base, weights, inverse })
    }
}

impl BSplineLattice {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, direction: Mat3, coeffs: Vec<Vec3>) -> Result<Self> {
        if dims.iter().any(|&d| d < 4) {
            return Err(Error::InvalidArgument(format!("lattice needs at least 4 control points per axis, got {dims:?}")));
        }
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("control spacing must be positive, got {spacing:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if coeffs.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: coeffs.len() });
        }
        Ok(Self { dims, spacing, origin, direction, coeffs })
    }

    /// Zero lattice aligned with `grid` that covers its whole extent plus
    /// the one-control-point cubic margin on every side. The support reaches
    /// at least one control spacing past the last voxel, so coarser pyramid
    /// grids of `grid` stay inside it.
    pub fn covering(grid: &ImageGrid, spacing: Vec3) -> Result<Self> {
        let ext = grid.extent();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            dims[a] = (ext[a] / spacing[a] - 1e-9).ceil().max(0.0) as usize + 4;
        }
        let origin = grid.origin() - grid.direction() * spacing;
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, origin, *grid.direction(), vec![Vec3::zeros(); n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn direction(&self) -> &Mat3 {
        &self.direction
    }

    pub fn coeffs(&self) -> &[Vec3] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec3] {
        &mut self.coeffs
    }

    pub fn with_coeffs(&self, coeffs: Vec<Vec3>) -> Self {
        assert_eq!(coeffs.len(), self.coeffs.len());
        Self { coeffs, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    #[inline]
    pub fn offset(&self, a: usize, b: usize, c: usize) -> usize {
        a + self.dims[0] * (b + self.dims[1] * c)
    }

    pub fn node_world(&self, a: usize, b: usize, c: usize) -> Vec3 {
        self.origin + self.direction * self.spacing.component_mul(&Vec3::new(a as f64, b as f64, c as f64))
    }

    /// Continuous lattice coordinates of world point `p`.
    pub fn lattice_coords(&self, p: &Vec3) -> Vec3 {
        (self.direction.transpose() * (p - self.origin)).component_div(&self.spacing)
    }

    fn footprint(&self, p: &Vec3) -> Option<([usize; 3], [[f64; 4]; 3])> {
        let u = self.lattice_coords(p);
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..3 {
            let fl = u[a].floor();
            let b = fl as i64 - 1;
            if !u[a].is_finite() || b < 0 || b as usize + 3 >= self.dims[a] {
                return None;
            }
            base[a] = b as usize;
            w[a] = basis(u[a] - fl);
        }
        Some((base, w))
    }

    /// Field value at `p`; the zero vector outside the covered domain.
    pub fn evaluate(&self, p: &Vec3) -> Vec3 {
        self.evaluate_strict(p).unwrap_or_else(|_| Vec3::zeros())
    }

    /// Field value at `p`, or an error outside the covered domain.
    pub fn evaluate_strict(&self, p: &Vec3) -> Result<Vec3> {
        let (base, w) = self
            .footprint(p)
            .ok_or_else(|| Error::InvalidArgument(format!("point {p:?} lies outside the lattice support")))?;
        let mut acc = Vec3::zeros();
        for (c, wz) in w[2].iter().enumerate() {
            for (b, wy) in w[1].iter().enumerate() {
                let wyz = wy * wz;
                for (a, wx) in w[0].iter().enumerate() {
                    acc += self.coeffs[self.offset(base[0] + a, base[1] + b, base[2] + c)] * (wx * wyz);
                }
            }
        }
        Ok(acc)
    }

    /// Sum of the 64 tensor weights at `p` (partition of unity).
    pub fn weight_sum(&self, p: &Vec3) -> Option<f64> {
        let (_, w) = self.footprint(p)?;
        let s: [f64; 3] = [0, 1, 2].map(|a| w[a].iter().sum::<f64>());
        Some(s[0] * s[1] * s[2])
    }

    fn axis_tables(&self, grid: &ImageGrid) -> Option<[AxisTable; 3]> {
        if (grid.direction() - self.direction).abs().max() > 1e-9 {
            return None;
        }
        let start = self.lattice_coords(&grid.origin());
        let gs = grid.spacing();
        let d = grid.dims();
        let make = |a: usize| {
            let step = gs[a] / self.spacing[a];
            AxisTable::new((0..d[a]).map(move |i| start[a] + i as f64 * step), self.dims[a])
        };
        Some([make(0)?, make(1)?, make(2)?])
    }

    /// Field values at every voxel center of `grid`.
    pub fn sample_on_grid(&self, grid: &ImageGrid) -> Vec<Vec3> {
        let Some([tx, ty, tz]) = self.axis_tables(grid) else {
            return (0..grid.len()).into_par_iter().map(|o| self.evaluate(&grid.voxel_center(o))).collect();
        };
        let [gx, gy, gz] = grid.dims();
        let [lx, ly, lz] = self.dims;
        let t1: Vec<Vec3> = (0..gx * ly * lz)
            .into_par_iter()
            .map(|o| {
                let i = o % gx;
                let bc = o / gx;
                let row = bc * lx;
                let b = tx.base[i];
                let w = &tx.weights[i];
                self.coeffs[row + b] * w[0] + self.coeffs[row + b + 1] * w[1] + self.coeffs[row + b + 2] * w[2] + self.coeffs[row + b + 3] * w[3]
            })
            .collect();
        let t2: Vec<Vec3> = (0..gx * gy * lz)
            .into_par_iter()
            .map(|o| {
                let i = o % gx;
                let j = (o / gx) % gy;
                let c = o / (gx * gy);
                let b = ty.base[j];
                let w = &ty.weights[j];
                let at = |bb: usize| t1[i + gx * (bb + ly * c)];
                at(b) * w[0] + at(b + 1) * w[1] + at(b + 2) * w[2] + at(b + 3) * w[3]
            })
            .collect();
        (0..gx * gy * gz)
            .into_par_iter()
            .map(|o| {
                let ij = o % (gx * gy);
                let k = o / (gx * gy);
                let b = tz.base[k];
                let w = &tz.weights[k];
                let at = |cc: usize| t2[ij + gx * gy * cc];
                at(b) * w[0] + at(b + 1) * w[1] + at(b + 2) * w[2] + at(b + 3) * w[3]
            })
            .collect()
    }

    /// Adjoint of [`sample_on_grid`]: `Σ_x B_k(x) g(x)` for every control
    /// point `k`.
    pub fn adjoint_on_grid(&self, grid: &ImageGrid, values: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(values.len(), grid.len());
        let Some([tx, ty, tz]) = self.axis_tables(grid) else {
            let mut out = vec![Vec3::zeros(); self.len()];
            for (o, g) in values.iter().enumerate() {
                if let Some((base, w)) = self.footprint(&grid.voxel_center(o)) {
                    for c in 0..4 {
                        for b in 0..4 {
                            for a in 0..4 {
                                out[self.offset(base[0] + a, base[1] + b, base[2] + c)] += g * (w[0][a] * w[1][b] * w[2][c]);
                            }
                        }
                    }
                }
            }
            return out;
        };
        let [gx, gy, _] = grid.dims();
        let [lx, ly, lz] = self.dims;
        let u2: Vec<Vec3> = (0..gx * gy * lz)
            .into_par_iter()
            .map(|o| {
                let ij = o % (gx * gy);
                let c = o / (gx * gy);
                tz.inverse[c].iter().fold(Vec3::zeros(), |acc, &(k, w)| acc + values[ij + gx * gy * k] * w)
            })
            .collect();
        let u1: Vec<Vec3> = (0..gx * ly * lz)
            .into_par_iter()
            .map(|o| {
                let i = o % gx;
                let b = (o / gx) % ly;
                let c = o / (gx * ly);
                ty.inverse[b].iter().fold(Vec3::zeros(), |acc, &(j, w)| acc + u2[i + gx * (j + gy * c)] * w)
            })
            .collect();
        (0..lx * ly * lz)
            .into_par_iter()
            .map(|o| {
                let a = o % lx;
                let bc = o / lx;
                tx.inverse[a].iter().fold(Vec3::zeros(), |acc, &(i, w)| acc + u1[i + gx * bc] * w)
            })
            .collect()
    }

    /// Lattice for `grid` at half the current spacing representing the same
    /// field, by exact cubic B-spline subdivision. The lattice must be the
    /// one [`BSplineLattice::covering`] builds for `grid`.
    pub fn refined(&self, grid: &ImageGrid) -> Result<Self> {
        let mut fine = Self::covering(grid, self.spacing / 2.0)?;
        let aligned = (fine.origin - (self.origin + self.direction * (self.spacing / 2.0))).norm() < 1e-9 * (1.0 + self.spacing.norm())
            && (fine.direction - self.direction).abs().max() < 1e-12;
        if !aligned {
            return Err(Error::InvalidArgument("lattice was not built for this grid; cannot subdivide".into()));
        }
        // one axis at a time: old index t = (j + 1) / 2
        let subdivide = |src: &[Vec3], sd: [usize; 3], axis: usize, n_new: usize| -> (Vec<Vec3>, [usize; 3]) {
            let mut nd = sd;
            nd[axis] = n_new;
            let n_old = sd[axis] as i64;
            let get = |idx: [usize; 3], t: i64| {
                let mut q = idx;
                q[axis] = t.clamp(0, n_old - 1) as usize;
                src[q[0] + sd[0] * (q[1] + sd[1] * q[2])]
            };
            let out = (0..nd[0] * nd[1] * nd[2])
                .map(|o| {
                    let idx = [o % nd[0], (o / nd[0]) % nd[1], o / (nd[0] * nd[1])];
                    let j = idx[axis] as i64;
                    if (j + 1) % 2 == 0 {
                        let i = (j + 1) / 2;
                        (get(idx, i - 1) + get(idx, i) * 6.0 + get(idx, i + 1)) / 8.0
                    } else {
                        let i = j / 2;
                        (get(idx, i) + get(idx, i + 1)) / 2.0
                    }
                })
                .collect();
            (out, nd)
        };
        let (c, d) = subdivide(&self.coeffs, self.dims, 0, fine.dims[0]);
        let (c, d) = subdivide(&c, d, 1, fine.dims[1]);
        let (c, _) = subdivide(&c, d, 2, fine.dims[2]);
        fine.coeffs = c;
        Ok(fine)
    }

    pub fn max_coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> ImageGrid {
        ImageGrid::axis_aligned([20, 15, 18], [2.0, 3.0, 2.0], [-10.0, 5.0, 0.0]).unwrap()
    }

    fn random_lattice(g: &ImageGrid, cs: f64, seed: u64) -> BSplineLattice {
        let mut l = BSplineLattice::covering(g, Vec3::repeat(cs)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in l.coeffs_mut() {
            *c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        l
    }

    #[test]
    fn basis_partition_and_derivatives() {
        for i in 0..=100 {
            let u = i as f64 / 100.0 * 0.999;
            assert!((basis(u).iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(basis_d1(u).iter().sum::<f64>().abs() < 1e-15);
            assert!(basis_d2(u).iter().sum::<f64>().abs() < 1e-15);
            let h = 1e-6;
            let (bp, bm) = (basis(u + h), basis(u - h));
            for t in 0..4 {
                assert!(((bp[t] - bm[t]) / (2.0 * h) - basis_d1(u)[t]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_coefficients_reproduce_constant() {
        let g = grid();
        let mut l = BSplineLattice::covering(&g, Vec3::repeat(7.0)).unwrap();
        let c = Vec3::new(1.5, -2.0, 0.25);
        l.coeffs_mut().iter_mut().for_each(|v| *v = c);
        for o in (0..g.len()).step_by(37) {
            assert!((l.evaluate(&g.voxel_center(o)) - c).norm() < 1e-12);
        }
        let zero = BSplineLattice::covering(&g, Vec3::repeat(7.0)).unwrap();
        assert_eq!(zero.evaluate(&g.center()), Vec3::zeros());
    }

    #[test]
    fn single_control_point_at_its_node() {
        let g = grid();
        let mut l = BSplineLattice::covering(&g, Vec3::repeat(6.0)).unwrap();
        let o = l.offset(3, 3, 3);
        l.coeffs_mut()[o] = Vec3::new(1.0, 0.0, 0.0);
        let p = l.node_world(3, 3, 3);
        // B1(0) = 4/6 on each axis
        let expected = (4.0f64 / 6.0).powi(3);
        assert!((l.evaluate(&p).x - expected).abs() < 1e-12);
        let p2 = l.node_world(4, 3, 3);
        assert!((l.evaluate(&p2).x - (1.0 / 6.0) * (4.0f64 / 6.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn outside_support_is_zero_or_error() {
        let l = random_lattice(&grid(), 8.0, 1);
        let far = Vec3::new(1e4, 0.0, 0.0);
        assert_eq!(l.evaluate(&far), Vec3::zeros());
        assert!(l.evaluate_strict(&far).is_err());
    }

    #[test]
    fn grid_sampling_matches_pointwise() {
        let g = grid();
        let l = random_lattice(&g, 9.0, 2);
        let dense = l.sample_on_grid(&g);
        for o in 0..g.len() {
            assert!((dense[o] - l.evaluate(&g.voxel_center(o))).norm() < 1e-12);
        }
        let coarse = g.downsampled().unwrap();
        let dense = l.sample_on_grid(&coarse);
        for o in 0..coarse.len() {
            assert!((dense[o] - l.evaluate(&coarse.voxel_center(o))).norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity() {
        let g = grid();
        let l = random_lattice(&g, 8.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field: Vec<Vec3> = (0..g.len()).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let lhs: f64 = l.sample_on_grid(&g).iter().zip(&field).map(|(a, b)| a.dot(b)).sum();
        let adj = l.adjoint_on_grid(&g, &field);
        let rhs: f64 = l.coeffs().iter().zip(&adj).map(|(a, b)| a.dot(b)).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn subdivision_is_exact() {
        let g = grid();
        let l = random_lattice(&g, 16.0, 5);
        let fine = l.refined(&g).unwrap();
        assert_eq!(fine.spacing(), Vec3::repeat(8.0));
        for o in 0..g.len() {
            let p = g.voxel_center(o);
            assert!((fine.evaluate(&p) - l.evaluate(&p)).norm() < 1e-12);
        }
    }
}
