//! Trilinear interpolation in continuous voxel-index space.

use super::data::ScalarVolume;
use crate::Vec3;

/// Out-of-grid policy for interpolation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Voxels outside the grid read as zero.
    Zero,
    /// Coordinates are clamped onto the grid.
    Clamp,
}

/// Integer base and fractional offset of one axis, or `None` when the
/// interpolation footprint misses the grid entirely (zero boundary only).
#[inline]
fn axis_setup(c: f64, n: usize, boundary: Boundary) -> Option<(i64, f64, bool)> {
    let max = (n - 1) as f64;
    match boundary {
        Boundary::Clamp => {
            if c <= 0.0 {
                Some((0, 0.0, c < 0.0))
            } else if c >= max {
                // f = 0 on the last node; clamped flag zeroes the derivative
                Some((n as i64 - 1, 0.0, c > max))
            } else {
                let b = c.floor();
                Some((b as i64, c - b, false))
            }
        }
        Boundary::Zero => {
            if !(c > -1.0 && c < max + 1.0) {
                return None;
            }
            let b = c.floor();
            Some((b as i64, c - b, false))
        }
    }
}

#[inline]
fn fetch(values: &[f64], dims: [usize; 3], i: i64, j: i64, k: i64) -> f64 {
    if i < 0 || j < 0 || k < 0 || i >= dims[0] as i64 || j >= dims[1] as i64 || k >= dims[2] as i64 {
        0.0
    } else {
        values[i as usize + dims[0] * (j as usize + dims[1] * k as usize)]
    }
}

/// Trilinear interpolation of a raw grid-ordered buffer at continuous index `ci`.
#[inline]
pub(crate) fn trilinear(values: &[f64], dims: [usize; 3], ci: &Vec3, boundary: Boundary) -> f64 {
    trilinear_with_gradient(values, dims, ci, boundary).0
}

/// Value and its derivative with respect to the continuous index.
///
/// The derivative is the exact derivative of the piecewise-trilinear
/// interpolant (taken from the right on cell faces) and vanishes along
/// clamped axes.
pub(crate) fn trilinear_with_gradient(values: &[f64], dims: [usize; 3], ci: &Vec3, boundary: Boundary) -> (f64, Vec3) {
    let (Some(ax), Some(ay), Some(az)) =
        (axis_setup(ci.x, dims[0], boundary), axis_setup(ci.y, dims[1], boundary), axis_setup(ci.z, dims[2], boundary))
    else {
        return (0.0, Vec3::zeros());
    };
    let (x0, fx, cx) = ax;
    let (y0, fy, cy) = ay;
    let (z0, fz, cz) = az;
    let x1 = if boundary == Boundary::Clamp { (x0 + 1).min(dims[0] as i64 - 1) } else { x0 + 1 };
    let y1 = if boundary == Boundary::Clamp { (y0 + 1).min(dims[1] as i64 - 1) } else { y0 + 1 };
    let z1 = if boundary == Boundary::Clamp { (z0 + 1).min(dims[2] as i64 - 1) } else { z0 + 1 };

    let c000 = fetch(values, dims, x0, y0, z0);
    let c100 = fetch(values, dims, x1, y0, z0);
    let c010 = fetch(values, dims, x0, y1, z0);
    let c110 = fetch(values, dims, x1, y1, z0);
    let c001 = fetch(values, dims, x0, y0, z1);
    let c101 = fetch(values, dims, x1, y0, z1);
    let c011 = fetch(values, dims, x0, y1, z1);
    let c111 = fetch(values, dims, x1, y1, z1);

    let c00 = c000 + fx * (c100 - c000);
    let c10 = c010 + fx * (c110 - c010);
    let c01 = c001 + fx * (c101 - c001);
    let c11 = c011 + fx * (c111 - c011);
    let c0 = c00 + fy * (c10 - c00);
    let c1 = c01 + fy * (c11 - c01);
    let value = c0 + fz * (c1 - c0);

    let dx = {
        let d00 = c100 - c000;
        let d10 = c110 - c010;
        let d01 = c101 - c001;
        let d11 = c111 - c011;
        let d0 = d00 + fy * (d10 - d00);
        let d1 = d01 + fy * (d11 - d01);
        d0 + fz * (d1 - d0)
    };
    let dy = (c10 - c00) + fz * ((c11 - c01) - (c10 - c00));
    let dz = c1 - c0;
    let grad = Vec3::new(
        if cx || x1 == x0 { 0.0 } else { dx },
        if cy || y1 == y0 { 0.0 } else { dy },
        if cz || z1 == z0 { 0.0 } else { dz },
    );
    (value, grad)
}

/// The eight corner offsets and weights of a clamped trilinear footprint.
#[cfg(test)]
pub(crate) fn clamp_corners(dims: [usize; 3], ci: &Vec3) -> [(usize, f64); 8] {
    let setup = |c: f64, n: usize| -> (usize, usize, f64) {
        let max = (n - 1) as f64;
        if c <= 0.0 {
            (0, 0, 0.0)
        } else if c >= max {
            (n - 1, n - 1, 0.0)
        } else {
            let b = c.floor();
            let b0 = b as usize;
            (b0, (b0 + 1).min(n - 1), c - b)
        }
    };
    let (x0, x1, fx) = setup(ci.x, dims[0]);
    let (y0, y1, fy) = setup(ci.y, dims[1]);
    let (z0, z1, fz) = setup(ci.z, dims[2]);
    let off = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    [
        (off(x0, y0, z0), (1.0 - fx) * (1.0 - fy) * (1.0 - fz)),
        (off(x1, y0, z0), fx * (1.0 - fy) * (1.0 - fz)),
        (off(x0, y1, z0), (1.0 - fx) * fy * (1.0 - fz)),
        (off(x1, y1, z0), fx * fy * (1.0 - fz)),
        (off(x0, y0, z1), (1.0 - fx) * (1.0 - fy) * fz),
        (off(x1, y0, z1), fx * (1.0 - fy) * fz),
        (off(x0, y1, z1), (1.0 - fx) * fy * fz),
        (off(x1, y1, z1), fx * fy * fz),
    ]
}

/// The eight corner offsets and weights under the zero boundary; corners
/// outside the grid are reported as `None`.
pub(crate) fn zero_corners(dims: [usize; 3], ci: &Vec3) -> Option<[(Option<usize>, f64); 8]> {
    for a in 0..3 {
        if !(ci[a] > -1.0 && ci[a] < dims[a] as f64) {
            return None;
        }
    }
    let b = ci.map(f64::floor);
    let f = ci - b;
    let base = [b.x as i64, b.y as i64, b.z as i64];
    let mut out = [(None, 0.0); 8];
    for (n, slot) in out.iter_mut().enumerate() {
        let d = [(n & 1) as i64, ((n >> 1) & 1) as i64, ((n >> 2) & 1) as i64];
        let mut w = 1.0;
        let mut inside = true;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let c = base[a] + d[a];
            w *= if d[a] == 1 { f[a] } else { 1.0 - f[a] };
            if c < 0 || c >= dims[a] as i64 {
                inside = false;
            } else {
                idx[a] = c as usize;
            }
        }
        *slot = (if inside { Some(idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])) } else { None }, w);
    }
    Some(out)
}

impl ScalarVolume {
    /// Trilinear interpolation at world point `p`.
    pub fn sample(&self, p: &Vec3, boundary: Boundary) -> f64 {
        let ci = self.grid().index_from_world(p);
        trilinear(self.values(), self.grid().dims(), &ci, boundary)
    }

    /// Trilinear interpolation at continuous index `ci`.
    pub fn sample_index(&self, ci: &Vec3, boundary: Boundary) -> f64 {
        trilinear(self.values(), self.grid().dims(), ci, boundary)
    }

    /// Value and world-space gradient of the trilinear interpolant at `p`.
    pub fn sample_with_gradient(&self, p: &Vec3, boundary: Boundary) -> (f64, Vec3) {
        let ci = self.grid().index_from_world(p);
        let (v, g) = trilinear_with_gradient(self.values(), self.grid().dims(), &ci, boundary);
        (v, self.grid().world_to_index_matrix().transpose() * g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ImageGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_at_nodes() {
        let g = ImageGrid::axis_aligned([4, 3, 2], [1.0, 2.0, 3.0], [1.0, 1.0, 1.0]).unwrap();
        let v = ScalarVolume::new(g.clone(), (0..24).map(|i| i as f64 * 0.5).collect()).unwrap();
        for o in 0..24 {
            let p = g.voxel_center(o);
            assert_eq!(v.sample(&p, Boundary::Zero), v.values()[o]);
            assert_eq!(v.sample(&p, Boundary::Clamp), v.values()[o]);
        }
    }

    #[test]
    fn midpoint_and_outside() {
        let g = ImageGrid::axis_aligned([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = ScalarVolume::new(g, vec![2.0, 4.0]).unwrap();
        assert_eq!(v.sample(&Vec3::new(0.5, 0.0, 0.0), Boundary::Zero), 3.0);
        assert_eq!(v.sample(&Vec3::new(100.0, 0.0, 0.0), Boundary::Zero), 0.0);
        assert_eq!(v.sample(&Vec3::new(100.0, 0.0, 0.0), Boundary::Clamp), 4.0);
        assert_eq!(v.sample(&Vec3::new(-3.0, 0.0, 0.0), Boundary::Clamp), 2.0);
    }

    #[test]
    fn affine_functions_reproduced() {
        let g = ImageGrid::axis_aligned([9, 7, 8], [2.0, 3.0, 2.0], [-4.0, 2.0, 0.5]).unwrap();
        let a = Vec3::new(0.3, -1.2, 0.7);
        let v = ScalarVolume::from_fn(g.clone(), |p| a.dot(&p) + 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let ci = Vec3::new(rng.random_range(0.0..8.0), rng.random_range(0.0..6.0), rng.random_range(0.0..7.0));
            let p = g.world_from_index(&ci);
            assert!((v.sample(&p, Boundary::Zero) - (a.dot(&p) + 2.5)).abs() < 1e-9);
            let (_, grad) = v.sample_with_gradient(&p, Boundary::Clamp);
            assert!((grad - a).norm() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = ImageGrid::axis_aligned([6, 6, 6], [1.0, 1.5, 2.0], [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = ScalarVolume::new(g.clone(), (0..216).map(|_| rng.random::<f64>()).collect()).unwrap();
        for _ in 0..100 {
            let ci = Vec3::new(rng.random_range(0.1..4.9), rng.random_range(0.1..4.9), rng.random_range(0.1..4.9));
            let p = g.world_from_index(&ci);
            let (_, grad) = v.sample_with_gradient(&p, Boundary::Zero);
            for a in 0..3 {
                let h = 1e-6;
                let mut e = Vec3::zeros();
                e[a] = h;
                let fd = (v.sample(&(p + e), Boundary::Zero) - v.sample(&(p - e), Boundary::Zero)) / (2.0 * h);
                assert!((fd - grad[a]).abs() < 1e-6, "{fd} vs {}", grad[a]);
            }
        }
    }

    #[test]
    fn corner_weights_partition() {
        let dims = [4, 4, 4];
        let ci = Vec3::new(1.3, 2.7, 0.2);
        let s: f64 = clamp_corners(dims, &ci).iter().map(|c| c.1).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let z = zero_corners(dims, &Vec3::new(-0.5, 1.0, 1.0)).unwrap();
        assert_eq!(z.iter().filter(|c| c.0.is_none()).count(), 4);
    }
}
