//! Bending energy of a B-spline lattice, evaluated at its control nodes.

use crate::transform::BSplineLattice;
use crate::Vec3;

const VALUE: [f64; 3] = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
const FIRST: [f64; 3] = [-0.5, 0.0, 0.5];
const SECOND: [f64; 3] = [1.0, -2.0, 1.0];

#[derive(Clone, Copy)]
enum Order {
    Value,
    First,
    Second,
}

fn kernel(order: Order, spacing: f64) -> [f64; 3] {
    match order {
        Order::Value => VALUE,
        Order::First => FIRST.map(|k| k / spacing),
        Order::Second => SECOND.map(|k| k / (spacing * spacing)),
    }
}

/// The six Hessian terms with their weights in the squared Frobenius norm.
const TERMS: [([Order; 3], f64); 6] = [
    ([Order::Second, Order::Value, Order::Value], 1.0),
    ([Order::Value, Order::Second, Order::Value], 1.0),
    ([Order::Value, Order::Value, Order::Second], 1.0),
    ([Order::First, Order::First, Order::Value], 2.0),
    ([Order::First, Order::Value, Order::First], 2.0),
    ([Order::Value, Order::First, Order::First], 2.0),
];

/// Mean over interior control nodes of `‖∇²f‖²_F` (summed over the three
/// components), and its gradient with respect to every coefficient.
pub fn bending_energy(lattice: &BSplineLattice) -> (f64, Vec<Vec3>) {
    let d = lattice.dims();
    let s = lattice.spacing();
    let c = lattice.coeffs();
    let mut grad = vec![Vec3::zeros(); c.len()];
    let interior = (d[0] - 2) * (d[1] - 2) * (d[2] - 2);
    let norm = 1.0 / interior as f64;
    let mut energy = 0.0;
    for (orders, weight) in TERMS {
        let kx = kernel(orders[0], s.x);
        let ky = kernel(orders[1], s.y);
        let kz = kernel(orders[2], s.z);
        for k in 1..d[2] - 1 {
            for j in 1..d[1] - 1 {
                for i in 1..d[0] - 1 {
                    let mut t = Vec3::zeros();
                    for (c2, wz) in kz.iter().enumerate() {
                        for (b, wy) in ky.iter().enumerate() {
                            for (a, wx) in kx.iter().enumerate() {
                                t += c[lattice.offset(i + a - 1, j + b - 1, k + c2 - 1)] * (wx * wy * wz);
                            }
                        }
                    }
                    energy += weight * t.norm_squared();
                    let back = t * (2.0 * weight * norm);
                    for (c2, wz) in kz.iter().enumerate() {
                        for (b, wy) in ky.iter().enumerate() {
                            for (a, wx) in kx.iter().enumerate() {
                                grad[lattice.offset(i + a - 1, j + b - 1, k + c2 - 1)] += back * (wx * wy * wz);
                            }
                        }
                    }
                }
            }
        }
    }
    (energy * norm, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ImageGrid;
    use crate::Mat3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lattice() -> BSplineLattice {
        let g = ImageGrid::axis_aligned([20, 16, 18], [2.0, 3.0, 2.0], [0.0; 3]).unwrap();
        BSplineLattice::covering(&g, Vec3::new(8.0, 9.0, 7.0)).unwrap()
    }

    #[test]
    fn zero_and_affine_patterns() {
        let l = lattice();
        assert_eq!(bending_energy(&l).0, 0.0);
        let a = Mat3::new(0.1, 0.2, -0.3, 0.05, -0.1, 0.0, 0.3, 0.1, 0.2);
        let t = Vec3::new(1.0, -2.0, 0.5);
        let d = l.dims();
        let coeffs = (0..l.len()).map(|o| a * l.node_world(o % d[0], (o / d[0]) % d[1], o / (d[0] * d[1])) + t).collect();
        let (e, g) = bending_energy(&l.with_coeffs(coeffs));
        assert!(e < 1e-20, "{e}");
        assert!(g.iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn matches_dense_second_derivative_oracle() {
        // a single node's curvature against a direct finite-difference
        // Hessian of the spline, away from other nonzero coefficients
        let mut l = lattice();
        let o = l.offset(3, 3, 3);
        l.coeffs_mut()[o] = Vec3::new(1.0, 0.0, 0.0);
        let p = l.node_world(3, 3, 3);
        let h = 1e-3;
        let f = |q: Vec3| l.evaluate(&q).x;
        let e = |a: usize| {
            let mut v = Vec3::zeros();
            v[a] = h;
            v
        };
        let fxx = (f(p + e(0)) - 2.0 * f(p) + f(p - e(0))) / (h * h);
        let fxy = (f(p + e(0) + e(1)) - f(p + e(0) - e(1)) - f(p - e(0) + e(1)) + f(p - e(0) - e(1))) / (4.0 * h * h);
        // the same two terms from the node stencils
        let s = l.spacing();
        let sxx = -2.0 / (s.x * s.x) * (4.0 / 6.0) * (4.0 / 6.0);
        let sxy = 0.0;
        assert!((fxx - sxx).abs() < 1e-4 * sxx.abs());
        assert!((fxy - sxy).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut l = lattice();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in l.coeffs_mut() {
            *c = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        }
        let (_, g) = bending_energy(&l);
        for (o, comp) in [(0usize, 0usize), (17, 1), (40, 2), (l.len() / 2, 0), (l.len() - 1, 1)] {
            let h = 1e-5;
            let mut lp = l.clone();
            lp.coeffs_mut()[o][comp] += h;
            let mut lm = l.clone();
            lm.coeffs_mut()[o][comp] -= h;
            let fd = (bending_energy(&lp).0 - bending_energy(&lm).0) / (2.0 * h);
            assert!((fd - g[o][comp]).abs() <= 1e-5 * fd.abs().max(1e-8), "{fd} {}", g[o][comp]);
        }
    }
}
