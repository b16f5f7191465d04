use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

/// `p ↦ matrix · p + translation` in world mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub matrix: Mat3,
    pub translation: Vec3,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn new(matrix: Mat3, translation: Vec3) -> Result<Self> {
        let det = matrix.determinant();
        if !(det.abs() > 1e-12) || matrix.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Singular(det.abs()));
        }
        Ok(Self { matrix, translation })
    }

    pub fn identity() -> Self {
        Self { matrix: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { matrix: Mat3::identity(), translation: t }
    }

    /// Linear map `matrix` applied about `center`: `p ↦ M (p - c) + c + t`.
    pub fn about_center(matrix: Mat3, center: Vec3, t: Vec3) -> Result<Self> {
        Self::new(matrix, center - matrix * center + t)
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.matrix * p + self.translation
    }

    pub fn invert(&self) -> Result<Self> {
        let inv = self.matrix.try_inverse().ok_or(Error::Singular(self.matrix.determinant().abs()))?;
        Self::new(inv, -(inv * self.translation))
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &AffineTransform) -> Self {
        Self { matrix: self.matrix * inner.matrix, translation: self.matrix * inner.translation + self.translation }
    }

    /// Largest deviation of `self` from the identity over the given points,
    /// in mm.
    pub fn max_deviation_from_identity(&self, points: &[Vec3]) -> f64 {
        points.iter().map(|p| (self.apply(p) - p).norm()).fold(0.0, f64::max)
    }

    /// Row-major `A` followed by `t`.
    pub fn to_params(&self) -> [f64; 12] {
        let m = &self.matrix;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
            self.translation.x, self.translation.y, self.translation.z,
        ]
    }

    pub fn from_params(p: &[f64; 12]) -> Result<Self> {
        let m = Mat3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]);
        Self::new(m, Vec3::new(p[9], p[10], p[11]))
    }
}

/// Twelve whitespace-separated numbers: the matrix row by row, then the
/// translation.
impl fmt::Display for AffineTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.to_params();
        for r in 0..3 {
            writeln!(f, "{:?} {:?} {:?}", p[3 * r], p[3 * r + 1], p[3 * r + 2])?;
        }
        writeln!(f, "{:?} {:?} {:?}", p[9], p[10], p[11])
    }
}

impl FromStr for AffineTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let nums: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("affine text: {e}"))))
            .collect::<Result<_>>()?;
        let arr: [f64; 12] = nums
            .try_into()
            .map_err(|v: Vec<f64>| Error::InvalidArgument(format!("affine text needs 12 numbers, found {}", v.len())))?;
        Self::from_params(&arr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_translation() {
        let p = Vec3::new(1.5, -2.0, 3.0);
        assert_eq!(AffineTransform::identity().apply(&p), p);
        let t = AffineTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(t.apply(&Vec3::zeros()), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(t.invert().unwrap().translation, Vec3::new(-1.0, -2.0, -3.0));
        assert_eq!(AffineTransform::identity().invert().unwrap(), AffineTransform::identity());
    }

    #[test]
    fn scale_round_trip() {
        let a = AffineTransform::new(Mat3::identity() * 2.0, Vec3::zeros()).unwrap();
        let inv = a.invert().unwrap();
        let p = Vec3::new(0.3, 7.0, -4.5);
        assert!((inv.apply(&a.apply(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn random_inverse_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let rot = Rotation3::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
            let mut m = rot.into_inner();
            for v in m.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
            let a = AffineTransform::new(m, Vec3::new(rng.random_range(-50.0..50.0), 3.0, -8.0)).unwrap();
            let c = a.invert().unwrap().compose(&a);
            assert!((c.matrix - Mat3::identity()).abs().max() < 1e-10);
            assert!(c.translation.abs().max() < 1e-10);
        }
    }

    #[test]
    fn singular_rejected() {
        let mut m = Mat3::identity();
        m[(2, 2)] = 0.0;
        assert!(matches!(AffineTransform::new(m, Vec3::zeros()), Err(Error::Singular(_))));
    }

    #[test]
    fn text_round_trip() {
        let a = AffineTransform::new(Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner() * 1.1, Vec3::new(1.0 / 3.0, -2.0, 5.5)).unwrap();
        let back: AffineTransform = a.to_string().parse().unwrap();
        assert_eq!(back, a);
        assert!("1 2 3".parse::<AffineTransform>().is_err());
    }
}
