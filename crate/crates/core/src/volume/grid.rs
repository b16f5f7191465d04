use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

/// Physical placement of a 3D voxel lattice.
///
/// Voxel `(i, j, k)` is stored at offset `i + nx * (j + ny * k)` (x fastest)
/// and continuous index `i` addresses the *center* of voxel `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    direction: Mat3,
    index_to_world: Mat3,
    world_to_index: Mat3,
}

impl ImageGrid {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, direction: Mat3) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGrid(format!("zero dimension in {dims:?}")));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive and finite, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        let deviation = (direction.transpose() * direction - Mat3::identity()).abs().max();
        if !(deviation < 1e-6) {
            return Err(Error::InvalidGrid(format!(
                "direction matrix is not orthonormal (max |DᵀD - I| = {deviation:e})"
            )));
        }
        let index_to_world = direction * Mat3::from_diagonal(&spacing);
        let world_to_index = Mat3::from_diagonal(&spacing.map(|s| 1.0 / s)) * direction.transpose();
        Ok(Self { dims, spacing, origin, direction, index_to_world, world_to_index })
    }

    /// Axis-aligned grid with identity direction.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        Self::new(dims, Vec3::from(spacing), Vec3::from(origin), Mat3::identity())
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

    /// `direction · diag(spacing)`.
    pub fn index_to_world_matrix(&self) -> &Mat3 {
        &self.index_to_world
    }

    pub fn world_to_index_matrix(&self) -> &Mat3 {
        &self.world_to_index
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.min()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.x * self.spacing.y * self.spacing.z
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, offset: usize) -> [usize; 3] {
        let i = offset % self.dims[0];
        let rest = offset / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn world_from_index(&self, idx: &Vec3) -> Vec3 {
        self.origin + self.index_to_world * idx
    }

    #[inline]
    pub fn index_from_world(&self, p: &Vec3) -> Vec3 {
        self.world_to_index * (p - self.origin)
    }

    /// World position of the center of the voxel at `offset`.
    #[inline]
    pub fn voxel_center(&self, offset: usize) -> Vec3 {
        let [i, j, k] = self.coords(offset);
        self.world_from_index(&Vec3::new(i as f64, j as f64, k as f64))
    }

    /// True when the voxel does not touch any face of the grid.
    pub fn is_interior(&self, offset: usize) -> bool {
        let c = self.coords(offset);
        (0..3).all(|a| c[a] > 0 && c[a] + 1 < self.dims[a])
    }

    /// Continuous index lies within `[0, n-1]` on every axis.
    pub fn contains_index(&self, ci: &Vec3) -> bool {
        (0..3).all(|a| ci[a] >= 0.0 && ci[a] <= (self.dims[a] - 1) as f64)
    }

    /// Same dims and the same physical placement within `1e-6` mm.
    pub fn same_geometry(&self, other: &ImageGrid) -> bool {
        // relative tolerance: headers store geometry in single precision
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()));
        self.dims == other.dims
            && self.spacing.iter().zip(other.spacing.iter()).all(|(a, b)| close(*a, *b))
            && self.origin.iter().zip(other.origin.iter()).all(|(a, b)| close(*a, *b))
            && self.direction.iter().zip(other.direction.iter()).all(|(a, b)| close(*a, *b))
    }

    pub fn ensure_same(&self, other: &ImageGrid, what: &'static str) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(what))
        }
    }

    /// Grid with halved (ceil) dims and doubled spacing covering the same
    /// extent. Coarse voxel `i` sits at the center of fine voxels `2i, 2i+1`.
    pub fn downsampled(&self) -> Result<Self> {
        for (axis, &len) in self.dims.iter().enumerate() {
            if len < 2 {
                return Err(Error::DegenerateAxis { axis, len, min: 2 });
            }
        }
        let dims = self.dims.map(|d| d.div_ceil(2));
        let origin = self.world_from_index(&Vec3::new(0.5, 0.5, 0.5));
        Self::new(dims, self.spacing * 2.0, origin, self.direction)
    }

    /// World-space bounding extent per axis, `(n-1)·s`.
    pub fn extent(&self) -> Vec3 {
        Vec3::new(
            (self.dims[0] - 1) as f64 * self.spacing.x,
            (self.dims[1] - 1) as f64 * self.spacing.y,
            (self.dims[2] - 1) as f64 * self.spacing.z,
        )
    }

    /// World position of the grid's geometric center.
    pub fn center(&self) -> Vec3 {
        let c = Vec3::new(
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        );
        self.world_from_index(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn origin_maps_to_index_zero() {
        let g = ImageGrid::axis_aligned([4, 4, 4], [1.0, 1.0, 1.0], [10.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.world_from_index(&Vec3::zeros()), Vec3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn diagonal_scaling() {
        let g = ImageGrid::axis_aligned([4, 4, 4], [2.0, 3.0, 2.0], [0.0; 3]).unwrap();
        assert_eq!(g.world_from_index(&Vec3::new(1.0, 1.0, 1.0)), Vec3::new(2.0, 3.0, 2.0));
    }

    #[test]
    fn round_trip_under_rotation() {
        let rot = Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let g = ImageGrid::new([40, 30, 20], Vec3::new(2.23, 3.0, 2.23), Vec3::new(-100.0, 50.0, 7.5), rot)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let idx = Vec3::new(rng.random_range(0.0..39.0), rng.random_range(0.0..29.0), rng.random_range(0.0..19.0));
            let back = g.index_from_world(&g.world_from_index(&idx));
            let err = g.world_from_index(&back) - g.world_from_index(&idx);
            assert!(err.norm() < 1e-9);
            assert!((back - idx).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_orthonormal_direction() {
        let mut d = Mat3::identity();
        d[(0, 1)] = 0.2;
        assert!(matches!(ImageGrid::new([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), d), Err(Error::InvalidGrid(_))));
        assert!(ImageGrid::axis_aligned([2, 0, 2], [1.0; 3], [0.0; 3]).is_err());
        assert!(ImageGrid::axis_aligned([2, 2, 2], [1.0, -1.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn offsets_are_x_fastest() {
        let g = ImageGrid::axis_aligned([3, 4, 5], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(g.offset(1, 0, 0), 1);
        assert_eq!(g.offset(0, 1, 0), 3);
        assert_eq!(g.offset(0, 0, 1), 12);
        assert_eq!(g.coords(g.offset(2, 3, 4)), [2, 3, 4]);
    }

    #[test]
    fn downsampled_geometry() {
        let g = ImageGrid::axis_aligned([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let g2 = g.downsampled().unwrap().downsampled().unwrap();
        assert_eq!(g2.dims(), [2, 2, 2]);
        assert_eq!(g2.spacing(), Vec3::repeat(4.0));
        let odd = ImageGrid::axis_aligned([5, 3, 2], [1.0; 3], [0.0; 3]).unwrap().downsampled().unwrap();
        assert_eq!(odd.dims(), [3, 2, 1]);
        assert!(ImageGrid::axis_aligned([1, 4, 4], [1.0; 3], [0.0; 3]).unwrap().downsampled().is_err());
    }
}
