use std::collections::BTreeMap;

use rayon::prelude::*;

use super::grid::ImageGrid;
use crate::error::{Error, Result};
use crate::{par, Vec3};

/// Real-valued volume. Values are finite and stored in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    grid: ImageGrid,
    values: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(grid: ImageGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self { grid, values })
    }

    pub fn filled(grid: ImageGrid, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    /// Evaluates `f` at every voxel center (world mm).
    pub fn from_fn<F>(grid: ImageGrid, f: F) -> Self
    where
        F: Fn(Vec3) -> f64 + Sync,
    {
        let values: Vec<f64> = (0..grid.len()).into_par_iter().map(|o| f(grid.voxel_center(o))).collect();
        Self { grid, values }
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_parts(grid: ImageGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { grid, values }
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.offset(i, j, k)]
    }

    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        Self::new(self.grid.clone(), self.values.par_iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        par::sum(&self.values) / self.values.len() as f64
    }

    /// Mean over the set voxels of `mask`.
    pub fn masked_mean(&self, mask: &Mask) -> Result<f64> {
        self.grid.ensure_same(mask.grid(), "volume and mask")?;
        let n = mask.count();
        if n == 0 {
            return Err(Error::Empty("mask"));
        }
        let total = par::sum_by(self.values.len(), |o| if mask.bits[o] { self.values[o] } else { 0.0 });
        Ok(total / n as f64)
    }

    /// Intensity-weighted centroid in world mm.
    pub fn weighted_centroid(&self) -> Result<Vec3> {
        let total = par::sum_by(self.values.len(), |o| self.values[o].max(0.0));
        if total <= 0.0 {
            return Err(Error::Empty("weighted volume"));
        }
        let acc = par::sum_vec3_by(self.values.len(), |o| self.grid.voxel_center(o) * self.values[o].max(0.0));
        Ok(acc / total)
    }
}

/// Integer label map; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    grid: ImageGrid,
    labels: Vec<u16>,
    names: BTreeMap<u16, String>,
}

impl LabelVolume {
    pub fn new(grid: ImageGrid, labels: Vec<u16>, names: BTreeMap<u16, String>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != 0 && !names.contains_key(&l)) {
            return Err(Error::UndeclaredLabel(bad as u32));
        }
        Ok(Self { grid, labels, names })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn names(&self) -> &BTreeMap<u16, String> {
        &self.names
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u16 {
        self.labels[self.grid.offset(i, j, k)]
    }

    pub fn id_of(&self, name: &str) -> Option<u16> {
        self.names.iter().find(|(_, n)| n.as_str() == name).map(|(&id, _)| id)
    }

    pub fn indicator(&self, label: u16) -> Mask {
        Mask::from_parts(self.grid.clone(), self.labels.iter().map(|&l| l == label).collect())
    }

    /// Label of the voxel whose center is nearest to `p`; 0 outside the grid.
    pub fn sample_nearest(&self, p: &Vec3) -> u16 {
        let ci = self.grid.index_from_world(p);
        let d = self.grid.dims();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = ci[a].round();
            if !(r >= 0.0 && r <= (d[a] - 1) as f64) {
                return 0;
            }
            idx[a] = r as usize;
        }
        self.get(idx[0], idx[1], idx[2])
    }
}

/// Binary voxel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    grid: ImageGrid,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(grid: ImageGrid, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: bits.len() });
        }
        Ok(Self { grid, bits })
    }

    pub(crate) fn from_parts(grid: ImageGrid, bits: Vec<bool>) -> Self {
        debug_assert_eq!(grid.len(), bits.len());
        Self { grid, bits }
    }

    pub fn full(grid: ImageGrid) -> Self {
        let bits = vec![true; grid.len()];
        Self { grid, bits }
    }

    pub fn empty(grid: ImageGrid) -> Self {
        let bits = vec![false; grid.len()];
        Self { grid, bits }
    }

    pub fn from_fn<F>(grid: ImageGrid, f: F) -> Self
    where
        F: Fn(Vec3) -> bool + Sync,
    {
        let bits: Vec<bool> = (0..grid.len()).into_par_iter().map(|o| f(grid.voxel_center(o))).collect();
        Self { grid, bits }
    }

    /// Voxels that do not touch a grid face.
    pub fn interior(grid: ImageGrid) -> Self {
        let bits = (0..grid.len()).map(|o| grid.is_interior(o)).collect();
        Self { grid, bits }
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.grid.offset(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.grid.ensure_same(other.grid(), "masks")?;
        Ok(Self::from_parts(self.grid.clone(), self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect()))
    }

    /// Offsets of the set voxels, ascending.
    pub fn set_offsets(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(o, _)| o).collect()
    }

    /// Uniform centroid of the set voxels in world mm.
    pub fn center_of_mass(&self) -> Result<Vec3> {
        let n = self.count();
        if n == 0 {
            return Err(Error::Empty("mask"));
        }
        let acc = par::sum_vec3_by(self.bits.len(), |o| if self.bits[o] { self.grid.voxel_center(o) } else { Vec3::zeros() });
        Ok(acc / n as f64)
    }

    /// Set voxels with at least one unset (or out-of-grid) 6-neighbour.
    pub fn boundary(&self) -> Mask {
        let d = self.grid.dims();
        let bits = (0..self.bits.len())
            .into_par_iter()
            .map(|o| {
                if !self.bits[o] {
                    return false;
                }
                let c = self.grid.coords(o);
                for a in 0..3 {
                    for step in [-1i64, 1] {
                        let n = c[a] as i64 + step;
                        if n < 0 || n >= d[a] as i64 {
                            return true;
                        }
                        let mut nc = c;
                        nc[a] = n as usize;
                        if !self.bits[self.grid.offset(nc[0], nc[1], nc[2])] {
                            return true;
                        }
                    }
                }
                false
            })
            .collect();
        Self::from_parts(self.grid.clone(), bits)
    }
}
