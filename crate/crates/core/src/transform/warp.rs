//! Transform chains and backward resampling of images and label maps.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::affine::AffineTransform;
use super::field::DisplacementField;
use crate::error::{Error, Result};
use crate::volume::{zero_corners, Boundary, ImageGrid, LabelVolume, ScalarVolume};
use crate::Vec3;

/// One link of a [`TransformChain`].
#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    Affine(AffineTransform),
    Displacement(DisplacementField),
}

impl Transform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        match self {
            Transform::Affine(a) => a.apply(p),
            Transform::Displacement(d) => d.apply(p),
        }
    }
}

/// Composition `t[0] ∘ t[1] ∘ …`: the last element is applied first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformChain(pub Vec<Transform>);

impl TransformChain {
    pub fn identity() -> Self {
        Self(vec![Transform::Affine(AffineTransform::identity())])
    }

    pub fn affine(a: AffineTransform) -> Self {
        Self(vec![Transform::Affine(a)])
    }

    /// `a ∘ (x + u(x))`.
    pub fn affine_then_field(a: AffineTransform, d: DisplacementField) -> Self {
        Self(vec![Transform::Affine(a), Transform::Displacement(d)])
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.0.iter().rev().fold(*p, |q, t| t.apply(&q))
    }

    /// The whole chain as one dense field on `grid`.
    pub fn to_field(&self, grid: &ImageGrid) -> DisplacementField {
        DisplacementField::from_fn(grid.clone(), |p| self.apply(p) - p)
    }
}

/// `out(x) = vol(φ(x))` for every voxel center `x` of `out_grid`, with
/// trilinear interpolation and zero outside `vol`.
pub fn warp_scalar(vol: &ScalarVolume, chain: &TransformChain, out_grid: &ImageGrid) -> Result<ScalarVolume> {
    if chain.is_empty() {
        return Err(Error::Empty("transform chain"));
    }
    let values = (0..out_grid.len())
        .into_par_iter()
        .map(|o| vol.sample(&chain.apply(&out_grid.voxel_center(o)), Boundary::Zero))
        .collect();
    ScalarVolume::new(out_grid.clone(), values)
}

/// Warped label map: per-label soft occupancies and their argmax.
#[derive(Clone, Debug)]
pub struct WarpedLabels {
    pub hard: LabelVolume,
    /// One map per declared label plus background (id 0).
    pub soft: BTreeMap<u16, ScalarVolume>,
}

/// Warps every label's one-hot indicator trilinearly. Reads outside the
/// source grid count as background, so the soft maps always sum to one.
/// The hard map is the argmax, ties going to the lowest label id.
pub fn warp_labels(labels: &LabelVolume, chain: &TransformChain, out_grid: &ImageGrid) -> Result<WarpedLabels> {
    if chain.is_empty() {
        return Err(Error::Empty("transform chain"));
    }
    let mut ids: Vec<u16> = labels.names().keys().copied().collect();
    if !ids.contains(&0) {
        ids.insert(0, 0);
    }
    let slot: BTreeMap<u16, usize> = ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let src = labels.grid();
    let dims = src.dims();
    let nl = ids.len();
    let per_voxel: Vec<Vec<f64>> = (0..out_grid.len())
        .into_par_iter()
        .map(|o| {
            let mut w = vec![0.0; nl];
            let ci = src.index_from_world(&chain.apply(&out_grid.voxel_center(o)));
            match zero_corners(dims, &ci) {
                None => w[0] = 1.0,
                Some(corners) => {
                    for (off, wt) in corners {
                        let l = off.map_or(0, |off| labels.labels()[off]);
                        w[slot[&l]] += wt;
                    }
                }
            }
            w
        })
        .collect();
    let hard: Vec<u16> = per_voxel
        .iter()
        .map(|w| {
            let mut best = 0;
            for k in 1..nl {
                if w[k] > w[best] {
                    best = k;
                }
            }
            ids[best]
        })
        .collect();
    let soft = ids
        .iter()
        .enumerate()
        .map(|(k, &l)| (l, ScalarVolume::from_parts(out_grid.clone(), per_voxel.iter().map(|w| w[k]).collect())))
        .collect();
    Ok(WarpedLabels { hard: LabelVolume::new(out_grid.clone(), hard, labels.names().clone())?, soft })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ImageGrid {
        ImageGrid::axis_aligned([10, 8, 6], [2.0, 1.0, 3.0], [5.0, -3.0, 1.0]).unwrap()
    }

    fn ramp(g: &ImageGrid) -> ScalarVolume {
        ScalarVolume::from_fn(g.clone(), |p| p.x * 0.5 + p.y * p.y * 0.1 - p.z)
    }

    #[test]
    fn identity_chain_reproduces_image() {
        let g = grid();
        let v = ramp(&g);
        let w = warp_scalar(&v, &TransformChain::identity(), &g).unwrap();
        assert!(w.values().iter().zip(v.values()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(warp_scalar(&v, &TransformChain::default(), &g).is_err());
    }

    #[test]
    fn two_voxel_translation_shifts_indices() {
        let g = grid();
        let v = ramp(&g);
        let t = TransformChain::affine(AffineTransform::from_translation(Vec3::new(4.0, 0.0, 0.0)));
        let w = warp_scalar(&v, &t, &g).unwrap();
        for k in 0..6 {
            for j in 0..8 {
                for i in 0..10 {
                    let got = w.get(i, j, k);
                    let expected = if i + 2 < 10 { v.get(i + 2, j, k) } else { 0.0 };
                    assert!((got - expected).abs() < 1e-9, "{i} {j} {k}");
                }
            }
        }
        let far = TransformChain::affine(AffineTransform::from_translation(Vec3::new(1e3, 0.0, 0.0)));
        assert!(warp_scalar(&v, &far, &g).unwrap().values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chain_order() {
        let a = AffineTransform::new(crate::Mat3::identity() * 2.0, Vec3::zeros()).unwrap();
        let b = AffineTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let c = TransformChain(vec![Transform::Affine(a), Transform::Affine(b)]);
        // a(b(0)) = 2 · (1, 0, 0)
        assert_eq!(c.apply(&Vec3::zeros()), Vec3::new(2.0, 0.0, 0.0));
    }

    fn blocks(g: &ImageGrid) -> LabelVolume {
        let names = BTreeMap::from([(1, "a".to_string()), (2, "b".to_string())]);
        let labels = (0..g.len())
            .map(|o| {
                let [i, j, _] = g.coords(o);
                if i >= 5 { 1 } else if j >= 4 { 2 } else { 0 }
            })
            .collect();
        LabelVolume::new(g.clone(), labels, names).unwrap()
    }

    #[test]
    fn label_warps() {
        let g = grid();
        let l = blocks(&g);
        let w = warp_labels(&l, &TransformChain::identity(), &g).unwrap();
        assert_eq!(w.hard.labels(), l.labels());
        // half a voxel along x
        let t = TransformChain::affine(AffineTransform::from_translation(Vec3::new(1.0, 0.0, 0.0)));
        let w = warp_labels(&l, &t, &g).unwrap();
        for o in 0..g.len() {
            let s: f64 = w.soft.values().map(|m| m.values()[o]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        // voxel 4 reads between 4 (label 0 or 2) and 5 (label 1)
        let o = g.offset(4, 0, 0);
        assert!((w.soft[&1].values()[o] - 0.5).abs() < 1e-12);
        assert!((w.soft[&0].values()[o] - 0.5).abs() < 1e-12);
        // tie goes to the lower id
        assert_eq!(w.hard.labels()[o], 0);
        assert_eq!(w.hard.labels()[g.offset(4, 5, 0)], 1);
    }
}
