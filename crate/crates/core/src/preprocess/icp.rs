//! Center-of-mass alignment refined by iterative closest point.

use rayon::prelude::*;

use super::kdtree::KdTree;
use super::{IcpMode, PreprocessConfig};
use crate::error::Result;
use crate::transform::AffineTransform;
use crate::volume::{gaussian_voxels, Boundary, Mask, ScalarVolume};
use crate::{Mat3, Vec3};

/// Cap on boundary points used per mask.
pub const MAX_ICP_POINTS: usize = 20_000;

/// Boundary voxel centers in world mm, strided down to at most `limit`.
pub fn boundary_points(mask: &Mask, limit: usize) -> Vec<Vec3> {
    let offsets = mask.boundary().set_offsets();
    let stride = offsets.len().div_ceil(limit.max(1)).max(1);
    offsets.iter().step_by(stride).map(|&o| mask.grid().voxel_center(o)).collect()
}

/// [`boundary_points`] moved onto the 0.5 level set of the mask smoothed
/// with a one-voxel Gaussian, with unit outward normals. Voxel-center points
/// from two masks share a lattice, which traps ICP near the identity.
pub fn surface_points(mask: &Mask, limit: usize) -> Vec<(Vec3, Vec3)> {
    let g = mask.grid();
    let indicator: Vec<f64> = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let smooth = ScalarVolume::new(g.clone(), gaussian_voxels(&indicator, g.dims(), [1.0; 3])).expect("finite");
    let max_step = g.min_spacing();
    boundary_points(mask, limit)
        .into_iter()
        .map(|p| {
            let (f, grad) = smooth.sample_with_gradient(&p, Boundary::Clamp);
            let n2 = grad.norm_squared();
            if n2 < 1e-12 {
                return (p, Vec3::zeros());
            }
            let mut step = grad * ((0.5 - f) / n2);
            let len = step.norm();
            if len > max_step {
                step *= max_step / len;
            }
            (p + step, -grad / n2.sqrt())
        })
        .collect()
}

/// Least-squares rigid map (or translation) taking `src[i]` onto `dst[i]`.
pub fn procrustes(src: &[Vec3], dst: &[Vec3], mode: IcpMode) -> AffineTransform {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let rot = match mode {
        IcpMode::Translation => Mat3::identity(),
        IcpMode::Rigid => {
            let h: Mat3 = src.iter().zip(dst).map(|(s, d)| (s - cs) * (d - cd).transpose()).sum();
            let svd = h.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let v = vt.transpose();
            let mut fix = Mat3::identity();
            if (v * u.transpose()).determinant() < 0.0 {
                fix[(2, 2)] = -1.0;
            }
            v * fix * u.transpose()
        }
    };
    AffineTransform { matrix: rot, translation: cd - rot * cs }
}

/// RMS distance to the closest surface points, and correspondences
/// projected onto the tangent plane at each closest point.
fn rms_closest(tree: &KdTree, normals: &[Vec3], pts: &[Vec3], t: &AffineTransform) -> (f64, Vec<Vec3>) {
    let matched: Vec<(f64, Vec3)> = pts
        .par_iter()
        .map(|p| {
            let y = t.apply(p);
            let (i, d2) = tree.nearest(&y).expect("non-empty tree");
            let q = tree.point(i);
            let n = normals[i];
            (d2, y - n * (y - q).dot(&n))
        })
        .collect();
    let rms = (matched.iter().map(|m| m.0).sum::<f64>() / pts.len() as f64).sqrt();
    (rms, matched.into_iter().map(|m| m.1).collect())
}

/// Pull-back initialization `x_fixed ↦ x_moving`: starts from the
/// center-of-mass offset and, when enabled, refines with ICP between the
/// mask boundaries.
pub fn com_init(fixed: &Mask, moving: &Mask, cfg: &PreprocessConfig) -> Result<AffineTransform> {
    let cf = fixed.center_of_mass()?;
    let cm = moving.center_of_mass()?;
    let com = AffineTransform::from_translation(cm - cf);
    if !cfg.icp_enabled {
        return Ok(com);
    }
    let src: Vec<Vec3> = surface_points(fixed, MAX_ICP_POINTS).into_iter().map(|(p, _)| p).collect();
    let (dst, normals): (Vec<Vec3>, Vec<Vec3>) = surface_points(moving, MAX_ICP_POINTS).into_iter().unzip();
    let tree = KdTree::new(dst);
    let (start, _) = rms_closest(&tree, &normals, &src, &com);
    let mut current = com;
    let mut prev = start;
    for _ in 0..cfg.icp_max_iters {
        let (_, targets) = rms_closest(&tree, &normals, &src, &current);
        let next = procrustes(&src, &targets, cfg.icp_mode);
        let (dist, _) = rms_closest(&tree, &normals, &src, &next);
        if !dist.is_finite() {
            break;
        }
        current = next;
        let change = (prev - dist).abs();
        prev = dist;
        if change < cfg.icp_tolerance {
            break;
        }
    }
    if !(prev <= start) {
        log::warn!("icp increased the mean boundary distance ({start:.3} -> {prev:.3} mm); using the center-of-mass alignment");
        return Ok(com);
    }
    Ok(current)
}
