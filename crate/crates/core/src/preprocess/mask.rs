//! Body-mask extraction: threshold, largest component, closing, hole fill.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::intensity::min_max_normalize;
use super::{PreprocessConfig, ThresholdMode};
use crate::error::{Error, Result};
use crate::volume::{ImageGrid, Mask, ScalarVolume};

const OTSU_BINS: usize = 256;

/// Otsu threshold of values in `[0, 1]` on a 256-bin histogram; returns the
/// upper edge of the last background bin.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    (best_t + 1) as f64 / OTSU_BINS as f64
}

fn neighbours6(dims: [usize; 3], o: usize) -> impl Iterator<Item = usize> {
    let i = o % dims[0];
    let j = (o / dims[0]) % dims[1];
    let k = o / (dims[0] * dims[1]);
    let sx = 1;
    let sy = dims[0];
    let sz = dims[0] * dims[1];
    [
        (i > 0).then(|| o - sx),
        (i + 1 < dims[0]).then(|| o + sx),
        (j > 0).then(|| o - sy),
        (j + 1 < dims[1]).then(|| o + sy),
        (k > 0).then(|| o - sz),
        (k + 1 < dims[2]).then(|| o + sz),
    ]
    .into_iter()
    .flatten()
}

/// Largest 6-connected component; ties go to the component containing the
/// lowest voxel offset.
pub fn largest_component(mask: &Mask) -> Mask {
    let dims = mask.grid().dims();
    let bits = mask.bits();
    let mut comp = vec![u32::MAX; bits.len()];
    let mut best = (0usize, u32::MAX);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || comp[start] != u32::MAX {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(o) = queue.pop_front() {
            size += 1;
            for n in neighbours6(dims, o) {
                if bits[n] && comp[n] == u32::MAX {
                    comp[n] = next;
                    queue.push_back(n);
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
        next += 1;
    }
    let out = comp.iter().map(|&c| c == best.1 && c != u32::MAX).collect();
    Mask::new(mask.grid().clone(), out).expect("same length")
}

fn ball_offsets(radius: usize) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Dilation (`set = true`) or erosion with a voxel ball. Out-of-grid voxels
/// read as unset for dilation and as set for erosion.
fn morph(grid: &ImageGrid, bits: &[bool], radius: usize, dilate: bool) -> Vec<bool> {
    let dims = grid.dims();
    let ball = ball_offsets(radius);
    (0..bits.len())
        .into_par_iter()
        .map(|o| {
            let c = grid.coords(o);
            let hit = ball.iter().any(|d| {
                let q = [0, 1, 2].map(|a| c[a] as i64 + d[a]);
                let inside = (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64);
                let v = if inside { bits[q[0] as usize + dims[0] * (q[1] as usize + dims[1] * q[2] as usize)] } else { !dilate };
                v == dilate
            });
            if dilate { hit } else { !hit }
        })
        .collect()
}

/// Morphological closing with a ball of `radius` voxels.
pub fn close(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let d = morph(mask.grid(), mask.bits(), radius, true);
    let e = morph(mask.grid(), &d, radius, false);
    Mask::new(mask.grid().clone(), e).expect("same length")
}

/// Fills holes in every axial (k = const) slice: unset pixels not
/// 4-connected to the slice border become set.
pub fn fill_holes_axial(mask: &Mask) -> Mask {
    let [nx, ny, nz] = mask.grid().dims();
    let bits = mask.bits();
    let slices: Vec<Vec<bool>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let base = k * nx * ny;
            let mut outside = vec![false; nx * ny];
            let mut queue = VecDeque::new();
            for j in 0..ny {
                for i in 0..nx {
                    if (i == 0 || j == 0 || i + 1 == nx || j + 1 == ny) && !bits[base + i + nx * j] {
                        outside[i + nx * j] = true;
                        queue.push_back((i, j));
                    }
                }
            }
            while let Some((i, j)) = queue.pop_front() {
                let cand = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
                for (a, b) in cand {
                    if a < nx && b < ny && !outside[a + nx * b] && !bits[base + a + nx * b] {
                        outside[a + nx * b] = true;
                        queue.push_back((a, b));
                    }
                }
            }
            outside.into_iter().map(|o| !o).collect()
        })
        .collect();
    Mask::new(mask.grid().clone(), slices.concat()).expect("same length")
}

/// Foreground body mask of a volume.
pub fn body_mask(vol: &ScalarVolume, cfg: &PreprocessConfig) -> Result<Mask> {
    let norm = min_max_normalize(vol);
    let t = match cfg.mask_threshold_mode {
        ThresholdMode::Otsu => otsu_threshold(norm.values()),
        ThresholdMode::Fixed => cfg.fixed_threshold,
    };
    let fg = Mask::new(vol.grid().clone(), norm.values().iter().map(|&v| v > t).collect())?;
    if fg.is_empty() {
        return Err(Error::Empty("body mask foreground"));
    }
    let m = largest_component(&fg);
    let m = close(&m, cfg.morph_radius);
    Ok(fill_holes_axial(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn grid(n: [usize; 3]) -> ImageGrid {
        ImageGrid::axis_aligned(n, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn otsu_bimodal() {
        let mut v = vec![0.1; 500];
        v.extend(vec![0.8; 300]);
        let t = otsu_threshold(&v);
        assert!(t > 0.1 && t <= 0.8, "{t}");
    }

    #[test]
    fn largest_blob_survives() {
        let g = grid([30, 30, 30]);
        // 10³ cube and a 10-voxel rod
        let m = Mask::new(
            g.clone(),
            (0..g.len())
                .map(|o| {
                    let [i, j, k] = g.coords(o);
                    (i < 10 && j < 10 && k < 10) || (i == 20 && j == 20 && (5..15).contains(&k))
                })
                .collect(),
        )
        .unwrap();
        let l = largest_component(&m);
        assert_eq!(l.count(), 1000);
        assert!(!l.get(20, 20, 7));
    }

    #[test]
    fn closing_and_hole_filling() {
        let g = grid([21, 21, 5]);
        let ring = Mask::from_fn(g.clone(), |p| {
            let r = ((p.x - 10.0).powi(2) + (p.y - 10.0).powi(2)).sqrt();
            (4.0..8.0).contains(&r)
        });
        let filled = fill_holes_axial(&ring);
        assert!(filled.get(10, 10, 2));
        assert!(!filled.get(0, 0, 2));
        // a one-voxel gap closes with radius 1
        let mut bits = Mask::from_fn(g.clone(), |p| p.x >= 5.0 && p.x <= 15.0).into_bits();
        for k in 0..5 {
            for j in 0..21 {
                bits[g.offset(10, j, k)] = false;
            }
        }
        let gap = Mask::new(g.clone(), bits).unwrap();
        let closed = close(&gap, 1);
        assert!(closed.get(10, 10, 2));
        assert!(!closed.get(3, 10, 2));
    }

    #[test]
    fn body_mask_of_ellipsoid() {
        let g = ImageGrid::axis_aligned([40, 32, 36], [2.0, 2.0, 2.0], [0.0; 3]).unwrap();
        let c = g.center();
        let inside = |p: &Vec3| ((p.x - c.x) / 30.0).powi(2) + ((p.y - c.y) / 22.0).powi(2) + ((p.z - c.z) / 26.0).powi(2) <= 1.0;
        let vol = ScalarVolume::from_fn(g.clone(), |p| if inside(&p) { 0.6 + 0.1 * (p.x * 0.3).sin() } else { 0.0 });
        let m = body_mask(&vol, &PreprocessConfig::default()).unwrap();
        let truth = Mask::from_fn(g.clone(), |p| inside(&p));
        let inter = m.and(&truth).unwrap().count() as f64;
        let union = (m.count() + truth.count()) as f64 - inter;
        assert!(inter / union >= 0.99);
        assert!(body_mask(&ScalarVolume::filled(g, 0.0), &PreprocessConfig::default()).is_err());
    }
}
