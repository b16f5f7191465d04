//! Exact squared Euclidean distance transform on anisotropic grids, by
//! separable lower envelopes of parabolas (Felzenszwalb & Huttenlocher).

use rayon::prelude::*;

use crate::volume::Mask;

/// 1-D pass over `f` sampled at `i · h`, in place.
fn envelope(f: &mut [f64], h: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    out.clear();
    out.resize(n, f64::INFINITY);
    let pos = |i: usize| i as f64 * h;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            // abscissa where the parabolas rooted at p and q meet
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
    f.copy_from_slice(out);
}

/// Thread dispatch costs more than the transform on tiny grids.
const SERIAL_BELOW: usize = 1 << 14;

fn serial(dist: &mut [f64], d: [usize; 3], h: [f64; 3]) {
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let stride = [1, d[0], d[0] * d[1]];
    let mut line = Vec::new();
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        for j in 0..d[b] {
            for k in 0..d[c] {
                let base = j * stride[b] + k * stride[c];
                line.clear();
                line.extend((0..d[a]).map(|i| dist[base + i * stride[a]]));
                envelope(&mut line, h[a], &mut v, &mut z, &mut out);
                for (i, &x) in line.iter().enumerate() {
                    dist[base + i * stride[a]] = x;
                }
            }
        }
    }
}

/// Squared world distance from every voxel center to the nearest set voxel
/// of `features`; infinite everywhere when `features` is empty.
pub(crate) fn squared_edt(features: &Mask) -> Vec<f64> {
    let grid = features.grid();
    let d = grid.dims();
    let s = grid.spacing();
    let mut dist: Vec<f64> = features.bits().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    if dist.len() < SERIAL_BELOW {
        serial(&mut dist, d, [s.x, s.y, s.z]);
        return dist;
    }
    // x lines are contiguous
    dist.par_chunks_mut(d[0]).for_each_init(
        || (Vec::new(), Vec::new(), Vec::new()),
        |(v, z, out), line| envelope(line, s.x, v, z, out),
    );
    // y and z lines: gather, transform, scatter, one z-slab per task
    let slab = d[0] * d[1];
    dist.par_chunks_mut(slab).for_each_init(
        || (Vec::new(), Vec::new(), Vec::new(), vec![0.0; d[1]]),
        |(v, z, out, line), sl| {
            for i in 0..d[0] {
                for j in 0..d[1] {
                    line[j] = sl[i + d[0] * j];
                }
                envelope(line, s.y, v, z, out);
                for j in 0..d[1] {
                    sl[i + d[0] * j] = line[j];
                }
            }
        },
    );
    let columns: Vec<Vec<f64>> = (0..slab)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new(), Vec::new()),
            |(v, z, out), c| {
                let mut line: Vec<f64> = (0..d[2]).map(|k| dist[c + slab * k]).collect();
                envelope(&mut line, s.z, v, z, out);
                line
            },
        )
        .collect();
    for (c, col) in columns.iter().enumerate() {
        for (k, &x) in col.iter().enumerate() {
            dist[c + slab * k] = x;
        }
    }
    dist
}
