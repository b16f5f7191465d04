//! Deterministic parallel reductions.
//!
//! Floating-point sums are formed over fixed-size chunks whose partial
//! results are combined in index order, so the value never depends on the
//! number of worker threads.

use rayon::prelude::*;

use crate::Vec3;

pub(crate) const CHUNK: usize = 4096;

pub(crate) fn sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// Sum of `f(i)` for `i` in `0..n`.
pub(crate) fn sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(n);
            (c * CHUNK..end).map(&f).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

pub(crate) fn sum_vec3_by<F>(n: usize, f: F) -> Vec3
where
    F: Fn(usize) -> Vec3 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Vec3> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(n);
            (c * CHUNK..end).map(&f).fold(Vec3::zeros(), |a, b| a + b)
        })
        .collect();
    partial.iter().fold(Vec3::zeros(), |a, b| a + b)
}
