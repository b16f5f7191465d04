//! Benjamini–Hochberg step-up procedure.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BhResult {
    pub rejected: Vec<bool>,
    /// Largest rejected p-value, if any.
    pub threshold: Option<f64>,
    /// BH-adjusted p-values, capped at 1.
    pub adjusted: Vec<f64>,
}

/// Rejects every p-value `≤ p_(k)` for the largest `k` with
/// `p_(k) ≤ k q / m`.
pub fn fdr_bh(p: &[f64], q: f64) -> Result<BhResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("fdr level must lie in (0, 1), got {q}")));
    }
    if let Some(bad) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("p-value {} at index {bad} is outside [0, 1]", p[bad])));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mf = m as f64;
    let k = (1..=m).rev().find(|&k| p[order[k - 1]] <= k as f64 * q / mf);
    let threshold = k.map(|k| p[order[k - 1]]);
    let rejected = p.iter().map(|&v| threshold.is_some_and(|t| v <= t)).collect();
    // running minimum from the largest p down
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for r in (0..m).rev() {
        let i = order[r];
        running = running.min(p[i] * mf / (r + 1) as f64);
        adjusted[i] = running;
    }
    Ok(BhResult { rejected, threshold, adjusted })
}
