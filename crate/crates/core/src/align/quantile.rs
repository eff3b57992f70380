use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::AlignError;

/// Per-feature low/high quantiles used to map features onto [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileStats {
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    /// Features whose quantiles coincide. They normalize to 0.
    pub degenerate: Vec<usize>,
}

impl QuantileStats {
    pub fn new(q_lo: Vec<f64>, q_hi: Vec<f64>) -> Result<Self, AlignError> {
        if q_lo.len() != q_hi.len() {
            return Err(AlignError::InvalidArgument(format!(
                "q_lo has {} features, q_hi has {}",
                q_lo.len(),
                q_hi.len()
            )));
        }
        if let Some(i) = (0..q_lo.len()).find(|&i| q_lo[i].partial_cmp(&q_hi[i]).is_none_or(|o| o.is_gt())) {
            return Err(AlignError::InvalidArgument(format!(
                "feature {i}: q_lo {} exceeds q_hi {}",
                q_lo[i], q_hi[i]
            )));
        }
        let degenerate = (0..q_lo.len()).filter(|&i| q_lo[i] == q_hi[i]).collect();
        Ok(Self { q_lo, q_hi, degenerate })
    }

    pub fn dim(&self) -> usize {
        self.q_lo.len()
    }
}

/// Empirical quantile of sorted data, interpolating linearly between the two
/// closest order statistics at rank `(n - 1) * p`.
fn linear_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-column quantiles of an N×D sample matrix.
pub fn quantile_stats(samples: ArrayView2<f64>, lo: f64, hi: f64) -> Result<QuantileStats, AlignError> {
    if samples.nrows() < 2 {
        return Err(AlignError::InvalidArgument(format!(
            "need at least 2 samples, got {}",
            samples.nrows()
        )));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(AlignError::InvalidArgument(format!(
            "quantile levels must satisfy 0 <= lo < hi <= 1, got {lo}, {hi}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(AlignError::InvalidArgument("samples contain non-finite values".into()));
    }
    let mut q_lo = Vec::with_capacity(samples.ncols());
    let mut q_hi = Vec::with_capacity(samples.ncols());
    for col in samples.columns() {
        let mut sorted = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        q_lo.push(linear_quantile(&sorted, lo));
        q_hi.push(linear_quantile(&sorted, hi));
    }
    QuantileStats::new(q_lo, q_hi)
}

fn check_dim(x: &ArrayView1<f64>, stats: &QuantileStats) -> Result<(), AlignError> {
    if x.len() != stats.dim() {
        return Err(AlignError::InvalidArgument(format!(
            "vector has {} features, stats have {}",
            x.len(),
            stats.dim()
        )));
    }
    Ok(())
}

/// `2 * (x - q_lo) / (q_hi - q_lo) - 1`, with degenerate features mapped to 0.
pub fn quantile_normalize(x: ArrayView1<f64>, stats: &QuantileStats) -> Result<Array1<f64>, AlignError> {
    check_dim(&x, stats)?;
    Ok(Array1::from_iter(x.iter().enumerate().map(|(i, &v)| {
        let (lo, hi) = (stats.q_lo[i], stats.q_hi[i]);
        if hi == lo {
            0.0
        } else {
            2.0 * ((v - lo) / (hi - lo)) - 1.0
        }
    })))
}

/// Inverse of [`quantile_normalize`]. Degenerate features return `q_lo`.
pub fn quantile_denormalize(x: ArrayView1<f64>, stats: &QuantileStats) -> Result<Array1<f64>, AlignError> {
    check_dim(&x, stats)?;
    Ok(Array1::from_iter(x.iter().enumerate().map(|(i, &v)| {
        let (lo, hi) = (stats.q_lo[i], stats.q_hi[i]);
        if hi == lo {
            lo
        } else {
            (v + 1.0) / 2.0 * (hi - lo) + lo
        }
    })))
}
