use ndarray::ArrayView2;

use super::AlignError;

/// Squared error per timestep averaged over the D action dimensions, then
/// averaged over the T timesteps.
pub fn avg_mse(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64, AlignError> {
    if pred.shape() != gt.shape() {
        return Err(AlignError::InvalidArgument(format!(
            "shape mismatch: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (t, d) = pred.dim();
    if t == 0 || d == 0 {
        return Err(AlignError::InvalidArgument("empty action sequence".into()));
    }
    let per_step = pred.rows().into_iter().zip(gt.rows()).map(|(p, g)| {
        p.iter().zip(g.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d as f64
    });
    Ok(per_step.sum::<f64>() / t as f64)
}

/// Plain mean of per-episode Avg-MSE values.
pub fn mean_avg_mse(per_episode: &[f64]) -> Option<f64> {
    if per_episode.is_empty() {
        None
    } else {
        Some(per_episode.iter().sum::<f64>() / per_episode.len() as f64)
    }
}

/// Points scored over the maximum possible, clamped to 1.
pub fn normalized_score(points: f64, max_points: f64) -> Result<f64, AlignError> {
    if !(max_points > 0.0 && max_points.is_finite()) {
        return Err(AlignError::InvalidArgument(format!(
            "max_points must be positive, got {max_points}"
        )));
    }
    if !(points >= 0.0 && points.is_finite()) {
        return Err(AlignError::InvalidArgument(format!(
            "points must be non-negative, got {points}"
        )));
    }
    Ok((points / max_points).min(1.0))
}
