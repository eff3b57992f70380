//! Alignment math shared by processing and evaluation.

mod actions;
mod interp;
mod metrics;
mod quantile;

use thiserror::Error;

use crate::datamodel::Pose6D;

pub use actions::{
    anchor_relative_poses, arm_layout, build_human_action_chunk, camera_frame_action, RotationFormat,
};
pub use interp::{resample_chunk, slerp, TimedTrack, WindowSpec, SLERP_LINEAR_THRESHOLD};
pub use metrics::{avg_mse, mean_avg_mse, normalized_score};
pub use quantile::{quantile_denormalize, quantile_normalize, quantile_stats, QuantileStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: window needs {window_ns} ns of samples, track spans {available_ns} ns (short by {} ns)", window_ns - available_ns)]
    InsufficientData { window_ns: i64, available_ns: i64 },
}

/// `a ∘ b`.
pub fn pose_compose(a: &Pose6D, b: &Pose6D) -> Pose6D {
    a.compose(b)
}

pub fn pose_inverse(a: &Pose6D) -> Pose6D {
    a.inverse()
}
