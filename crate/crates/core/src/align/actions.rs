use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::datamodel::{ActionChunk, ActionLayout, ChannelGroup, Pose6D, Vec3};

/// Future hand points re-expressed in the device frame of the anchor.
///
/// `device_track[i]` and `hand_points[i]` describe frame `t + i`; each point
/// set is in the device frame of its own timestep. Row `i - 1` of the result
/// is `inverse(T_t) * T_{t+i} * p_{t+i}` for `i = 1..=k`, with all points of a
/// frame stacked into one row. The anchor frame itself produces no row.
pub fn build_human_action_chunk(
    device_track: &[Pose6D],
    hand_points: &[Vec<Vec3>],
) -> Result<ActionChunk, AlignError> {
    if device_track.len() != hand_points.len() {
        return Err(AlignError::InvalidArgument(format!(
            "{} device poses but {} hand point sets",
            device_track.len(),
            hand_points.len()
        )));
    }
    if device_track.len() < 2 {
        return Err(AlignError::InvalidArgument(
            "need the anchor frame and at least one future frame (k >= 1)".into(),
        ));
    }
    let points_per_frame = hand_points[0].len();
    if points_per_frame == 0 || hand_points.iter().any(|p| p.len() != points_per_frame) {
        return Err(AlignError::InvalidArgument(
            "every frame must carry the same non-zero number of points".into(),
        ));
    }

    let anchor_inv = device_track[0].inverse();
    let k = device_track.len() - 1;
    let mut values = Array2::zeros((k, 3 * points_per_frame));
    for (row, (pose, points)) in device_track.iter().zip(hand_points).skip(1).enumerate() {
        let relative = anchor_inv.compose(pose);
        for (j, p) in points.iter().enumerate() {
            let q = relative.transform_point(*p);
            for c in 0..3 {
                values[[row, 3 * j + c]] = q[c];
            }
        }
    }
    ActionChunk::new(values, ActionLayout::positions(points_per_frame))
        .map_err(|e| AlignError::InvalidArgument(e.to_string()))
}

/// Pose-valued counterpart of [`build_human_action_chunk`]: for `i = 1..=k`,
/// `inverse(T_t) * T_{t+i} * P_{t+i}`.
pub fn anchor_relative_poses(
    device_track: &[Pose6D],
    poses: &[Pose6D],
) -> Result<Vec<Pose6D>, AlignError> {
    if device_track.len() != poses.len() {
        return Err(AlignError::InvalidArgument(format!(
            "{} device poses but {} effector poses",
            device_track.len(),
            poses.len()
        )));
    }
    if device_track.len() < 2 {
        return Err(AlignError::InvalidArgument("k must be at least 1".into()));
    }
    let anchor_inv = device_track[0].inverse();
    Ok(device_track
        .iter()
        .zip(poses)
        .skip(1)
        .map(|(t, p)| anchor_inv.compose(t).compose(p))
        .collect())
}

/// How a robot arm's rotation is written into an action row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationFormat {
    /// x, y, z, yaw, pitch, roll, gripper
    Euler,
    /// x, y, z, qx, qy, qz, qw, gripper
    Quaternion,
}

/// Column groups for one arm.
pub fn arm_layout(format: RotationFormat) -> [ChannelGroup; 3] {
    let rot = match format {
        RotationFormat::Euler => ChannelGroup::EulerZyx,
        RotationFormat::Quaternion => ChannelGroup::Quaternion,
    };
    [ChannelGroup::Position, rot, ChannelGroup::Gripper]
}

/// End-effector pose expressed in the camera frame and serialized as one
/// action row. `camera_in_base` is the camera pose in the robot base frame.
pub fn camera_frame_action(
    ee_pose_base: &Pose6D,
    camera_in_base: &Pose6D,
    format: RotationFormat,
    gripper: f64,
) -> Vec<f64> {
    let ee = camera_in_base.inverse().compose(ee_pose_base);
    let [x, y, z] = ee.translation;
    match format {
        RotationFormat::Euler => {
            let (yaw, pitch, roll) = ee.rotation.to_euler_zyx();
            vec![x, y, z, yaw, pitch, roll, gripper]
        }
        RotationFormat::Quaternion => {
            let q = ee.rotation;
            vec![x, y, z, q.x, q.y, q.z, q.w, gripper]
        }
    }
}
