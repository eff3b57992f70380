//! The `synthetic/1` raw format: a JSON document with explicit poses and
//! keypoints.
//!
//! ```json
//! {
//!   "format": "synthetic/1",
//!   "embodiment": "human",
//!   "rate_hz": 30.0,
//!   "start_ns": 0,
//!   "device_poses": [{"q": [1, 0, 0, 0], "t": [0, 0, 0]}],
//!   "hands": [{"left": [[0, 0, 0], ...21], "right": [...]}]
//! }
//! ```
//!
//! Quaternions are `[w, x, y, z]`. `timestamps_ns` may replace `start_ns`.
//! Robot episodes carry `arms` (`{"poses": [...], "gripper": [...]}`, poses in
//! the robot base frame) and `rotation` (`"euler"` or `"quaternion"`); their
//! `device_poses` are the camera poses in the base frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DecodedEpisode, SourceAdapter};
use crate::align::RotationFormat;
use crate::datamodel::{ArmTrack, EffectorTracks, Embodiment, HandFrame, Pose6D, Quaternion, Vec3, KEYPOINTS_PER_HAND};

pub const SYNTHETIC_FORMAT: &str = "synthetic/1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl From<&Pose6D> for PoseDoc {
    fn from(p: &Pose6D) -> Self {
        let r = p.rotation;
        Self {
            q: [r.w, r.x, r.y, r.z],
            t: p.translation,
        }
    }
}

impl PoseDoc {
    fn to_pose(self, what: &str) -> Result<Pose6D, String> {
        let [w, x, y, z] = self.q;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n.is_finite() && n > 1e-9) || self.t.iter().any(|v| !v.is_finite()) {
            return Err(format!("{what} is not a finite rigid transform"));
        }
        Ok(Pose6D::new(q, self.t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDoc {
    pub poses: Vec<PoseDoc>,
    pub gripper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEpisode {
    pub format: String,
    pub embodiment: Embodiment,
    pub rate_hz: f64,
    #[serde(default)]
    pub start_ns: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps_ns: Option<Vec<i64>>,
    pub device_poses: Vec<PoseDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hands: Option<Vec<HandFrame>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<Vec<ArmDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<RotationFormat>,
}

impl SyntheticEpisode {
    pub fn human(rate_hz: f64, device_poses: &[Pose6D], hands: Vec<HandFrame>) -> Self {
        Self {
            format: SYNTHETIC_FORMAT.into(),
            embodiment: Embodiment::Human,
            rate_hz,
            start_ns: 0,
            timestamps_ns: None,
            device_poses: device_poses.iter().map(PoseDoc::from).collect(),
            hands: Some(hands),
            arms: None,
            rotation: None,
        }
    }

    pub fn robot(rate_hz: f64, camera_poses: &[Pose6D], arms: &[ArmTrack], rotation: RotationFormat) -> Self {
        Self {
            format: SYNTHETIC_FORMAT.into(),
            embodiment: Embodiment::Robot,
            rate_hz,
            start_ns: 0,
            timestamps_ns: None,
            device_poses: camera_poses.iter().map(PoseDoc::from).collect(),
            hands: None,
            arms: Some(
                arms.iter()
                    .map(|a| ArmDoc {
                        poses: a.poses.iter().map(PoseDoc::from).collect(),
                        gripper: a.gripper.clone(),
                    })
                    .collect(),
            ),
            rotation: Some(rotation),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("synthetic episode serializes")
    }

    pub fn frame_count(&self) -> usize {
        self.device_poses.len()
    }

    /// Timestamps as listed, or derived from `start_ns` and `rate_hz`.
    pub fn timestamps(&self) -> Vec<i64> {
        match &self.timestamps_ns {
            Some(ts) => ts.clone(),
            None => (0..self.device_poses.len())
                .map(|i| self.start_ns + (i as f64 * 1e9 / self.rate_hz).round() as i64)
                .collect(),
        }
    }

    pub fn decode(&self) -> Result<DecodedEpisode, String> {
        if self.format != SYNTHETIC_FORMAT {
            return Err(format!("expected format {SYNTHETIC_FORMAT:?}, got {:?}", self.format));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        let n = self.device_poses.len();
        if n == 0 {
            return Err("episode has no frames".into());
        }
        let timestamps_ns = self.timestamps();
        if timestamps_ns.len() != n {
            return Err(format!("{} timestamps for {n} device poses", timestamps_ns.len()));
        }
        if timestamps_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err("timestamps are not strictly increasing".into());
        }
        let device_poses = self
            .device_poses
            .iter()
            .enumerate()
            .map(|(i, p)| p.to_pose(&format!("device pose {i}")))
            .collect::<Result<Vec<_>, _>>()?;

        let (effectors, rotation) = match self.embodiment {
            Embodiment::Human => {
                if self.arms.is_some() {
                    return Err("human episode carries arm tracks".into());
                }
                let hands = self.hands.clone().ok_or("human episode without hands")?;
                if hands.len() != n {
                    return Err(format!("{} hand frames for {n} device poses", hands.len()));
                }
                for (i, f) in hands.iter().enumerate() {
                    if f.left.len() != KEYPOINTS_PER_HAND || f.right.len() != KEYPOINTS_PER_HAND {
                        return Err(format!(
                            "hand frame {i} needs {KEYPOINTS_PER_HAND} keypoints per hand"
                        ));
                    }
                    if f.left.iter().chain(&f.right).flatten().any(|v| !v.is_finite()) {
                        return Err(format!("hand frame {i} has non-finite keypoints"));
                    }
                }
                (EffectorTracks::Hands(hands), RotationFormat::Quaternion)
            }
            Embodiment::Robot => {
                if self.hands.is_some() {
                    return Err("robot episode carries hand tracks".into());
                }
                let docs = self.arms.as_ref().ok_or("robot episode without arms")?;
                if docs.is_empty() {
                    return Err("robot episode without arms".into());
                }
                let rotation = self.rotation.ok_or("robot episode without rotation format")?;
                let mut arms = Vec::with_capacity(docs.len());
                for (a, doc) in docs.iter().enumerate() {
                    if doc.poses.len() != n || doc.gripper.len() != n {
                        return Err(format!(
                            "arm {a} has {} poses and {} gripper values for {n} frames",
                            doc.poses.len(),
                            doc.gripper.len()
                        ));
                    }
                    if doc.gripper.iter().any(|g| !g.is_finite()) {
                        return Err(format!("arm {a} gripper has non-finite values"));
                    }
                    let poses = doc
                        .poses
                        .iter()
                        .enumerate()
                        .map(|(i, p)| p.to_pose(&format!("arm {a} pose {i}")))
                        .collect::<Result<Vec<_>, _>>()?;
                    arms.push(ArmTrack {
                        poses,
                        gripper: doc.gripper.clone(),
                    });
                }
                (EffectorTracks::Arms(arms), rotation)
            }
        };
        Ok(DecodedEpisode {
            embodiment: self.embodiment,
            rate_hz: self.rate_hz,
            timestamps_ns,
            device_poses,
            effectors,
            rotation,
        })
    }

    /// Random smooth human capture with a moving head.
    pub fn random_human<R: Rng + ?Sized>(rng: &mut R, frames: usize, rate_hz: f64) -> Self {
        let device = random_walk(rng, frames, 0.02, 0.01);
        let left0 = random_point(rng, 0.3);
        let right0 = random_point(rng, 0.3);
        let hands = (0..frames)
            .map(|i| {
                let s = i as f64 / rate_hz;
                let drift = [0.1 * s.sin(), 0.05 * (2.0 * s).cos(), 0.02 * s];
                HandFrame {
                    left: hand_points(rng, add(left0, drift)),
                    right: hand_points(rng, sub(right0, drift)),
                }
            })
            .collect();
        Self::human(rate_hz, &device, hands)
    }

    /// Random smooth two-arm robot episode seen from a fixed camera.
    pub fn random_robot<R: Rng + ?Sized>(rng: &mut R, frames: usize, rate_hz: f64, rotation: RotationFormat) -> Self {
        let camera = Pose6D::new(random_rotation(rng, 0.6), random_point(rng, 1.0));
        let arms: Vec<ArmTrack> = (0..2)
            .map(|_| {
                let poses = random_walk(rng, frames, 0.03, 0.01);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let gripper = (0..frames)
                    .map(|i| 0.5 + 0.5 * (phase + i as f64 / rate_hz).sin())
                    .collect();
                ArmTrack { poses, gripper }
            })
            .collect();
        Self::robot(rate_hz, &vec![camera; frames], &arms, rotation)
    }
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn random_point<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Vec3 {
    [
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    ]
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Quaternion {
    let axis = random_point(rng, 1.0);
    Quaternion::from_axis_angle(axis, rng.random_range(-max_angle..max_angle))
}

fn random_walk<R: Rng + ?Sized>(rng: &mut R, frames: usize, step_angle: f64, step_len: f64) -> Vec<Pose6D> {
    let mut pose = Pose6D::new(random_rotation(rng, 0.5), random_point(rng, 0.5));
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        out.push(pose);
        let step = Pose6D::new(random_rotation(rng, step_angle), random_point(rng, step_len));
        pose = pose.compose(&step);
    }
    out
}

fn hand_points<R: Rng + ?Sized>(rng: &mut R, wrist: Vec3) -> Vec<Vec3> {
    let mut pts = vec![wrist];
    pts.extend((1..KEYPOINTS_PER_HAND).map(|_| add(wrist, random_point(rng, 0.08))));
    pts
}

pub struct SyntheticAdapter;

impl SourceAdapter for SyntheticAdapter {
    fn id(&self) -> &str {
        SYNTHETIC_FORMAT
    }

    fn decode(&self, raw: &[u8]) -> Result<DecodedEpisode, String> {
        serde_json::from_slice::<SyntheticEpisode>(raw)
            .map_err(|e| e.to_string())?
            .decode()
    }
}
