//! Training-ready episode container.
//!
//! Layout of an encoded episode:
//!
//! ```text
//! "EGOV" | u32 LE header length | header (JSON) | body
//! ```
//!
//! The header carries the format version, the episode description and an
//! index of body sections. Every section is a flat little-endian array:
//!
//! | section          | element | shape                          |
//! |------------------|---------|--------------------------------|
//! | `timestamps`     | i64     | frames                         |
//! | `device_poses`   | f64     | frames × 7 (qw qx qy qz tx ty tz) |
//! | `hands`          | f64     | frames × 2 × keypoints × 3 (left, right) |
//! | `arm{i}_poses`   | f64     | frames × 7                     |
//! | `arm{i}_gripper` | f64     | frames                         |
//! | `actions`        | f64     | frames × T × D                 |
//!
//! Section offsets are relative to the start of the body.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chunk::{ActionChunk, ActionLayout};
use super::pose::{Pose6D, Quaternion, Vec3};
use super::record::Embodiment;
use super::DataModelError;

pub const FORMAT_VERSION: &str = "egoverse-canonical/1";
pub const KEYPOINTS_PER_HAND: usize = 21;
const MAGIC: &[u8; 4] = b"EGOV";
const POSE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("truncated stream: needed {needed} bytes, found {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("not a canonical episode container")]
    BadMagic,
    #[error("unsupported format version {0:?}")]
    UnsupportedVersion(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl From<DataModelError> for CodecError {
    fn from(e: DataModelError) -> Self {
        match e {
            DataModelError::Invariant(m) | DataModelError::InvalidArgument(m) => CodecError::Invariant(m),
        }
    }
}

/// 21 keypoints for each hand, in the capture device frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandFrame {
    pub left: Vec<Vec3>,
    pub right: Vec<Vec3>,
}

/// Per-frame hand keypoints with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct HandTrack {
    timestamps_ns: Vec<i64>,
    frames: Vec<HandFrame>,
}

impl HandTrack {
    pub fn new(timestamps_ns: Vec<i64>, frames: Vec<HandFrame>) -> Result<Self, DataModelError> {
        if timestamps_ns.len() != frames.len() {
            return Err(DataModelError::Invariant(format!(
                "{} timestamps for {} hand frames",
                timestamps_ns.len(),
                frames.len()
            )));
        }
        check_increasing(&timestamps_ns)?;
        for (i, f) in frames.iter().enumerate() {
            check_hand_frame(i, f)?;
        }
        Ok(Self { timestamps_ns, frames })
    }

    pub fn timestamps_ns(&self) -> &[i64] {
        &self.timestamps_ns
    }

    pub fn frames(&self) -> &[HandFrame] {
        &self.frames
    }

    pub fn into_parts(self) -> (Vec<i64>, Vec<HandFrame>) {
        (self.timestamps_ns, self.frames)
    }
}

/// End-effector pose in the robot base frame plus gripper command, per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmTrack {
    pub poses: Vec<Pose6D>,
    pub gripper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EffectorTracks {
    Hands(Vec<HandFrame>),
    Arms(Vec<ArmTrack>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub episode_hash: String,
    pub embodiment: Embodiment,
    pub rate_hz: f64,
    /// Rows per action chunk.
    pub chunk_length: usize,
    /// Columns per action chunk.
    pub action_dim: usize,
    pub layout: ActionLayout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub raw_digest: String,
    pub processing_version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalEpisode {
    pub header: EpisodeHeader,
    pub timestamps_ns: Vec<i64>,
    pub device_poses: Vec<Pose6D>,
    pub effectors: EffectorTracks,
    /// One chunk anchored at each frame.
    pub actions: Vec<ActionChunk>,
    pub provenance: Provenance,
}

impl CanonicalEpisode {
    pub fn frame_count(&self) -> usize {
        self.timestamps_ns.len()
    }

    pub fn validate(&self) -> Result<(), DataModelError> {
        let n = self.timestamps_ns.len();
        let h = &self.header;
        let bad = |m: String| Err(DataModelError::Invariant(m));
        if n == 0 {
            return bad("episode has no frames".into());
        }
        if !(h.rate_hz.is_finite() && h.rate_hz > 0.0) {
            return bad(format!("rate_hz must be positive, got {}", h.rate_hz));
        }
        if h.layout.width() != h.action_dim {
            return bad(format!(
                "layout width {} does not match action_dim {}",
                h.layout.width(),
                h.action_dim
            ));
        }
        check_increasing(&self.timestamps_ns)?;
        if self.device_poses.len() != n {
            return bad(format!("{} device poses for {n} frames", self.device_poses.len()));
        }
        for (i, p) in self.device_poses.iter().enumerate() {
            check_pose(&format!("device pose {i}"), p)?;
        }
        match (&self.effectors, h.embodiment) {
            (EffectorTracks::Hands(frames), Embodiment::Human) => {
                if frames.len() != n {
                    return bad(format!("{} hand frames for {n} frames", frames.len()));
                }
                for (i, f) in frames.iter().enumerate() {
                    check_hand_frame(i, f)?;
                }
            }
            (EffectorTracks::Arms(arms), Embodiment::Robot) => {
                if arms.is_empty() {
                    return bad("robot episode without arm tracks".into());
                }
                for (a, arm) in arms.iter().enumerate() {
                    if arm.poses.len() != n || arm.gripper.len() != n {
                        return bad(format!(
                            "arm {a} has {} poses and {} gripper values for {n} frames",
                            arm.poses.len(),
                            arm.gripper.len()
                        ));
                    }
                    for (i, p) in arm.poses.iter().enumerate() {
                        check_pose(&format!("arm {a} pose {i}"), p)?;
                    }
                    if arm.gripper.iter().any(|g| !g.is_finite()) {
                        return bad(format!("arm {a} gripper has non-finite values"));
                    }
                }
            }
            (_, e) => return bad(format!("effector tracks do not match embodiment {e}")),
        }
        if self.actions.len() != n {
            return bad(format!("{} action chunks for {n} frames", self.actions.len()));
        }
        for (i, c) in self.actions.iter().enumerate() {
            if c.len() != h.chunk_length || c.dim() != h.action_dim || c.layout() != &h.layout {
                return bad(format!(
                    "action chunk {i} is {}x{}, header declares {}x{}",
                    c.len(),
                    c.dim(),
                    h.chunk_length,
                    h.action_dim
                ));
            }
        }
        Ok(())
    }
}

fn check_increasing(ts: &[i64]) -> Result<(), DataModelError> {
    match ts.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(DataModelError::Invariant(format!(
            "timestamps not strictly increasing at index {}",
            i + 1
        ))),
        None => Ok(()),
    }
}

fn check_hand_frame(i: usize, f: &HandFrame) -> Result<(), DataModelError> {
    if f.left.len() != KEYPOINTS_PER_HAND || f.right.len() != KEYPOINTS_PER_HAND {
        return Err(DataModelError::Invariant(format!(
            "frame {i} has {}/{} keypoints per hand, expected {KEYPOINTS_PER_HAND}",
            f.left.len(),
            f.right.len()
        )));
    }
    if f.left.iter().chain(&f.right).flatten().any(|v| !v.is_finite()) {
        return Err(DataModelError::Invariant(format!("frame {i} has non-finite keypoints")));
    }
    Ok(())
}

fn check_pose(what: &str, p: &Pose6D) -> Result<(), DataModelError> {
    if !p.is_finite() || (p.rotation.norm() - 1.0).abs() > POSE_TOLERANCE {
        return Err(DataModelError::Invariant(format!("{what} is not a unit rigid transform")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EffectorHeader {
    Hands { keypoints_per_hand: usize },
    Arms { arm_count: usize },
}

#[derive(Serialize, Deserialize)]
struct Section {
    name: String,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    format: String,
    #[serde(flatten)]
    episode: EpisodeHeader,
    frame_count: usize,
    effector: EffectorHeader,
    provenance: Provenance,
    sections: Vec<Section>,
}

pub fn encode_canonical(ep: &CanonicalEpisode) -> Result<Vec<u8>, CodecError> {
    ep.validate()?;
    Ok(encode_unchecked(ep))
}

pub(crate) fn encode_unchecked(ep: &CanonicalEpisode) -> Vec<u8> {
    let mut body = Vec::new();
    let mut sections = Vec::new();
    let mut section = |name: String, bytes: Vec<u8>, body: &mut Vec<u8>| {
        sections.push(Section {
            name,
            offset: body.len() as u64,
            length: bytes.len() as u64,
        });
        body.extend_from_slice(&bytes);
    };

    section(
        "timestamps".into(),
        ep.timestamps_ns.iter().flat_map(|t| t.to_le_bytes()).collect(),
        &mut body,
    );
    section("device_poses".into(), pose_bytes(&ep.device_poses), &mut body);
    let effector = match &ep.effectors {
        EffectorTracks::Hands(frames) => {
            let kp = frames.first().map_or(KEYPOINTS_PER_HAND, |f| f.left.len());
            let values = frames
                .iter()
                .flat_map(|f| f.left.iter().chain(&f.right))
                .flatten()
                .copied();
            section("hands".into(), f64_bytes(values), &mut body);
            EffectorHeader::Hands { keypoints_per_hand: kp }
        }
        EffectorTracks::Arms(arms) => {
            for (i, arm) in arms.iter().enumerate() {
                section(format!("arm{i}_poses"), pose_bytes(&arm.poses), &mut body);
                section(format!("arm{i}_gripper"), f64_bytes(arm.gripper.iter().copied()), &mut body);
            }
            EffectorHeader::Arms { arm_count: arms.len() }
        }
    };
    let actions = ep.actions.iter().flat_map(|c| c.values().iter().copied());
    section("actions".into(), f64_bytes(actions), &mut body);

    let header = ContainerHeader {
        format: FORMAT_VERSION.to_owned(),
        episode: ep.header.clone(),
        frame_count: ep.timestamps_ns.len(),
        effector,
        provenance: ep.provenance.clone(),
        sections,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    out
}

fn f64_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn pose_bytes(poses: &[Pose6D]) -> Vec<u8> {
    f64_bytes(poses.iter().flat_map(|p| {
        let q = p.rotation;
        let t = p.translation;
        [q.w, q.x, q.y, q.z, t[0], t[1], t[2]]
    }))
}

pub fn decode_canonical(bytes: &[u8]) -> Result<CanonicalEpisode, CodecError> {
    let truncated = |needed: usize| CodecError::Truncated {
        needed: needed as u64,
        available: bytes.len() as u64,
    };
    if bytes.len() < 8 {
        return Err(truncated(8));
    }
    if &bytes[..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8 + header_len;
    if bytes.len() < header_end {
        return Err(truncated(header_end));
    }
    let raw: serde_json::Value = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| CodecError::MalformedHeader(e.to_string()))?;
    match raw.get("format").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(CodecError::UnsupportedVersion(other.to_owned())),
        None => return Err(CodecError::MalformedHeader("missing format".into())),
    }
    let header: ContainerHeader =
        serde_json::from_value(raw).map_err(|e| CodecError::MalformedHeader(e.to_string()))?;
    let body = &bytes[header_end..];

    let section = |name: &str, expected_elems: usize| -> Result<&[u8], CodecError> {
        let s = header
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CodecError::MalformedHeader(format!("missing section {name}")))?;
        let expected = expected_elems as u64 * 8;
        if s.length != expected {
            return Err(CodecError::Invariant(format!(
                "section {name} holds {} bytes, header shape implies {expected}",
                s.length
            )));
        }
        let end = s.offset.checked_add(s.length)
            .ok_or_else(|| CodecError::MalformedHeader(format!("section {name} overflows")))?;
        if end > body.len() as u64 {
            return Err(truncated(header_end + end as usize));
        }
        Ok(&body[s.offset as usize..end as usize])
    };

    let n = header.frame_count;
    let ep = &header.episode;
    let timestamps_ns: Vec<i64> = section("timestamps", n)?
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let device_poses = read_poses(section("device_poses", n * 7)?);
    let effectors = match header.effector {
        EffectorHeader::Hands { keypoints_per_hand: kp } => {
            let values = read_f64(section("hands", n * 2 * kp * 3)?);
            let points: Vec<Vec3> = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            let frames = if kp == 0 {
                vec![HandFrame { left: vec![], right: vec![] }; n]
            } else {
                points
                    .chunks_exact(2 * kp)
                    .map(|f| HandFrame {
                        left: f[..kp].to_vec(),
                        right: f[kp..].to_vec(),
                    })
                    .collect()
            };
            EffectorTracks::Hands(frames)
        }
        EffectorHeader::Arms { arm_count } => {
            let mut arms = Vec::with_capacity(arm_count);
            for i in 0..arm_count {
                arms.push(ArmTrack {
                    poses: read_poses(section(&format!("arm{i}_poses"), n * 7)?),
                    gripper: read_f64(section(&format!("arm{i}_gripper"), n)?),
                });
            }
            EffectorTracks::Arms(arms)
        }
    };
    let per_chunk = ep.chunk_length * ep.action_dim;
    let action_values = read_f64(section("actions", n * per_chunk)?);
    let mut actions = Vec::with_capacity(n);
    for i in 0..n {
        let slice = &action_values[i * per_chunk..(i + 1) * per_chunk];
        let values = Array2::from_shape_vec((ep.chunk_length, ep.action_dim), slice.to_vec())
            .map_err(|e| CodecError::Invariant(e.to_string()))?;
        actions.push(ActionChunk::new(values, ep.layout.clone())?);
    }
    let episode = CanonicalEpisode {
        header: header.episode,
        timestamps_ns,
        device_poses,
        effectors,
        actions,
        provenance: header.provenance,
    };
    episode.validate()?;
    Ok(episode)
}

fn read_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn read_poses(bytes: &[u8]) -> Vec<Pose6D> {
    read_f64(bytes)
        .chunks_exact(7)
        .map(|c| Pose6D {
            rotation: Quaternion::new(c[0], c[1], c[2], c[3]),
            translation: [c[4], c[5], c[6]],
        })
        .collect()
}
