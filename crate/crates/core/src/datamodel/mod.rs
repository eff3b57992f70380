//! Shared domain types: rigid transforms, action chunks, episode metadata
//! and the canonical episode container.

mod canonical;
mod chunk;
mod pose;
mod record;

use thiserror::Error;

pub use canonical::{
    decode_canonical, encode_canonical, ArmTrack, CanonicalEpisode, CodecError, EffectorTracks,
    EpisodeHeader, HandFrame, HandTrack, Provenance, FORMAT_VERSION, KEYPOINTS_PER_HAND,
};
pub use chunk::{ActionChunk, ActionLayout, ChannelGroup, QUATERNION_NORM_TOLERANCE};
pub(crate) use chunk::{quat_from_row, quat_to_slice};
pub use pose::{Pose6D, Quaternion, Vec3};
pub use record::{make_episode_hash, validate_metadata, Embodiment, EpisodeRecord, Verdict, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}
