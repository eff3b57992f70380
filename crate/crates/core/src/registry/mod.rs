//! Episode metadata registry.
//!
//! [`Registry`] is the contract used by ingest, processing and sync. The
//! embedded [`SqliteRegistry`] implements it directly; remote clients
//! implement it over HTTP.

mod sqlite;

use std::fmt;
use std::str::FromStr;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Embodiment, EpisodeRecord, Violation};

pub use sqlite::SqliteRegistry;

/// Conjunction of optional constraints. The default filter matches everything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lab: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embodiment: Option<Embodiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_deleted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_eval: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_processed_path: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_processing_error: Option<bool>,
    /// ASCII case-insensitive substring of `task_description`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl EpisodeFilter {
    pub fn is_empty(&self) -> bool {
        self == &EpisodeFilter::default()
    }
}

/// Result of an automated processing attempt. Exactly one of
/// `processed_path` and `processing_error` must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessingOutcome {
    #[serde(default)]
    pub processed_path: Option<String>,
    #[serde(default)]
    pub num_frames: Option<u64>,
    #[serde(default)]
    pub mp4_path: Option<String>,
    #[serde(default)]
    pub processing_error: Option<String>,
}

impl ProcessingOutcome {
    pub fn success(processed_path: impl Into<String>, num_frames: u64, mp4_path: Option<String>) -> Self {
        Self {
            processed_path: Some(processed_path.into()),
            num_frames: Some(num_frames),
            mp4_path,
            processing_error: None,
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            processing_error: Some(message.into()),
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<(), RegistryError> {
        match (&self.processed_path, &self.processing_error) {
            (Some(_), Some(_)) => Err(RegistryError::InvalidArgument(
                "outcome sets both processed_path and processing_error".into(),
            )),
            (None, None) => Err(RegistryError::InvalidArgument(
                "outcome sets neither processed_path nor processing_error".into(),
            )),
            (None, Some(_)) if self.num_frames.is_some() || self.mp4_path.is_some() => {
                Err(RegistryError::InvalidArgument(
                    "failure outcome carries success fields".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn is_success(&self) -> bool {
        self.processed_path.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub id: i64,
    /// False when an identical record was already present.
    pub created: bool,
}

/// A record plus registry-internal bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub record: EpisodeRecord,
    /// Failed processing attempts so far.
    pub processing_attempts: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Lab,
    Task,
    Embodiment,
    Scene,
    Operator,
}

impl GroupBy {
    pub const ALL: [GroupBy; 5] = [
        GroupBy::Lab,
        GroupBy::Task,
        GroupBy::Embodiment,
        GroupBy::Scene,
        GroupBy::Operator,
    ];

    pub fn column(&self) -> &'static str {
        match self {
            GroupBy::Lab => "lab",
            GroupBy::Task => "task",
            GroupBy::Embodiment => "embodiment",
            GroupBy::Scene => "scene",
            GroupBy::Operator => "operator",
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for GroupBy {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupBy::ALL
            .into_iter()
            .find(|g| g.column() == s)
            .ok_or_else(|| RegistryError::InvalidArgument(format!("cannot group by {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub episodes: u64,
    pub total_frames: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("validation failed: {}", join_violations(.0))]
    Validation(Vec<Violation>),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
}

impl RegistryError {
    /// Stable machine-readable name, used in HTTP error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            RegistryError::Validation(_) => "validation",
            RegistryError::Conflict(_) => "conflict",
            RegistryError::NotFound(_) => "not_found",
            RegistryError::Precondition(_) => "precondition",
            RegistryError::InvalidArgument(_) => "invalid_argument",
            RegistryError::Storage(_) => "storage",
            RegistryError::Transport { .. } => "transport",
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            RegistryError::Transport { retryable, .. } => *retryable,
            RegistryError::Storage(_) => true,
            _ => false,
        }
    }
}

#[async_trait]
pub trait Registry: Send + Sync {
    /// Idempotent for a record whose upload fields match the stored row.
    async fn register_episode(&self, record: &EpisodeRecord) -> Result<Registration, RegistryError>;

    async fn update_processing(
        &self,
        episode_hash: &str,
        outcome: &ProcessingOutcome,
    ) -> Result<EpisodeRecord, RegistryError>;

    /// Matching records ordered by (lab, task, episode_hash). Deleted records
    /// are dropped before the filter applies unless `include_deleted`.
    async fn query(&self, filter: &EpisodeFilter, include_deleted: bool) -> Result<Vec<EpisodeRecord>, RegistryError>;

    async fn get(&self, episode_hash: &str) -> Result<EpisodeRow, RegistryError>;

    async fn mark_deleted(&self, episode_hash: &str) -> Result<EpisodeRecord, RegistryError>;

    async fn record_eval(
        &self,
        episode_hash: &str,
        eval_score: f64,
        eval_success: bool,
    ) -> Result<EpisodeRecord, RegistryError>;

    /// Counts and frame totals over live records, ordered by group value.
    async fn stats(&self, group_by: GroupBy) -> Result<Vec<GroupStats>, RegistryError>;
}
