use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embodiment {
    Human,
    Robot,
}

impl Embodiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Embodiment::Human => "human",
            Embodiment::Robot => "robot",
        }
    }
}

impl fmt::Display for Embodiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Embodiment {
    type Err = DataModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(Embodiment::Human),
            "robot" => Ok(Embodiment::Robot),
            other => Err(DataModelError::InvalidArgument(format!(
                "unknown embodiment {other:?}"
            ))),
        }
    }
}

/// One row of episode metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_hash: String,
    pub operator: String,
    pub lab: String,
    pub task: String,
    pub embodiment: Embodiment,
    #[serde(default)]
    pub robot_name: Option<String>,
    #[serde(default)]
    pub num_frames: Option<u64>,
    #[serde(default)]
    pub task_description: String,
    pub scene: String,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub processed_path: Option<String>,
    #[serde(default)]
    pub processing_error: Option<String>,
    #[serde(default)]
    pub mp4_path: Option<String>,
    #[serde(default)]
    pub is_deleted: bool,
    #[serde(default)]
    pub is_eval: bool,
    #[serde(default)]
    pub eval_score: Option<f64>,
    #[serde(default)]
    pub eval_success: Option<bool>,
}

impl EpisodeRecord {
    /// A record with only the identifying fields set.
    pub fn new(
        episode_hash: impl Into<String>,
        operator: impl Into<String>,
        lab: impl Into<String>,
        task: impl Into<String>,
        scene: impl Into<String>,
        embodiment: Embodiment,
    ) -> Self {
        Self {
            episode_hash: episode_hash.into(),
            operator: operator.into(),
            lab: lab.into(),
            task: task.into(),
            embodiment,
            robot_name: None,
            num_frames: None,
            task_description: String::new(),
            scene: scene.into(),
            objects: Vec::new(),
            processed_path: None,
            processing_error: None,
            mp4_path: None,
            is_deleted: false,
            is_eval: false,
            eval_score: None,
            eval_success: None,
        }
    }

    /// True when the fields set by uploaders agree. Processing, deletion and
    /// evaluation fields are ignored.
    pub fn same_upload_fields(&self, other: &EpisodeRecord) -> bool {
        self.episode_hash == other.episode_hash
            && self.operator == other.operator
            && self.lab == other.lab
            && self.task == other.task
            && self.embodiment == other.embodiment
            && self.robot_name == other.robot_name
            && self.task_description == other.task_description
            && self.scene == other.scene
            && self.objects == other.objects
            && self.is_eval == other.is_eval
    }
}

/// A single failed metadata check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: &str) -> Self {
        Self {
            field: field.to_owned(),
            message: message.to_owned(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Invalid(Vec<Violation>),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Verdict::Ok => &[],
            Verdict::Invalid(v) => v,
        }
    }
}

pub fn validate_metadata(record: &EpisodeRecord) -> Verdict {
    let mut out = Vec::new();
    let required = [
        ("episode_hash", &record.episode_hash),
        ("operator", &record.operator),
        ("lab", &record.lab),
        ("task", &record.task),
        ("scene", &record.scene),
    ];
    for (field, value) in required {
        if value.trim().is_empty() {
            out.push(Violation::new(field, &format!("empty {field}")));
        }
    }
    if !record.is_eval {
        if record.eval_score.is_some() {
            out.push(Violation::new("eval_score", "eval_score without is_eval"));
        }
        if record.eval_success.is_some() {
            out.push(Violation::new("eval_success", "eval_success without is_eval"));
        }
    }
    if let Some(score) = record.eval_score {
        if !score.is_finite() {
            out.push(Violation::new("eval_score", "non-finite eval_score"));
        }
    }
    match (&record.robot_name, record.embodiment) {
        (Some(_), Embodiment::Human) => {
            out.push(Violation::new("robot_name", "robot_name without robot embodiment"))
        }
        (Some(name), Embodiment::Robot) if name.trim().is_empty() => {
            out.push(Violation::new("robot_name", "empty robot_name"))
        }
        _ => {}
    }
    if record.processed_path.is_some() && record.processing_error.is_some() {
        out.push(Violation::new(
            "processing_error",
            "processed_path and processing_error both set",
        ));
    }
    if out.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Invalid(out)
    }
}

/// SHA-256 over the little-endian timestamp followed by the nonce bytes,
/// as 64 lowercase hex characters.
pub fn make_episode_hash(utc_timestamp_ns: i64, uploader_nonce: &str) -> Result<String, DataModelError> {
    if utc_timestamp_ns <= 0 {
        return Err(DataModelError::InvalidArgument(format!(
            "timestamp must be positive, got {utc_timestamp_ns}"
        )));
    }
    let mut hasher = Sha256::new();
    hasher.update(utc_timestamp_ns.to_le_bytes());
    hasher.update(uploader_nonce.as_bytes());
    Ok(hex::encode(hasher.finalize()))
}
