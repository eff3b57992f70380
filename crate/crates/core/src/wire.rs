//! Request and response documents shared by the HTTP server and client.

use serde::{Deserialize, Serialize};

use crate::datamodel::{Embodiment, Violation};
use crate::registry::{EpisodeFilter, RegistryError};
use crate::store::StoreError;

pub const PREVIEW_FRAMES_HEADER: &str = "x-preview-frames";
pub const SHA256_HEADER: &str = "x-sha256";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl From<&RegistryError> for ErrorBody {
    fn from(e: &RegistryError) -> Self {
        let violations = match e {
            RegistryError::Validation(v) => v.clone(),
            _ => Vec::new(),
        };
        let message = match e {
            RegistryError::Conflict(m)
            | RegistryError::NotFound(m)
            | RegistryError::Precondition(m)
            | RegistryError::InvalidArgument(m)
            | RegistryError::Storage(m) => m.clone(),
            RegistryError::Transport { message, .. } => message.clone(),
            RegistryError::Validation(_) => e.to_string(),
        };
        Self {
            kind: e.kind().to_owned(),
            message,
            violations,
        }
    }
}

impl ErrorBody {
    pub fn from_store(e: &StoreError) -> Self {
        let (kind, message) = match e {
            StoreError::NotFound(k) => ("not_found", k.clone()),
            StoreError::InvalidKey(k) => ("invalid_argument", format!("invalid key {k:?}")),
            StoreError::Io { message, .. } => ("storage", message.clone()),
        };
        Self {
            kind: kind.into(),
            message,
            violations: Vec::new(),
        }
    }

    /// The registry error this body describes.
    pub fn into_registry_error(self) -> RegistryError {
        match self.kind.as_str() {
            "validation" => RegistryError::Validation(self.violations),
            "conflict" => RegistryError::Conflict(self.message),
            "not_found" => RegistryError::NotFound(self.message),
            "precondition" => RegistryError::Precondition(self.message),
            "invalid_argument" => RegistryError::InvalidArgument(self.message),
            "storage" => RegistryError::Storage(self.message),
            _ => RegistryError::Transport {
                message: format!("{}: {}", self.kind, self.message),
                retryable: false,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalUpdate {
    pub eval_score: f64,
    pub eval_success: bool,
}

/// Query string of `GET /episodes`: the filter fields plus `include_deleted`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeQuery {
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
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub include_deleted: bool,
}

impl EpisodeQuery {
    pub fn new(filter: &EpisodeFilter, include_deleted: bool) -> Self {
        let f = filter.clone();
        Self {
            operator: f.operator,
            lab: f.lab,
            task: f.task,
            scene: f.scene,
            embodiment: f.embodiment,
            robot_name: f.robot_name,
            is_deleted: f.is_deleted,
            is_eval: f.is_eval,
            has_processed_path: f.has_processed_path,
            has_processing_error: f.has_processing_error,
            text: f.text,
            include_deleted,
        }
    }

    pub fn filter(&self) -> EpisodeFilter {
        let q = self.clone();
        EpisodeFilter {
            operator: q.operator,
            lab: q.lab,
            task: q.task,
            scene: q.scene,
            embodiment: q.embodiment,
            robot_name: q.robot_name,
            is_deleted: q.is_deleted,
            is_eval: q.is_eval,
            has_processed_path: q.has_processed_path,
            has_processing_error: q.has_processing_error,
            text: q.text,
        }
    }

    /// `(name, value)` pairs for a URL query string.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut s = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        s("operator", &self.operator);
        s("lab", &self.lab);
        s("task", &self.task);
        s("scene", &self.scene);
        s("embodiment", &self.embodiment.map(|e| e.to_string()));
        s("robot_name", &self.robot_name);
        s("is_deleted", &self.is_deleted.map(|b| b.to_string()));
        s("is_eval", &self.is_eval.map(|b| b.to_string()));
        s("has_processed_path", &self.has_processed_path.map(|b| b.to_string()));
        s("has_processing_error", &self.has_processing_error.map(|b| b.to_string()));
        s("text", &self.text);
        if self.include_deleted {
            out.push(("include_deleted", "true".into()));
        }
        out
    }
}
