//! Upload of raw episodes with metadata sidecars, and the bucket scanner
//! that registers complete uploads.
//!
//! An upload writes the raw blob at `raw/{hash}` and then its sidecar at
//! `raw/{hash}.meta`. A raw blob without a sidecar is an upload in progress.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use crate::datamodel::{make_episode_hash, validate_metadata, Embodiment, EpisodeRecord, Verdict, Violation};
use crate::registry::{Registry, RegistryError};
use crate::store::{sha256_hex, ObjectStore, StoreError};

pub const RAW_PREFIX: &str = "raw/";
pub const SIDECAR_SUFFIX: &str = ".meta";

pub fn raw_key(episode_hash: &str) -> String {
    format!("{RAW_PREFIX}{episode_hash}")
}

pub fn sidecar_key(raw_key: &str) -> String {
    format!("{raw_key}{SIDECAR_SUFFIX}")
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid metadata: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("a scan is already running")]
    Busy,
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

impl From<StoreError> for IngestError {
    fn from(e: StoreError) -> Self {
        IngestError::Transport {
            retryable: e.is_retryable(),
            message: e.to_string(),
        }
    }
}

/// Fields an uploader annotates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadMetadata {
    pub operator: String,
    pub lab: String,
    pub task: String,
    pub embodiment: Embodiment,
    #[serde(default)]
    pub robot_name: Option<String>,
    pub scene: String,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub is_eval: bool,
    #[serde(default)]
    pub task_description: String,
}

impl UploadMetadata {
    pub fn into_record(self, episode_hash: String) -> EpisodeRecord {
        let mut r = EpisodeRecord::new(episode_hash, self.operator, self.lab, self.task, self.scene, self.embodiment);
        r.robot_name = self.robot_name;
        r.objects = self.objects;
        r.is_eval = self.is_eval;
        r.task_description = self.task_description;
        r
    }
}

/// Metadata document stored next to each raw blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub operator: String,
    pub lab: String,
    pub task: String,
    pub embodiment: Embodiment,
    pub robot_name: Option<String>,
    pub scene: String,
    pub objects: Vec<String>,
    pub is_eval: bool,
    pub task_description: String,
    pub episode_hash: String,
    pub uploaded_at_ns: i64,
}

impl Sidecar {
    pub fn new(meta: UploadMetadata, episode_hash: String, uploaded_at_ns: i64) -> Self {
        Self {
            operator: meta.operator,
            lab: meta.lab,
            task: meta.task,
            embodiment: meta.embodiment,
            robot_name: meta.robot_name,
            scene: meta.scene,
            objects: meta.objects,
            is_eval: meta.is_eval,
            task_description: meta.task_description,
            episode_hash,
            uploaded_at_ns,
        }
    }

    pub fn to_record(&self) -> EpisodeRecord {
        let mut r = EpisodeRecord::new(
            self.episode_hash.clone(),
            self.operator.clone(),
            self.lab.clone(),
            self.task.clone(),
            self.scene.clone(),
            self.embodiment,
        );
        r.robot_name = self.robot_name.clone();
        r.objects = self.objects.clone();
        r.is_eval = self.is_eval;
        r.task_description = self.task_description.clone();
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadManifest {
    pub episode_hash: String,
    pub raw_key: String,
    pub sidecar_key: String,
    pub raw_digest: String,
    pub uploaded_at_ns: i64,
}

pub fn now_ns() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as i64)
        .unwrap_or(1)
}

/// Writes the raw blob, then its sidecar.
pub async fn upload_episode(
    store: &dyn ObjectStore,
    raw_bytes: Vec<u8>,
    meta: &UploadMetadata,
    uploader_nonce: &str,
    uploaded_at_ns: i64,
) -> Result<UploadManifest, IngestError> {
    let episode_hash = make_episode_hash(uploaded_at_ns, uploader_nonce)
        .map_err(|e| IngestError::InvalidArgument(e.to_string()))?;
    if let Verdict::Invalid(v) = validate_metadata(&meta.clone().into_record(episode_hash.clone())) {
        return Err(IngestError::Validation(v));
    }
    let raw_key = raw_key(&episode_hash);
    let sidecar_key = sidecar_key(&raw_key);
    let raw_digest = sha256_hex(&raw_bytes);
    let sidecar = Sidecar::new(meta.clone(), episode_hash.clone(), uploaded_at_ns);

    store.put(&raw_key, raw_bytes).await?;
    let doc = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    store.put(&sidecar_key, doc).await?;

    Ok(UploadManifest {
        episode_hash,
        raw_key,
        sidecar_key,
        raw_digest,
        uploaded_at_ns,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanConflict {
    pub key: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub started_at_ns: i64,
    /// Complete raw + sidecar pairs seen.
    pub discovered: usize,
    pub registered: usize,
    /// Complete pairs already present in the registry.
    pub skipped: usize,
    pub skipped_incomplete: usize,
    pub conflicts: Vec<ScanConflict>,
}

impl fmt::Display for ScanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "discovered={} registered={} skipped={} incomplete={} conflicts={}",
            self.discovered,
            self.registered,
            self.skipped,
            self.skipped_incomplete,
            self.conflicts.len()
        )
    }
}

/// Registers complete uploads found in the store. One scan runs at a time.
pub struct Scanner {
    store: Arc<dyn ObjectStore>,
    registry: Arc<dyn Registry>,
    running: AtomicBool,
}

struct RunningGuard<'a>(&'a AtomicBool);

impl Drop for RunningGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl Scanner {
    pub fn new(store: Arc<dyn ObjectStore>, registry: Arc<dyn Registry>) -> Self {
        Self {
            store,
            registry,
            running: AtomicBool::new(false),
        }
    }

    /// Fails with [`IngestError::Busy`] while another scan is in progress.
    pub async fn scan_once(&self) -> Result<ScanReport, IngestError> {
        if self
            .running
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(IngestError::Busy);
        }
        let _guard = RunningGuard(&self.running);

        let mut report = ScanReport {
            started_at_ns: now_ns(),
            ..Default::default()
        };
        let keys: BTreeSet<String> = self.store.list(RAW_PREFIX).await?.into_iter().collect();
        for key in &keys {
            if let Some(raw) = key.strip_suffix(SIDECAR_SUFFIX) {
                if !keys.contains(raw) {
                    report.skipped_incomplete += 1;
                }
                continue;
            }
            let meta_key = sidecar_key(key);
            if !keys.contains(&meta_key) {
                report.skipped_incomplete += 1;
                continue;
            }
            report.discovered += 1;
            let hash = &key[RAW_PREFIX.len()..];
            let sidecar = match self.store.get(&meta_key).await {
                Ok(bytes) => serde_json::from_slice::<Sidecar>(&bytes).map_err(|e| e.to_string()),
                Err(StoreError::NotFound(_)) => {
                    // Listed but gone: treat like an incomplete upload.
                    report.discovered -= 1;
                    report.skipped_incomplete += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let sidecar = match sidecar {
                Ok(s) if s.episode_hash == hash => s,
                Ok(s) => {
                    report.conflicts.push(ScanConflict {
                        key: meta_key,
                        reason: format!("sidecar names episode {} but sits at {key}", s.episode_hash),
                    });
                    continue;
                }
                Err(e) => {
                    report.conflicts.push(ScanConflict {
                        key: meta_key,
                        reason: format!("unreadable sidecar: {e}"),
                    });
                    continue;
                }
            };
            match self.registry.register_episode(&sidecar.to_record()).await {
                Ok(r) if r.created => report.registered += 1,
                Ok(_) => report.skipped += 1,
                Err(e @ (RegistryError::Conflict(_) | RegistryError::Validation(_))) => {
                    report.conflicts.push(ScanConflict {
                        key: meta_key,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(report)
    }
}

/// Calls [`Scanner::scan_once`] immediately and then every `interval` until
/// `stop` flips to true. Failed scans are logged and retried on the next tick.
pub async fn run_daemon<F>(
    scanner: Arc<Scanner>,
    interval: Duration,
    mut stop: watch::Receiver<bool>,
    mut on_report: F,
) -> Result<(), IngestError>
where
    F: FnMut(&Result<ScanReport, IngestError>) + Send,
{
    if interval.is_zero() {
        return Err(IngestError::InvalidArgument("interval must be positive".into()));
    }
    loop {
        if *stop.borrow() {
            break;
        }
        let result = scanner.scan_once().await;
        match &result {
            Ok(report) => tracing::info!(%report, "scan finished"),
            Err(e) => tracing::warn!(error = %e, "scan failed"),
        }
        on_report(&result);
        tokio::select! {
            _ = tokio::time::sleep(interval) => {}
            changed = stop.changed() => {
                if changed.is_err() || *stop.borrow() {
                    break;
                }
            }
        }
    }
    Ok(())
}
