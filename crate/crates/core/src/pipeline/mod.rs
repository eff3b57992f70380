//! Processing rounds: turn registered raw episodes into canonical episodes
//! with per-frame action chunks and preview frames, then record the outcome.
//!
//! Outputs for episode `h` land under `processed/{h}/`: `canonical.bin` and
//! `preview_{index:05}.ppm`, one preview for every [`PREVIEW_STRIDE`]-th frame.

mod preview;
pub mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{
    arm_layout, build_human_action_chunk, camera_frame_action, resample_chunk, RotationFormat, TimedTrack, WindowSpec,
};
use crate::datamodel::{
    encode_canonical, ActionChunk, ActionLayout, CanonicalEpisode, EffectorTracks, Embodiment, EpisodeHeader, Pose6D,
    Provenance, Vec3,
};
use crate::ingest::raw_key;
use crate::registry::{EpisodeFilter, ProcessingOutcome, Registry, RegistryError};
use crate::store::{sha256_hex, ObjectStore, StoreError};

pub use preview::{preview_name, render_preview, PREVIEW_SIZE, PREVIEW_STRIDE};
pub use synthetic::{SyntheticAdapter, SyntheticEpisode, SYNTHETIC_FORMAT};

pub const PROCESSING_VERSION: &str = "egoverse-pipeline/1";
pub const CANONICAL_OBJECT: &str = "canonical.bin";
/// Hand keypoint used as the action target (the wrist).
pub const ACTION_KEYPOINT: usize = 0;
/// Attempts made to record one result before giving up on it.
pub const WRITE_BACK_ATTEMPTS: u32 = 4;

pub fn processed_prefix(episode_hash: &str) -> String {
    format!("processed/{episode_hash}")
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Tracks decoded from a raw capture, before action extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedEpisode {
    pub embodiment: Embodiment,
    pub rate_hz: f64,
    pub timestamps_ns: Vec<i64>,
    /// Capture device poses (human) or camera poses in the robot base frame.
    pub device_poses: Vec<Pose6D>,
    pub effectors: EffectorTracks,
    /// How robot rotations are written into actions. Ignored for humans.
    pub rotation: RotationFormat,
}

pub trait SourceAdapter: Send + Sync {
    fn id(&self) -> &str;
    fn decode(&self, raw: &[u8]) -> Result<DecodedEpisode, String>;
}

/// Adapters by id, plus which adapter handles each embodiment by default.
#[derive(Clone)]
pub struct Adapters {
    by_id: HashMap<String, Arc<dyn SourceAdapter>>,
    defaults: HashMap<Embodiment, String>,
}

impl Default for Adapters {
    fn default() -> Self {
        Self::empty()
            .with(Arc::new(SyntheticAdapter), &[Embodiment::Human, Embodiment::Robot])
    }
}

impl Adapters {
    pub fn empty() -> Self {
        Self {
            by_id: HashMap::new(),
            defaults: HashMap::new(),
        }
    }

    /// Adds `adapter` and makes it the default for `embodiments`.
    pub fn with(mut self, adapter: Arc<dyn SourceAdapter>, embodiments: &[Embodiment]) -> Self {
        let id = adapter.id().to_owned();
        for e in embodiments {
            self.defaults.insert(*e, id.clone());
        }
        self.by_id.insert(id, adapter);
        self
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn SourceAdapter>> {
        self.by_id.get(id).cloned()
    }

    pub fn default_for(&self, embodiment: Embodiment) -> Option<&str> {
        self.defaults.get(&embodiment).map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Episodes that have failed this many times are not planned again.
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessingJob {
    pub episode_hash: String,
    pub raw_key: String,
    pub embodiment: Embodiment,
    pub adapter_id: String,
    /// 1 for the first attempt.
    pub attempt: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessingResult {
    pub episode_hash: String,
    pub outcome: ProcessingOutcome,
}

/// Jobs for live episodes without a processed path, in registry order.
/// Episodes that already failed are planned while their failure count is
/// below `policy.max_attempts`.
pub async fn plan_jobs(
    registry: &dyn Registry,
    policy: &RetryPolicy,
    adapters: &Adapters,
) -> Result<Vec<ProcessingJob>, RegistryError> {
    let filter = EpisodeFilter {
        has_processed_path: Some(false),
        ..Default::default()
    };
    let mut jobs = Vec::new();
    for record in registry.query(&filter, false).await? {
        let failures = if record.processing_error.is_some() {
            registry.get(&record.episode_hash).await?.processing_attempts
        } else {
            0
        };
        if failures >= policy.max_attempts {
            continue;
        }
        let adapter_id = adapters
            .default_for(record.embodiment)
            .unwrap_or(SYNTHETIC_FORMAT)
            .to_owned();
        jobs.push(ProcessingJob {
            raw_key: raw_key(&record.episode_hash),
            episode_hash: record.episode_hash,
            embodiment: record.embodiment,
            adapter_id,
            attempt: failures + 1,
        });
    }
    Ok(jobs)
}

/// Hold-last padding so that every frame has a full window of future samples.
fn pad_for_window<T: Clone>(timestamps: &[i64], values: &[T], rate_hz: f64, window_ns: i64) -> (Vec<i64>, Vec<T>) {
    let n = timestamps.len();
    let period = if n >= 2 {
        timestamps[n - 1] - timestamps[n - 2]
    } else {
        ((1e9 / rate_hz).round() as i64).max(1)
    };
    let mut ts = timestamps.to_vec();
    let mut vs = values.to_vec();
    let end = timestamps[n - 1] + window_ns;
    while *ts.last().expect("non-empty") < end {
        ts.push(ts[ts.len() - 1] + period);
        vs.push(values[n - 1].clone());
    }
    (ts, vs)
}

/// Index of the first sample at or beyond `ts[t] + window_ns`.
fn window_end(ts: &[i64], t: usize, window_ns: i64) -> usize {
    ts.partition_point(|&x| x < ts[t] + window_ns)
}

/// One chunk per frame: the anchor's own hand points followed by the
/// anchor-relative future points, resampled over the human window.
pub fn human_action_chunks(
    timestamps_ns: &[i64],
    device_poses: &[Pose6D],
    hand_points: &[Vec<Vec3>],
    rate_hz: f64,
    spec: &WindowSpec,
) -> Result<Vec<ActionChunk>, String> {
    let window_ns = spec.window_ns();
    let (ts, poses) = pad_for_window(timestamps_ns, device_poses, rate_hz, window_ns);
    let (_, points) = pad_for_window(timestamps_ns, hand_points, rate_hz, window_ns);
    let layout = ActionLayout::positions(hand_points[0].len());
    let mut chunks = Vec::with_capacity(timestamps_ns.len());
    for t in 0..timestamps_ns.len() {
        let j = window_end(&ts, t, window_ns);
        let future = build_human_action_chunk(&poses[t..=j], &points[t..=j])
            .map_err(|e| format!("action chunk at frame {t}: {e}"))?;
        let mut values = Array2::zeros((j - t + 1, layout.width()));
        for (k, p) in points[t].iter().enumerate() {
            for c in 0..3 {
                values[[0, 3 * k + c]] = p[c];
            }
        }
        values.slice_mut(ndarray::s![1.., ..]).assign(future.values());
        let track = TimedTrack::new(ts[t..=j].to_vec(), values, layout.clone())
            .map_err(|e| format!("resample at frame {t}: {e}"))?;
        chunks.push(resample_chunk(&track, spec).map_err(|e| format!("resample at frame {t}: {e}"))?);
    }
    Ok(chunks)
}

/// One chunk per frame: every arm's end-effector pose in the anchor frame's
/// camera frame, resampled over the robot window.
pub fn robot_action_chunks(
    timestamps_ns: &[i64],
    camera_poses: &[Pose6D],
    arms: &[crate::datamodel::ArmTrack],
    rotation: RotationFormat,
    rate_hz: f64,
    spec: &WindowSpec,
) -> Result<Vec<ActionChunk>, String> {
    let window_ns = spec.window_ns();
    let frames: Vec<Vec<(Pose6D, f64)>> = (0..timestamps_ns.len())
        .map(|i| arms.iter().map(|a| (a.poses[i], a.gripper[i])).collect())
        .collect();
    let (ts, frames) = pad_for_window(timestamps_ns, &frames, rate_hz, window_ns);
    let layout = ActionLayout::new(arms.iter().flat_map(|_| arm_layout(rotation)).collect());
    let mut chunks = Vec::with_capacity(timestamps_ns.len());
    for t in 0..timestamps_ns.len() {
        let j = window_end(&ts, t, window_ns);
        let camera = &camera_poses[t];
        let mut values = Array2::zeros((j - t + 1, layout.width()));
        for (r, frame) in frames[t..=j].iter().enumerate() {
            let row: Vec<f64> = frame
                .iter()
                .flat_map(|(pose, g)| camera_frame_action(pose, camera, rotation, *g))
                .collect();
            values.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
        }
        let track = TimedTrack::new(ts[t..=j].to_vec(), values, layout.clone())
            .map_err(|e| format!("resample at frame {t}: {e}"))?;
        chunks.push(resample_chunk(&track, spec).map_err(|e| format!("resample at frame {t}: {e}"))?);
    }
    Ok(chunks)
}

/// Decoded tracks to a canonical episode.
pub fn canonicalize(episode_hash: &str, raw_digest: String, decoded: DecodedEpisode) -> Result<CanonicalEpisode, String> {
    let (actions, layout, spec) = match &decoded.effectors {
        EffectorTracks::Hands(frames) => {
            let points: Vec<Vec<Vec3>> = frames
                .iter()
                .map(|f| vec![f.left[ACTION_KEYPOINT], f.right[ACTION_KEYPOINT]])
                .collect();
            let spec = WindowSpec::HUMAN;
            let chunks = human_action_chunks(&decoded.timestamps_ns, &decoded.device_poses, &points, decoded.rate_hz, &spec)
                .map_err(|e| format!("align failure: {e}"))?;
            (chunks, ActionLayout::positions(2), spec)
        }
        EffectorTracks::Arms(arms) => {
            let spec = WindowSpec::ROBOT;
            let chunks =
                robot_action_chunks(&decoded.timestamps_ns, &decoded.device_poses, arms, decoded.rotation, decoded.rate_hz, &spec)
                    .map_err(|e| format!("align failure: {e}"))?;
            let layout = ActionLayout::new(arms.iter().flat_map(|_| arm_layout(decoded.rotation)).collect());
            (chunks, layout, spec)
        }
    };
    Ok(CanonicalEpisode {
        header: EpisodeHeader {
            episode_hash: episode_hash.to_owned(),
            embodiment: decoded.embodiment,
            rate_hz: decoded.rate_hz,
            chunk_length: spec.target_length(),
            action_dim: layout.width(),
            layout,
        },
        timestamps_ns: decoded.timestamps_ns,
        device_poses: decoded.device_poses,
        effectors: decoded.effectors,
        actions,
        provenance: Provenance {
            raw_digest,
            processing_version: PROCESSING_VERSION.to_owned(),
        },
    })
}

struct Converted {
    canonical: Vec<u8>,
    previews: Vec<Vec<u8>>,
    frames: usize,
}

fn convert(job: &ProcessingJob, raw: &[u8], adapter: &dyn SourceAdapter) -> Result<Converted, String> {
    let decoded = adapter.decode(raw).map_err(|e| format!("decode failure: {e}"))?;
    if decoded.embodiment != job.embodiment {
        return Err(format!(
            "decode failure: raw episode is {} but the record says {}",
            decoded.embodiment, job.embodiment
        ));
    }
    let episode = canonicalize(&job.episode_hash, sha256_hex(raw), decoded)?;
    let canonical = encode_canonical(&episode).map_err(|e| format!("encode failure: {e}"))?;
    let previews = episode
        .actions
        .iter()
        .step_by(PREVIEW_STRIDE)
        .map(render_preview)
        .collect();
    Ok(Converted {
        canonical,
        previews,
        frames: episode.frame_count(),
    })
}

/// Runs one job. Nothing is written unless conversion succeeds.
pub async fn process_episode(job: &ProcessingJob, store: &dyn ObjectStore, adapters: &Adapters) -> ProcessingResult {
    let outcome = match process_inner(job, store, adapters).await {
        Ok(o) => o,
        Err(message) => ProcessingOutcome::failure(message),
    };
    ProcessingResult {
        episode_hash: job.episode_hash.clone(),
        outcome,
    }
}

async fn process_inner(
    job: &ProcessingJob,
    store: &dyn ObjectStore,
    adapters: &Adapters,
) -> Result<ProcessingOutcome, String> {
    let adapter = adapters
        .get(&job.adapter_id)
        .ok_or_else(|| format!("unknown source adapter {:?}", job.adapter_id))?;
    let raw = match store.get(&job.raw_key).await {
        Ok(raw) => raw,
        Err(StoreError::NotFound(_)) => return Err("raw blob missing".into()),
        Err(e) => return Err(format!("store failure: {e}")),
    };
    let job_owned = job.clone();
    let converted = tokio::task::spawn_blocking(move || convert(&job_owned, &raw, adapter.as_ref()))
        .await
        .map_err(|e| format!("worker failure: {e}"))??;

    let prefix = processed_prefix(&job.episode_hash);
    let put = |key: String, bytes: Vec<u8>| async move {
        store.put(&key, bytes).await.map_err(|e| format!("store failure: {e}"))
    };
    put(format!("{prefix}/{CANONICAL_OBJECT}"), converted.canonical).await?;
    let mut first_preview = None;
    for (i, img) in converted.previews.into_iter().enumerate() {
        let key = format!("{prefix}/{}", preview_name(i));
        put(key.clone(), img).await?;
        first_preview.get_or_insert(key);
    }
    Ok(ProcessingOutcome::success(prefix, converted.frames as u64, first_preview))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundOptions {
    pub max_parallel: usize,
    pub retry: RetryPolicy,
}

impl Default for RoundOptions {
    fn default() -> Self {
        Self {
            max_parallel: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub planned: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub duration: Duration,
    /// (episode_hash, message) for every failed job.
    pub failures: Vec<(String, String)>,
}

impl fmt::Display for RoundSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "planned={} succeeded={} failed={} duration_ms={}",
            self.planned,
            self.succeeded,
            self.failed,
            self.duration.as_millis()
        )
    }
}

async fn write_back(registry: &dyn Registry, result: &ProcessingResult) -> Result<(), RegistryError> {
    let mut attempt = 1;
    loop {
        match registry.update_processing(&result.episode_hash, &result.outcome).await {
            Ok(_) => return Ok(()),
            Err(e) if e.is_retryable() && attempt < WRITE_BACK_ATTEMPTS => {
                tracing::warn!(episode = %result.episode_hash, error = %e, attempt, "write-back failed, retrying");
                tokio::time::sleep(Duration::from_millis(10 * u64::from(attempt))).await;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Plans and processes every eligible episode with at most
/// `opts.max_parallel` jobs in flight, recording each result once.
pub async fn run_round(
    registry: &dyn Registry,
    store: &dyn ObjectStore,
    adapters: &Adapters,
    opts: &RoundOptions,
) -> Result<RoundSummary, PipelineError> {
    if opts.max_parallel == 0 {
        return Err(PipelineError::InvalidArgument("max_parallel must be at least 1".into()));
    }
    let started = Instant::now();
    let jobs = plan_jobs(registry, &opts.retry, adapters).await?;
    let mut summary = RoundSummary {
        planned: jobs.len(),
        ..Default::default()
    };
    let results: Vec<(ProcessingResult, Result<(), RegistryError>)> = stream::iter(jobs.iter())
        .map(|job| async move {
            let result = process_episode(job, store, adapters).await;
            let written = write_back(registry, &result).await;
            (result, written)
        })
        .buffer_unordered(opts.max_parallel)
        .collect()
        .await;

    for (result, written) in results {
        let failure = match (&result.outcome.processing_error, written) {
            (_, Err(e)) => Some(format!("write-back failed: {e}")),
            (Some(msg), Ok(())) => Some(msg.clone()),
            (None, Ok(())) => None,
        };
        match failure {
            None => summary.succeeded += 1,
            Some(msg) => {
                summary.failed += 1;
                summary.failures.push((result.episode_hash, msg));
            }
        }
    }
    summary.failures.sort();
    summary.duration = started.elapsed();
    Ok(summary)
}
