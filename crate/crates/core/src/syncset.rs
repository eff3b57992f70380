//! Dataset access: pick processed episodes, split them deterministically and
//! mirror them into a local cache.
//!
//! Cache layout: `{cache_dir}/{episode_hash}/canonical.bin`,
//! `preview_*.ppm` and `record.meta` (the registry record as JSON).

use std::fmt;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Embodiment, EpisodeRecord};
use crate::registry::{EpisodeFilter, Registry, RegistryError};
use crate::store::{sha256_hex, write_atomic, ObjectStore};

pub const RECORD_FILE: &str = "record.meta";
pub const LOCK_FILE: &str = ".sync.lock";

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cache {0} is locked by another sync; remove the lock file if no sync is running")]
    Locked(PathBuf),
    #[error("cache i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Train,
    Valid,
    Total,
    Percent,
}

fn default_parallelism() -> usize {
    4
}

fn default_percent() -> f64 {
    100.0
}

/// Declarative description of a synced subset. `registry` and `store` are
/// backend URIs for command-line use; library callers pass backends directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<String>,
    pub cache_dir: PathBuf,
    /// Episodes of other embodiments are skipped. `None` keeps all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embodiment: Option<Embodiment>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub mode: SplitMode,
    /// Used by `train` and `valid`.
    #[serde(default)]
    pub val_ratio: f64,
    /// Used by `percent`.
    #[serde(default = "default_percent")]
    pub percent: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub filter: EpisodeFilter,
}

impl SyncConfig {
    pub fn from_toml(text: &str) -> Result<Self, SyncError> {
        let cfg: SyncConfig = toml::from_str(text).map_err(|e| SyncError::InvalidArgument(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        if self.parallelism == 0 {
            return Err(SyncError::InvalidArgument("parallelism must be at least 1".into()));
        }
        check_split_args(self.val_ratio, self.percent)
    }
}

fn check_split_args(val_ratio: f64, percent: f64) -> Result<(), SyncError> {
    if !(0.0..1.0).contains(&val_ratio) {
        return Err(SyncError::InvalidArgument(format!("val_ratio must lie in [0, 1), got {val_ratio}")));
    }
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(SyncError::InvalidArgument(format!("percent must lie in (0, 100], got {percent}")));
    }
    Ok(())
}

/// Live, processed episodes matching the filter and embodiment, ordered by
/// (lab, task, episode_hash).
pub async fn resolve(
    filter: &EpisodeFilter,
    embodiment: Option<Embodiment>,
    registry: &dyn Registry,
) -> Result<Vec<EpisodeRecord>, SyncError> {
    let mut records: Vec<EpisodeRecord> = registry
        .query(filter, false)
        .await?
        .into_iter()
        .filter(|r| r.processed_path.is_some() && !r.is_deleted && embodiment.is_none_or(|e| r.embodiment == e))
        .collect();
    records.sort_by(|a, b| (&a.lab, &a.task, &a.episode_hash).cmp(&(&b.lab, &b.task, &b.episode_hash)));
    Ok(records)
}

/// Uniform draw from `0..bound` by rejection, so the result depends only on
/// the generator's `u64` stream.
fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let zone = (u64::MAX / bound) * bound;
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Indices into `records` in shuffled order: the records are sorted by
/// episode_hash and then Fisher-Yates shuffled (from the back) with
/// ChaCha8 seeded by `seed`.
pub fn permutation(records: &[EpisodeRecord], seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| records[a].episode_hash.cmp(&records[b].episode_hash));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..idx.len()).rev() {
        let j = bounded(&mut rng, i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

pub fn valid_count(n: usize, val_ratio: f64) -> usize {
    (n as f64 * val_ratio).floor() as usize
}

pub fn percent_count(n: usize, percent: f64) -> usize {
    ((n as f64 * percent / 100.0).ceil() as usize).min(n)
}

/// The subset selected by `mode`, in input order. The last
/// `floor(n * val_ratio)` episodes of the permutation are `valid`, the rest
/// `train`; `percent` takes the first `ceil(n * percent / 100)`.
pub fn split(
    records: &[EpisodeRecord],
    mode: SplitMode,
    val_ratio: f64,
    percent: f64,
    seed: u64,
) -> Result<Vec<EpisodeRecord>, SyncError> {
    check_split_args(val_ratio, percent)?;
    let n = records.len();
    if mode == SplitMode::Total {
        return Ok(records.to_vec());
    }
    let perm = permutation(records, seed);
    let chosen: &[usize] = match mode {
        SplitMode::Train => &perm[..n - valid_count(n, val_ratio)],
        SplitMode::Valid => &perm[n - valid_count(n, val_ratio)..],
        SplitMode::Percent => &perm[..percent_count(n, percent)],
        SplitMode::Total => unreachable!(),
    };
    let mut keep = vec![false; n];
    for &i in chosen {
        keep[i] = true;
    }
    Ok(records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    /// Episodes for which at least one object was fetched.
    pub downloaded: usize,
    /// Episodes already fully present.
    pub skipped: usize,
    pub failed: usize,
    /// Cache directories of the episodes that synced, in input order.
    pub paths: Vec<PathBuf>,
    pub failures: Vec<(String, String)>,
}

impl SyncReport {
    pub fn is_complete(&self) -> bool {
        self.failed == 0
    }
}

impl fmt::Display for SyncReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "downloaded={} skipped={} failed={}",
            self.downloaded, self.skipped, self.failed
        )
    }
}

struct CacheLock(PathBuf);

impl CacheLock {
    fn acquire(cache_dir: &Path) -> Result<Self, SyncError> {
        std::fs::create_dir_all(cache_dir).map_err(|e| SyncError::Io(format!("{}: {e}", cache_dir.display())))?;
        let path = cache_dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(SyncError::Locked(path)),
            Err(e) => Err(SyncError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

enum EpisodeSync {
    Downloaded,
    Skipped,
}

async fn local_digest(path: &Path) -> Option<String> {
    tokio::fs::read(path).await.ok().map(|b| sha256_hex(&b))
}

async fn sync_episode(record: &EpisodeRecord, store: &dyn ObjectStore, dir: &Path) -> Result<EpisodeSync, String> {
    let prefix = record
        .processed_path
        .as_deref()
        .ok_or("record has no processed_path")?;
    let prefix = format!("{}/", prefix.trim_end_matches('/'));
    let keys = store.list(&prefix).await.map_err(|e| e.to_string())?;
    if keys.is_empty() {
        return Err(format!("no processed objects under {prefix}"));
    }
    let mut fetched = false;
    for key in keys {
        let meta = store
            .head(&key)
            .await
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("{key} vanished"))?;
        let local = key[prefix.len()..].split('/').fold(dir.to_path_buf(), |p, s| p.join(s));
        if local_digest(&local).await.as_deref() == Some(meta.sha256.as_str()) {
            continue;
        }
        let bytes = store.get(&key).await.map_err(|e| e.to_string())?;
        if sha256_hex(&bytes) != meta.sha256 {
            return Err(format!("{key} changed during transfer"));
        }
        write_atomic(&local, &bytes)
            .await
            .map_err(|e| format!("{}: {e}", local.display()))?;
        fetched = true;
    }
    let doc = serde_json::to_vec_pretty(record).expect("record serializes");
    let record_path = dir.join(RECORD_FILE);
    if local_digest(&record_path).await != Some(sha256_hex(&doc)) {
        write_atomic(&record_path, &doc)
            .await
            .map_err(|e| format!("{}: {e}", record_path.display()))?;
    }
    Ok(if fetched { EpisodeSync::Downloaded } else { EpisodeSync::Skipped })
}

/// Copies every processed object of `records` into the cache, skipping
/// objects whose local digest already matches. Per-episode failures are
/// reported, not raised.
pub async fn sync(
    records: &[EpisodeRecord],
    store: &dyn ObjectStore,
    cache_dir: &Path,
    parallelism: usize,
) -> Result<SyncReport, SyncError> {
    if parallelism == 0 {
        return Err(SyncError::InvalidArgument("parallelism must be at least 1".into()));
    }
    let _lock = CacheLock::acquire(cache_dir)?;
    let results: Vec<(usize, Result<EpisodeSync, String>)> = stream::iter(records.iter().enumerate())
        .map(|(i, r)| async move {
            let dir = cache_dir.join(&r.episode_hash);
            (i, sync_episode(r, store, &dir).await)
        })
        .buffer_unordered(parallelism)
        .collect()
        .await;
    let mut results = results;
    results.sort_by_key(|(i, _)| *i);

    let mut report = SyncReport::default();
    for (i, result) in results {
        let r = &records[i];
        match result {
            Ok(EpisodeSync::Downloaded) => report.downloaded += 1,
            Ok(EpisodeSync::Skipped) => report.skipped += 1,
            Err(msg) => {
                tracing::warn!(episode = %r.episode_hash, error = %msg, "sync failed");
                report.failed += 1;
                report.failures.push((r.episode_hash.clone(), msg));
                continue;
            }
        }
        report.paths.push(cache_dir.join(&r.episode_hash));
    }
    Ok(report)
}

/// resolve, split and sync as described by `config`.
pub async fn run_sync(
    config: &SyncConfig,
    registry: &dyn Registry,
    store: &dyn ObjectStore,
) -> Result<(Vec<EpisodeRecord>, SyncReport), SyncError> {
    config.validate()?;
    let resolved = resolve(&config.filter, config.embodiment, registry).await?;
    let selected = split(&resolved, config.mode, config.val_ratio, config.percent, config.seed)?;
    let report = sync(&selected, store, &config.cache_dir, config.parallelism).await?;
    Ok((selected, report))
}
