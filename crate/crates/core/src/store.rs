//! Blob storage addressed by slash-separated keys.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("object not found: {0}")]
    NotFound(String),
    #[error("invalid key {0:?}")]
    InvalidKey(String),
    #[error("store i/o error: {message}")]
    Io { message: String, retryable: bool },
}

impl StoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, StoreError::Io { retryable: true, .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub key: String,
    pub size: u64,
    /// Lowercase hex SHA-256 of the object bytes.
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[async_trait]
pub trait ObjectStore: Send + Sync {
    /// Replaces any existing object. Readers never observe a partial write.
    async fn put(&self, key: &str, bytes: Vec<u8>) -> Result<(), StoreError>;
    async fn get(&self, key: &str) -> Result<Vec<u8>, StoreError>;
    async fn head(&self, key: &str) -> Result<Option<ObjectMeta>, StoreError>;
    /// Keys starting with `prefix`, sorted.
    async fn list(&self, prefix: &str) -> Result<Vec<String>, StoreError>;
}

pub fn check_key(key: &str) -> Result<(), StoreError> {
    let bad = key.is_empty()
        || key.contains('\\')
        || key.split('/').any(|s| s.is_empty() || s == "." || s == ".." || s.starts_with(TMP_PREFIX));
    if bad {
        Err(StoreError::InvalidKey(key.to_owned()))
    } else {
        Ok(())
    }
}

const TMP_PREFIX: &str = ".tmp-";
static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Objects stored as files under a root directory.
#[derive(Clone, Debug)]
pub struct FsStore {
    root: PathBuf,
}

fn io_err(e: std::io::Error) -> StoreError {
    StoreError::Io {
        message: e.to_string(),
        retryable: !matches!(
            e.kind(),
            std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidInput
        ),
    }
}

impl FsStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(io_err)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, key: &str) -> Result<PathBuf, StoreError> {
        check_key(key)?;
        Ok(key.split('/').fold(self.root.clone(), |p, s| p.join(s)))
    }
}

/// Writes `bytes` beside `path` under a temporary name, then renames it into place.
pub(crate) async fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("object path has a parent");
    tokio::fs::create_dir_all(dir).await?;
    let tmp = dir.join(format!(
        "{TMP_PREFIX}{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    if let Err(e) = tokio::fs::write(&tmp, bytes).await {
        let _ = tokio::fs::remove_file(&tmp).await;
        return Err(e);
    }
    tokio::fs::rename(&tmp, path).await
}

#[async_trait]
impl ObjectStore for FsStore {
    async fn put(&self, key: &str, bytes: Vec<u8>) -> Result<(), StoreError> {
        let path = self.path_of(key)?;
        write_atomic(&path, &bytes).await.map_err(io_err)
    }

    async fn get(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path_of(key)?;
        match tokio::fs::read(&path).await {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(key.to_owned())),
            Err(e) => Err(io_err(e)),
        }
    }

    async fn head(&self, key: &str) -> Result<Option<ObjectMeta>, StoreError> {
        let path = self.path_of(key)?;
        match tokio::fs::read(&path).await {
            Ok(b) => Ok(Some(ObjectMeta {
                key: key.to_owned(),
                size: b.len() as u64,
                sha256: sha256_hex(&b),
            })),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) if path.is_dir() => Err(StoreError::InvalidKey(format!("{key} ({e})"))),
            Err(e) => Err(io_err(e)),
        }
    }

    async fn list(&self, prefix: &str) -> Result<Vec<String>, StoreError> {
        let root = self.root.clone();
        let prefix = prefix.to_owned();
        tokio::task::spawn_blocking(move || {
            let mut keys = Vec::new();
            for entry in walkdir::WalkDir::new(&root).min_depth(1) {
                let entry = entry.map_err(|e| StoreError::Io {
                    message: e.to_string(),
                    retryable: true,
                })?;
                if !entry.file_type().is_file() {
                    continue;
                }
                let rel = entry.path().strip_prefix(&root).expect("walk stays under root");
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                if key.starts_with(&prefix) && check_key(&key).is_ok() {
                    keys.push(key);
                }
            }
            keys.sort();
            Ok(keys)
        })
        .await
        .map_err(|e| StoreError::Io {
            message: e.to_string(),
            retryable: true,
        })?
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn put_get_head_list() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::new(dir.path()).unwrap();
        store.put("raw/a", b"hello".to_vec()).await.unwrap();
        store.put("raw/a.meta", b"{}".to_vec()).await.unwrap();
        store.put("processed/a/canonical.bin", vec![1, 2, 3]).await.unwrap();
        assert_eq!(store.get("raw/a").await.unwrap(), b"hello");
        let meta = store.head("raw/a").await.unwrap().unwrap();
        assert_eq!(meta.size, 5);
        assert_eq!(meta.sha256, sha256_hex(b"hello"));
        assert_eq!(store.head("raw/zzz").await.unwrap(), None);
        assert_eq!(store.list("raw/").await.unwrap(), vec!["raw/a", "raw/a.meta"]);
        assert_eq!(store.list("").await.unwrap().len(), 3);
        assert!(matches!(store.get("raw/b").await, Err(StoreError::NotFound(_))));
    }

    #[tokio::test]
    async fn overwrite_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::new(dir.path()).unwrap();
        store.put("k", b"one".to_vec()).await.unwrap();
        store.put("k", b"two".to_vec()).await.unwrap();
        assert_eq!(store.get("k").await.unwrap(), b"two");
        assert_eq!(store.list("").await.unwrap(), vec!["k"]);
    }

    #[test]
    fn key_rules() {
        for bad in ["", "/abs", "a//b", "a/../b", "a\\b", "a/.tmp-1", "."] {
            assert!(check_key(bad).is_err(), "{bad}");
        }
        for good in ["a", "raw/x.meta", "processed/h/preview_00000.ppm"] {
            assert!(check_key(good).is_ok(), "{good}");
        }
    }
}
