//! [`Registry`] and [`ObjectStore`] implementations backed by the HTTP service.
//!
//! Connection failures, timeouts and 5xx responses surface as retryable
//! errors; every other failure is final.

use std::time::Duration;

use async_trait::async_trait;
use reqwest::{header, Method, RequestBuilder, Response, StatusCode, Url};
use serde::de::DeserializeOwned;
use thiserror::Error;

use egoverse_core::datamodel::EpisodeRecord;
use egoverse_core::registry::{
    EpisodeFilter, EpisodeRow, GroupBy, GroupStats, ProcessingOutcome, Registration, Registry, RegistryError,
};
use egoverse_core::store::{ObjectMeta, ObjectStore, StoreError};
use egoverse_core::wire::{ErrorBody, EpisodeQuery, EvalUpdate, PREVIEW_FRAMES_HEADER, SHA256_HEADER};

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid service url {0:?}")]
    InvalidUrl(String),
    #[error("http client setup failed: {0}")]
    Setup(String),
}

/// Failure of one HTTP exchange, before mapping to a domain error.
#[derive(Debug)]
enum Failure {
    Transport { message: String, retryable: bool },
    Status { status: StatusCode, body: Option<ErrorBody> },
}

impl Failure {
    fn retryable(&self) -> bool {
        match self {
            Failure::Transport { retryable, .. } => *retryable,
            Failure::Status { status, .. } => status.is_server_error(),
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Transport { message, .. } => message.clone(),
            Failure::Status { status, body: Some(b) } => format!("{status}: {}: {}", b.kind, b.message),
            Failure::Status { status, body: None } => status.to_string(),
        }
    }

    fn into_registry_error(self) -> RegistryError {
        let retryable = self.retryable();
        match self {
            Failure::Status {
                status,
                body: Some(body),
            } if status != StatusCode::UNAUTHORIZED && !status.is_server_error() => body.into_registry_error(),
            Failure::Status {
                body: Some(body), ..
            } if body.kind == "storage" => RegistryError::Storage(body.message),
            other => RegistryError::Transport {
                message: other.message(),
                retryable,
            },
        }
    }

    fn into_store_error(self, key: &str) -> StoreError {
        match &self {
            Failure::Status { status, .. } if *status == StatusCode::NOT_FOUND => StoreError::NotFound(key.to_owned()),
            Failure::Status { status, .. } if *status == StatusCode::BAD_REQUEST => StoreError::InvalidKey(key.to_owned()),
            _ => StoreError::Io {
                message: self.message(),
                retryable: self.retryable(),
            },
        }
    }
}

impl From<reqwest::Error> for Failure {
    fn from(e: reqwest::Error) -> Self {
        let retryable = e.is_connect() || e.is_timeout() || e.is_request() || e.is_body();
        Failure::Transport {
            message: e.to_string(),
            retryable,
        }
    }
}

/// Connection to one service instance.
#[derive(Clone, Debug)]
pub struct HttpClient {
    base: Url,
    http: reqwest::Client,
    token: Option<String>,
}

impl HttpClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`. Plain HTTP
    /// only; terminate TLS in front of the service.
    pub fn new(base: &str, token: Option<String>) -> Result<Self, ClientError> {
        let mut base = Url::parse(base).map_err(|_| ClientError::InvalidUrl(base.to_owned()))?;
        if base.scheme() != "http" || base.cannot_be_a_base() {
            return Err(ClientError::InvalidUrl(base.to_string()));
        }
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let http = reqwest::Client::builder()
            .connect_timeout(CONNECT_TIMEOUT)
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| ClientError::Setup(e.to_string()))?;
        Ok(Self { base, http, token })
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    fn url(&self, segments: &[&str], query: &[(&str, String)]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut().expect("base url").pop_if_empty().extend(segments);
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query);
        }
        url
    }

    fn request(&self, method: Method, url: Url) -> RequestBuilder {
        let req = self.http.request(method, url);
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    async fn send(&self, req: RequestBuilder) -> Result<Response, Failure> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.json::<ErrorBody>().await.ok();
        Err(Failure::Status { status, body })
    }

    async fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, Failure> {
        Ok(self.send(req).await?.json::<T>().await?)
    }

    /// True when `GET /health` answers.
    pub async fn health(&self) -> bool {
        let url = self.url(&["health"], &[]);
        self.send(self.http.get(url)).await.is_ok()
    }
}

/// Remote [`Registry`].
#[derive(Clone, Debug)]
pub struct HttpRegistry {
    client: HttpClient,
}

impl HttpRegistry {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }

    /// Preview frame `frame` of an episode and the number of frames available.
    pub async fn preview(&self, episode_hash: &str, frame: usize) -> Result<(Vec<u8>, usize), RegistryError> {
        let c = &self.client;
        let url = c.url(&["episodes", episode_hash, "preview"], &[("frame", frame.to_string())]);
        let resp = c.send(c.request(Method::GET, url)).await.map_err(Failure::into_registry_error)?;
        let frames = resp
            .headers()
            .get(PREVIEW_FRAMES_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        let bytes = resp.bytes().await.map_err(|e| Failure::from(e).into_registry_error())?;
        Ok((bytes.to_vec(), frames))
    }

    async fn patch<T: serde::Serialize + ?Sized>(
        &self,
        episode_hash: &str,
        what: &str,
        body: Option<&T>,
    ) -> Result<EpisodeRecord, RegistryError> {
        let c = &self.client;
        let mut req = c.request(Method::PATCH, c.url(&["episodes", episode_hash, what], &[]));
        if let Some(b) = body {
            req = req.json(b);
        }
        c.json(req).await.map_err(Failure::into_registry_error)
    }
}

#[async_trait]
impl Registry for HttpRegistry {
    async fn register_episode(&self, record: &EpisodeRecord) -> Result<Registration, RegistryError> {
        let c = &self.client;
        let req = c.request(Method::POST, c.url(&["episodes"], &[])).json(record);
        c.json(req).await.map_err(Failure::into_registry_error)
    }

    async fn update_processing(
        &self,
        episode_hash: &str,
        outcome: &ProcessingOutcome,
    ) -> Result<EpisodeRecord, RegistryError> {
        self.patch(episode_hash, "processing", Some(outcome)).await
    }

    async fn query(&self, filter: &EpisodeFilter, include_deleted: bool) -> Result<Vec<EpisodeRecord>, RegistryError> {
        let c = &self.client;
        let url = c.url(&["episodes"], &EpisodeQuery::new(filter, include_deleted).pairs());
        c.json(c.request(Method::GET, url)).await.map_err(Failure::into_registry_error)
    }

    async fn get(&self, episode_hash: &str) -> Result<EpisodeRow, RegistryError> {
        let c = &self.client;
        let url = c.url(&["episodes", episode_hash], &[]);
        c.json(c.request(Method::GET, url)).await.map_err(Failure::into_registry_error)
    }

    async fn mark_deleted(&self, episode_hash: &str) -> Result<EpisodeRecord, RegistryError> {
        self.patch::<()>(episode_hash, "deleted", None).await
    }

    async fn record_eval(
        &self,
        episode_hash: &str,
        eval_score: f64,
        eval_success: bool,
    ) -> Result<EpisodeRecord, RegistryError> {
        let body = EvalUpdate {
            eval_score,
            eval_success,
        };
        self.patch(episode_hash, "eval", Some(&body)).await
    }

    async fn stats(&self, group_by: GroupBy) -> Result<Vec<GroupStats>, RegistryError> {
        let c = &self.client;
        let url = c.url(&["stats"], &[("group_by", group_by.to_string())]);
        c.json(c.request(Method::GET, url)).await.map_err(Failure::into_registry_error)
    }
}

/// Remote [`ObjectStore`].
#[derive(Clone, Debug)]
pub struct HttpObjectStore {
    client: HttpClient,
}

impl HttpObjectStore {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }

    fn object_url(&self, key: &str) -> Result<Url, StoreError> {
        egoverse_core::store::check_key(key)?;
        let mut segments = vec!["objects"];
        segments.extend(key.split('/'));
        Ok(self.client.url(&segments, &[]))
    }
}

#[async_trait]
impl ObjectStore for HttpObjectStore {
    async fn put(&self, key: &str, bytes: Vec<u8>) -> Result<(), StoreError> {
        let c = &self.client;
        let req = c.request(Method::PUT, self.object_url(key)?).body(bytes);
        c.send(req).await.map_err(|f| f.into_store_error(key))?;
        Ok(())
    }

    async fn get(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        let c = &self.client;
        let resp = c
            .send(c.request(Method::GET, self.object_url(key)?))
            .await
            .map_err(|f| f.into_store_error(key))?;
        let bytes = resp.bytes().await.map_err(|e| Failure::from(e).into_store_error(key))?;
        Ok(bytes.to_vec())
    }

    async fn head(&self, key: &str) -> Result<Option<ObjectMeta>, StoreError> {
        let c = &self.client;
        let resp = match c.send(c.request(Method::HEAD, self.object_url(key)?)).await {
            Ok(r) => r,
            Err(Failure::Status { status, .. }) if status == StatusCode::NOT_FOUND => return Ok(None),
            Err(f) => return Err(f.into_store_error(key)),
        };
        let header = |name: &str| resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_owned);
        let malformed = || StoreError::Io {
            message: format!("malformed metadata for {key}"),
            retryable: false,
        };
        let sha256 = header(SHA256_HEADER).ok_or_else(malformed)?;
        let size = header(header::CONTENT_LENGTH.as_str())
            .and_then(|v| v.parse().ok())
            .ok_or_else(malformed)?;
        Ok(Some(ObjectMeta {
            key: key.to_owned(),
            size,
            sha256,
        }))
    }

    async fn list(&self, prefix: &str) -> Result<Vec<String>, StoreError> {
        let c = &self.client;
        let url = c.url(&["objects"], &[("prefix", prefix.to_owned())]);
        c.json(c.request(Method::GET, url)).await.map_err(|f| f.into_store_error(prefix))
    }
}
