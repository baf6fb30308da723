//! HTTP completion service over one trained checkpoint.

pub mod wire;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use layout_core::decode::{DecodeError, LayoutCompleter};
use layout_core::layout::{TypeManifest, GRID_HEIGHT, GRID_WIDTH};
use layout_core::model::{Model, ModelError, X_VOCAB, Y_VOCAB};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

use wire::{candidate, parse_request, to_partial, CompletionResponse, ModelInfo, WireError};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("loading checkpoint {path}: {source}")]
    Load { path: PathBuf, source: ModelError },
    #[error("checkpoint has {model} types but the manifest lists {manifest}")]
    ManifestMismatch { model: usize, manifest: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A loaded checkpoint with the type names it was trained on.
pub struct Snapshot {
    pub model: Model<f32>,
    pub hash: String,
    pub manifest: TypeManifest,
}

impl Snapshot {
    pub fn new(
        model: Model<f32>,
        hash: String,
        manifest: TypeManifest,
    ) -> Result<Self, ServerError> {
        if model.config.type_count != manifest.len() {
            return Err(ServerError::ManifestMismatch {
                model: model.config.type_count,
                manifest: manifest.len(),
            });
        }
        Ok(Self {
            model,
            hash,
            manifest,
        })
    }

    pub fn load(path: &Path, manifest: TypeManifest) -> Result<Self, ServerError> {
        let (model, hash) = Model::load(path).map_err(|source| ServerError::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(model, hash, manifest)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Limits {
    pub timeout: Duration,
    /// Completions computed at once; further requests get 503.
    pub max_in_flight: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(5),
            max_in_flight: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Shared service state: the snapshot is set once, after loading.
pub struct AppState {
    snapshot: OnceLock<Arc<Snapshot>>,
    permits: Arc<Semaphore>,
    limits: Limits,
}

impl AppState {
    pub fn new(limits: Limits) -> Arc<Self> {
        Arc::new(Self {
            snapshot: OnceLock::new(),
            permits: Arc::new(Semaphore::new(limits.max_in_flight.max(1))),
            limits,
        })
    }

    pub fn with_snapshot(snapshot: Snapshot, limits: Limits) -> Arc<Self> {
        let state = Self::new(limits);
        state.install(snapshot);
        state
    }

    /// Makes the model available; later calls are ignored.
    pub fn install(&self, snapshot: Snapshot) {
        let _ = self.snapshot.set(Arc::new(snapshot));
    }

    pub fn is_ready(&self) -> bool {
        self.snapshot.get().is_some()
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

impl From<WireError> for ApiError {
    fn from(e: WireError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl From<DecodeError> for ApiError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::InvalidPartial(_) | DecodeError::BadWidth => {
                ApiError::BadRequest(e.to_string())
            }
            DecodeError::PrefixViolation(_) => ApiError::Unprocessable(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn snapshot(state: &AppState) -> Result<Arc<Snapshot>, ApiError> {
    state
        .snapshot
        .get()
        .cloned()
        .ok_or_else(|| ApiError::Unavailable("model is still loading".into()))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    snapshot(&state)?;
    Ok(Json(json!({ "status": "ok" })))
}

async fn model_info(
    State(state): State<Arc<AppState>>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let snap = snapshot(&state)?;
    let cfg = &snap.model.config;
    Ok(Json(json!({
        "variant": cfg.variant.as_str(),
        "checkpointHash": snap.hash,
        "grid": [GRID_WIDTH, GRID_HEIGHT],
        "vocab": { "type": cfg.type_classes(), "x": X_VOCAB, "y": Y_VOCAB },
        "types": snap.manifest.names(),
        "orders": layout_core::layout::Order::ALL
            .iter()
            .filter(|o| snap.model.supports(**o))
            .map(|o| o.as_str())
            .collect::<Vec<_>>(),
        "config": cfg,
    })))
}

async fn complete(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<CompletionResponse>, ApiError> {
    let start = Instant::now();
    let snap = snapshot(&state)?;
    let req = parse_request(&body)?;
    let partial = to_partial(&req.root, req.order, &snap.manifest)?;
    let permit = state
        .permits
        .clone()
        .try_acquire_owned()
        .map_err(|_| ApiError::Unavailable("too many requests in flight".into()))?;
    let cfg = req.decode_config();
    let worker = {
        let snap = snap.clone();
        let partial = partial.clone();
        tokio::task::spawn_blocking(move || {
            let _permit = permit;
            snap.model.complete(&partial, &cfg)
        })
    };
    let completions = tokio::time::timeout(state.limits.timeout, worker)
        .await
        .map_err(|_| ApiError::Unavailable("completion timed out".into()))?
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let given = partial.tree.len();
    let candidates: Vec<_> = completions
        .iter()
        .take(req.num_candidates)
        .map(|c| candidate(c, given, &snap.manifest))
        .collect();
    Ok(Json(CompletionResponse {
        log_prob: candidates.first().map_or(f64::NEG_INFINITY, |c| c.log_prob),
        candidates,
        model_info: ModelInfo {
            variant: snap.model.config.variant.as_str().into(),
            checkpoint_hash: snap.hash.clone(),
        },
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/complete", post(complete))
        .route("/model", get(model_info))
        .route("/healthz", get(healthz))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves on `addr`, answering 503 until the checkpoint has loaded.
pub async fn serve(
    addr: SocketAddr,
    checkpoint: PathBuf,
    manifest: TypeManifest,
    limits: Limits,
) -> Result<(), ServerError> {
    let state = AppState::new(limits);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let app = router(state.clone());
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    });
    let snapshot = tokio::task::spawn_blocking(move || Snapshot::load(&checkpoint, manifest))
        .await
        .map_err(std::io::Error::other)??;
    state.install(snapshot);
    server.await.map_err(std::io::Error::other)??;
    Ok(())
}
