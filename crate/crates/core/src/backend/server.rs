//! HTTP host for any [`Backends`] bundle, typically the mocks.
//!
//! Requests are decoded and validated exactly like the client encodes them,
//! so a remote client talking to a mock-backed server reproduces the
//! in-process mock byte for byte.

use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Body;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use serde::de::DeserializeOwned;
use tokio::sync::{oneshot, Semaphore};

use crate::error::{Error, Result};

use super::wire::{codes, CaptionBody, DepthBody, ErrorBody, GenerateBody, GeneratedBody, ImageBody};
use super::{generate_checked, wire, Backends, DEFAULT_DEPTH_SCALE};

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    pub max_body_bytes: usize,
    pub max_jobs: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_body_bytes: 64 * 1024 * 1024,
            max_jobs: 64,
        }
    }
}

struct AppState {
    backends: Backends,
    jobs: Semaphore,
    config: ServerConfig,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self(status, ErrorBody::new(code, message))
    }

    fn from_error(e: Error) -> Self {
        match e.root() {
            Error::InvalidArgument(_) => Self::new(StatusCode::BAD_REQUEST, codes::INVALID_REQUEST, e.to_string()),
            Error::Capability { mode, .. } => Self::new(StatusCode::BAD_REQUEST, codes::UNSUPPORTED_MODE, mode.clone()),
            Error::NotFound(_) => Self::new(StatusCode::NOT_FOUND, codes::NOT_FOUND, e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

async fn read_json<T: DeserializeOwned>(state: &AppState, body: Body) -> std::result::Result<T, ApiError> {
    let bytes = axum::body::to_bytes(body, state.config.max_body_bytes)
        .await
        .map_err(|_| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                codes::PAYLOAD_TOO_LARGE,
                format!("body exceeds {} bytes", state.config.max_body_bytes),
            )
        })?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, codes::INVALID_REQUEST, e.to_string()))
}

/// Runs `job` on the blocking pool if a job slot is free.
async fn run_job<T, F>(state: Arc<AppState>, job: F) -> std::result::Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Backends) -> Result<T> + Send + 'static,
{
    let permit = state
        .jobs
        .try_acquire()
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, codes::QUEUE_FULL, "job queue is full"))?;
    let st = state.clone();
    let out = tokio::task::spawn_blocking(move || job(&st.backends))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL, e.to_string()))?;
    drop(permit);
    out.map_err(ApiError::from_error)
}

async fn describe(State(state): State<Arc<AppState>>) -> Json<super::BackendDescriptor> {
    Json(state.backends.generator.descriptor())
}

async fn generate(State(state): State<Arc<AppState>>, body: Body) -> ApiResult<GeneratedBody> {
    let wire_req: GenerateBody = read_json(&state, body).await?;
    let req = wire_req.into_request().map_err(ApiError::from_error)?;
    let resp = run_job(state, move |b| generate_checked(b.generator.as_ref(), &req)).await?;
    GeneratedBody::from_response(&resp).map(Json).map_err(ApiError::from_error)
}

async fn depth(State(state): State<Arc<AppState>>, body: Body) -> ApiResult<DepthBody> {
    let req: ImageBody = read_json(&state, body).await?;
    let img = wire::decode_image("image", &req.image).map_err(ApiError::from_error)?;
    let d = run_job(state, move |b| b.estimate_depth(&img)).await?;
    Ok(Json(DepthBody {
        depth: wire::encode_depth(&d, DEFAULT_DEPTH_SCALE).map_err(ApiError::from_error)?,
        depth_scale: DEFAULT_DEPTH_SCALE,
    }))
}

async fn caption(State(state): State<Arc<AppState>>, body: Body) -> ApiResult<CaptionBody> {
    let req: ImageBody = read_json(&state, body).await?;
    let img = wire::decode_image("image", &req.image).map_err(ApiError::from_error)?;
    let caption = run_job(state, move |b| b.caption(&img)).await?;
    Ok(Json(CaptionBody { caption }))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, codes::NOT_FOUND, "no such route")
}

pub fn router(backends: Backends, config: ServerConfig) -> Router {
    let state = Arc::new(AppState {
        backends,
        jobs: Semaphore::new(config.max_jobs.max(1)),
        config,
    });
    Router::new()
        .route("/describe", get(describe))
        .route("/generate", post(generate))
        .route("/depth", post(depth))
        .route("/caption", post(caption))
        .fallback(fallback)
        .with_state(state)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_io().build()?)
}

/// A server running on its own thread; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn spawn(backends: Backends, addr: SocketAddr, config: ServerConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let rt = runtime()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener conversion");
                let app = router(backends, config);
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        info!("mock backend listening on http://{addr}");
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Serves until the process is terminated.
pub fn serve_forever(backends: Backends, addr: SocketAddr, config: ServerConfig) -> Result<()> {
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        info!("mock backend listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(backends, config)).await?;
        Ok(())
    })
}
