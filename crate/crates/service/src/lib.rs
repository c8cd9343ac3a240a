//! HTTP facade over a fitted run artifact.
//!
//! | route | body |
//! |---|---|
//! | `GET /counties` | grid metadata and county features, sorted by id |
//! | `GET /coefficients/{county}` | posterior mean and 95% interval per coefficient |
//! | `POST /predict` | outcome mean and 95% interval at one condition |
//!
//! Every route answers 503 until the artifact is loaded. Intervals are
//! seeded by the optional `X-Sample-Seed` header (default 0), so the same
//! request and seed always get the same answer.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use policy_surrogate::artifact::RunArtifact;
use policy_surrogate::whatif::{PredictRequest, WhatIf, COEFFICIENT_SAMPLES};
use policy_surrogate::Error;
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const SEED_HEADER: &str = "x-sample-seed";

/// Shared handle; empty until [`ServiceState::install`] is called.
#[derive(Clone, Default)]
pub struct ServiceState {
    whatif: Arc<OnceLock<WhatIf>>,
}

impl ServiceState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn loaded(w: WhatIf) -> Self {
        let s = Self::new();
        s.install(w);
        s
    }

    /// First install wins; later calls are ignored.
    pub fn install(&self, w: WhatIf) -> bool {
        self.whatif.set(w).is_ok()
    }

    pub fn is_loaded(&self) -> bool {
        self.whatif.get().is_some()
    }

    fn get(&self) -> Result<&WhatIf, ApiError> {
        self.whatif.get().ok_or(ApiError { status: StatusCode::SERVICE_UNAVAILABLE, kind: "not_loaded", message: "artifact is not loaded yet".into() })
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::UnknownCounty(_) => (StatusCode::NOT_FOUND, "unknown_county"),
            Error::Invalid(_) | Error::DimensionMismatch { .. } => (StatusCode::BAD_REQUEST, "invalid_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError { status, kind, message: e.to_string() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, kind: "invalid_request", message: e.body_text() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.kind, message: &self.message })).into_response()
    }
}

fn seed_from(headers: &HeaderMap) -> Result<u64, ApiError> {
    match headers.get(SEED_HEADER) {
        None => Ok(0),
        Some(v) => v.to_str().ok().and_then(|s| s.trim().parse().ok()).ok_or_else(|| ApiError {
            status: StatusCode::BAD_REQUEST,
            kind: "invalid_request",
            message: "X-Sample-Seed must be an unsigned integer".into(),
        }),
    }
}

async fn counties(State(s): State<ServiceState>) -> Result<Response, ApiError> {
    Ok(Json(s.get()?.counties()).into_response())
}

async fn coefficients(State(s): State<ServiceState>, Path(county): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let w = s.get()?;
    let seed = seed_from(&headers)?;
    Ok(Json(w.coefficients(&county, COEFFICIENT_SAMPLES, seed)?).into_response())
}

async fn predict(
    State(s): State<ServiceState>,
    headers: HeaderMap,
    body: Result<Json<PredictRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let w = s.get()?;
    let seed = seed_from(&headers)?;
    let Json(req) = body?;
    Ok(Json(w.predict(&req, seed)?).into_response())
}

async fn not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, kind: "not_found", message: "no such route".into() }
}

/// Allowed browser origins. `None` allows any origin.
pub fn cors(origins: Option<&[String]>) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE, axum::http::HeaderName::from_static(SEED_HEADER)]);
    match origins {
        None => layer.allow_origin(AllowOrigin::any()),
        Some(list) => layer.allow_origin(list.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect::<Vec<_>>()),
    }
}

pub fn router(state: ServiceState) -> Router {
    router_with_cors(state, None)
}

pub fn router_with_cors(state: ServiceState, origins: Option<&[String]>) -> Router {
    Router::new()
        .route("/counties", get(counties))
        .route("/coefficients/{county}", get(coefficients))
        .route("/predict", post(predict))
        .fallback(not_found)
        .layer(cors(origins))
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub artifact: PathBuf,
    pub addr: SocketAddr,
    pub cors_origins: Option<Vec<String>>,
}

/// Binds first, then loads the artifact in the background so clients get
/// 503 rather than connection errors while a large artifact is read.
pub async fn serve(opts: ServeOptions) -> std::io::Result<()> {
    let state = ServiceState::new();
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let loader = state.clone();
    let path = opts.artifact.clone();
    let load = tokio::task::spawn_blocking(move || -> Result<(), Error> {
        let a = RunArtifact::load(&path)?;
        loader.install(WhatIf::from_artifact(&a)?);
        log::info!("loaded artifact {} ({} counties)", path.display(), a.counties.len());
        Ok(())
    });
    let load_failed = async move {
        match load.await {
            Ok(Ok(())) => std::future::pending().await,
            Ok(Err(e)) => std::io::Error::other(e),
            Err(e) => std::io::Error::other(e),
        }
    };
    let app = router_with_cors(state, opts.cors_origins.as_deref());
    tokio::select! {
        r = axum::serve(listener, app) => r,
        e = load_failed => Err(e),
    }
}
