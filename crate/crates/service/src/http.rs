use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use ppldetect_core::scorer::{
    ScoreError, ScoreWindowRequest, ScoreWindowResponse, TokenizeRequest, TokenizeResponse,
};
use ppldetect_core::{Scorer, ThresholdTable};

use crate::detector::{AnalyzeRequest, Detector, Verdict};
use crate::error::ServiceError;

#[derive(Debug, Deserialize)]
pub struct ReloadRequest {
    pub path: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReloadResponse {
    pub ok: bool,
    pub entries: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub scorer: String,
}

fn body_error(rejection: JsonRejection) -> ServiceError {
    if rejection.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ServiceError::TooLarge {
            bytes: 0,
            max: crate::detector::MAX_TEXT_BYTES,
        }
    } else {
        ServiceError::BadRequest(rejection.body_text())
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn analyze(
    State(detector): State<Arc<Detector>>,
    body: Result<Json<AnalyzeRequest>, JsonRejection>,
) -> Result<Json<Verdict>, ServiceError> {
    let Json(request) = body.map_err(body_error)?;
    let verdict = blocking(move || detector.analyze(&request)).await?;
    Ok(Json(verdict))
}

async fn thresholds(State(detector): State<Arc<Detector>>) -> Result<Json<ThresholdTable>, ServiceError> {
    let table = detector.table().ok_or(ServiceError::NoTable)?;
    Ok(Json(ThresholdTable::clone(&table)))
}

async fn reload(
    State(detector): State<Arc<Detector>>,
    body: Result<Json<ReloadRequest>, JsonRejection>,
) -> Result<Json<ReloadResponse>, ServiceError> {
    let Json(request) = body.map_err(body_error)?;
    let entries = blocking(move || detector.reload(&request.path)).await?;
    Ok(Json(ReloadResponse { ok: true, entries }))
}

async fn healthz(State(detector): State<Arc<Detector>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        scorer: detector.scorer_name(),
    })
}

/// Detector API under `/api/v1` plus `/healthz`.
pub fn router(detector: Arc<Detector>) -> Router {
    // JSON overhead on top of the text cap
    let body_limit = crate::detector::MAX_TEXT_BYTES * 2 + 4096;
    Router::new()
        .route("/api/v1/analyze", post(analyze))
        .route("/api/v1/thresholds", get(thresholds))
        .route("/api/v1/reload", post(reload))
        .route("/healthz", get(healthz))
        .layer(axum::extract::DefaultBodyLimit::max(body_limit))
        .with_state(detector)
}

struct ScorerFailure(ScoreError);

impl IntoResponse for ScorerFailure {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ScoreError::TargetLen { .. } | ScoreError::WindowTooLong { .. } | ScoreError::UnknownId(_) => {
                StatusCode::BAD_REQUEST
            }
            ScoreError::Transport { .. } | ScoreError::Protocol(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, self.0.to_string()).into_response()
    }
}

type Shared = Arc<dyn Scorer>;

async fn run_scorer<T, F>(f: F) -> Result<T, ScorerFailure>
where
    F: FnOnce() -> Result<T, ScoreError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ScorerFailure),
        Err(e) => Err(ScorerFailure(ScoreError::Protocol(e.to_string()))),
    }
}

async fn descriptor(State(scorer): State<Shared>) -> Json<ppldetect_core::ScorerDescriptor> {
    Json(scorer.descriptor())
}

async fn tokenize(
    State(scorer): State<Shared>,
    Json(req): Json<TokenizeRequest>,
) -> Result<Json<TokenizeResponse>, ScorerFailure> {
    let seq = run_scorer(move || scorer.tokenize(&req.text)).await?;
    let tokens = seq
        .surface()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| seq.ids().iter().map(u32::to_string).collect());
    Ok(Json(TokenizeResponse {
        ids: seq.ids().to_vec(),
        tokens,
    }))
}

async fn score_window(
    State(scorer): State<Shared>,
    Json(req): Json<ScoreWindowRequest>,
) -> Result<Json<ScoreWindowResponse>, ScorerFailure> {
    let target_len = req.target_len;
    let mean_nll = run_scorer(move || scorer.score_window(&req.ids, req.target_len)).await?;
    Ok(Json(ScoreWindowResponse {
        mean_nll,
        target_tokens: target_len,
    }))
}

/// Serves any scorer over the `/v1` wire protocol the remote client speaks.
pub fn scorer_router(scorer: Arc<dyn Scorer>) -> Router {
    Router::new()
        .route("/v1/descriptor", get(descriptor))
        .route("/v1/tokenize", post(tokenize))
        .route("/v1/score_window", post(score_window))
        .with_state(scorer)
}
