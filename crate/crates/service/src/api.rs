//! HTTP surface: `POST /forecast`, `GET /health`, `GET /meta`.

use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use cpf_core::calibrate::CalibratedForecast;
use cpf_core::replay::{CampaignCriteria, MatchStats};
use cpf_core::Error;

use crate::snapshot::Snapshot;

/// Shared handle to the current snapshot, if any.
#[derive(Clone, Default)]
pub struct AppState {
    current: Arc<RwLock<Option<Arc<Snapshot>>>>,
}

impl AppState {
    pub fn with_snapshot(s: Snapshot) -> Self {
        let state = Self::default();
        state.install(s);
        state
    }

    /// Replaces the snapshot. Requests already running keep the old one.
    pub fn install(&self, s: Snapshot) {
        let next = Arc::new(s);
        *self.current.write().unwrap_or_else(|p| p.into_inner()) = Some(next);
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.current.read().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawReplay {
    pub impression: f64,
    pub click: f64,
    pub cost: f64,
    pub value: f64,
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub calibrated: CalibratedForecast<f64>,
    pub raw: RawReplay,
    pub match_stats: MatchStats<f64>,
    pub model_version: String,
    pub log_date: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub log_date: String,
    pub record_count: usize,
    pub model_version: String,
    pub scale_factor: f64,
}

fn error(status: StatusCode, field: Option<String>, reason: impl Into<String>) -> Response {
    (status, Json(ErrorBody { field, reason: reason.into() })).into_response()
}

fn not_ready() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, None, "not_ready")
}

/// Field named in a serde message such as "missing field `budget`".
fn quoted_field(msg: &str) -> Option<String> {
    let start = msg.find("field `")? + "field `".len();
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

fn parse_criteria(body: &[u8]) -> Result<CampaignCriteria<f64>, Response> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        let field = if path == "." || path.is_empty() { quoted_field(&msg) } else { Some(path) };
        error(StatusCode::BAD_REQUEST, field.or(Some("body".into())), msg)
    })
}

async fn forecast(State(state): State<AppState>, body: Bytes) -> Response {
    let started = Instant::now();
    let Some(snap) = state.current() else {
        return not_ready();
    };
    let criteria = match parse_criteria(&body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let result = tokio::task::spawn_blocking(move || {
        let out = snap.forecast(&criteria);
        (snap, out)
    })
    .await;
    let (snap, out) = match result {
        Ok(v) => v,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string()),
    };
    match out {
        Ok((calibrated, raw)) => Json(ForecastResponse {
            calibrated,
            raw: RawReplay {
                impression: raw.impression,
                click: raw.click,
                cost: raw.cost,
                value: raw.value,
                scale_factor: raw.scale_factor,
            },
            match_stats: raw.match_stats,
            model_version: snap.model_version.clone(),
            log_date: snap.log_date.clone(),
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        })
        .into_response(),
        Err(Error::InvalidCriteria { field, reason }) => error(StatusCode::BAD_REQUEST, Some(field), reason),
        Err(e) => {
            tracing::error!(error = %e, "forecast failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string())
        }
    }
}

async fn health(State(state): State<AppState>) -> Response {
    match state.current() {
        Some(_) => Json(serde_json::json!({ "status": "ready" })).into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({ "status": "not_ready" }))).into_response(),
    }
}

async fn meta(State(state): State<AppState>) -> Response {
    match state.current() {
        Some(s) => Json(Meta {
            log_date: s.log_date.clone(),
            record_count: s.record_count(),
            model_version: s.model_version.clone(),
            scale_factor: s.index.scale_factor(),
        })
        .into_response(),
        None => not_ready(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/forecast", post(forecast))
        .route("/health", get(health))
        .route("/meta", get(meta))
        .layer(CorsLayer::permissive())
        .with_state(state)
}
