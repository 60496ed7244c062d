//! HTTP correction service: `POST /api/correct` and `GET /api/health`.

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vispell_core::model::{Corrector, Suggestion};
use vispell_core::textdata::tokenize_spans;

pub const DEFAULT_MAX_BODY_BYTES: usize = 16 * 1024;
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub text: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseToken {
    pub token: String,
    pub is_error: bool,
    pub p_error: f64,
    pub suggestions: Vec<Suggestion>,
    /// Whitespace between this token and the next one (or the end of text).
    pub space_after: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResponse {
    pub tokens: Vec<ResponseToken>,
    pub model_version: String,
    pub latency_ms: f64,
    /// True when the text had more tokens than the model accepts; only the
    /// leading tokens were judged.
    pub truncated: bool,
    /// Whitespace before the first token.
    pub leading_space: String,
}

impl CorrectionResponse {
    /// Reassembles the judged text from tokens and spacing.
    pub fn detokenize(&self) -> String {
        let mut out = self.leading_space.clone();
        for t in &self.tokens {
            out.push_str(&t.token);
            out.push_str(&t.space_after);
        }
        out
    }
}

/// Judges `request.text` with `model`. Pure apart from the latency reading.
pub fn correct_text(model: &Corrector, request: &CorrectionRequest) -> CorrectionResponse {
    let started = Instant::now();
    let text = request.text.as_str();
    let spans = tokenize_spans(text);
    let truncated = spans.len() > model.config.n_max;
    let spans = &spans[..spans.len().min(model.config.n_max)];
    let tokens: Vec<String> = spans.iter().map(|s| text[s.start..s.end].to_string()).collect();
    let predictions = if tokens.is_empty() {
        Vec::new()
    } else {
        model.predict_sentences(&[tokens], request.top_k).remove(0)
    };
    let leading_space = text[..spans.first().map_or(text.len(), |s| s.start)].to_string();
    let tokens = predictions
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let next = spans.get(i + 1).map_or(text.len(), |s| s.start);
            let gap = &text[spans[i].end..next];
            let space_after = if truncated && i + 1 == spans.len() {
                gap.chars().take_while(|c| c.is_whitespace()).collect()
            } else {
                gap.to_string()
            };
            ResponseToken {
                token: p.token,
                is_error: p.is_error,
                p_error: p.p_error,
                suggestions: p.suggestions,
                space_after,
            }
        })
        .collect();
    CorrectionResponse {
        tokens,
        model_version: model.model_version.clone(),
        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        truncated,
        leading_space,
    }
}

/// The model slot shared by all handlers; empty until loading finishes.
#[derive(Clone, Default)]
pub struct AppState {
    model: Arc<OnceLock<Arc<Corrector>>>,
}

impl AppState {
    pub fn loading() -> AppState {
        AppState::default()
    }

    pub fn ready(model: Corrector) -> AppState {
        let state = AppState::default();
        state.set_model(model);
        state
    }

    /// Installs the model; later calls are ignored.
    pub fn set_model(&self, model: Corrector) {
        let _ = self.model.set(Arc::new(model));
    }

    pub fn model(&self) -> Option<Arc<Corrector>> {
        self.model.get().cloned()
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

/// Only a JSON object is a request; serde would also take the array form.
fn parse_request(body: &[u8]) -> Result<CorrectionRequest, serde_json::Error> {
    match serde_json::from_slice::<serde_json::Value>(body)? {
        v @ serde_json::Value::Object(_) => serde_json::from_value(v),
        _ => Err(serde::de::Error::custom("expected a JSON object")),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    match state.model() {
        Some(m) => Json(json!({ "status": "ok", "model_version": m.model_version })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "loading", "model_version": null })),
        )
            .into_response(),
    }
}

async fn correct(State(state): State<AppState>, body: Bytes) -> Response {
    let request = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let Some(model) = state.model() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model is still loading");
    };
    match tokio::task::spawn_blocking(move || correct_text(&model, &request)).await {
        Ok(response) => Json(response).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/correct", post(correct))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr, max_body_bytes: usize) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, max_body_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
