//! JSON over HTTP: `POST /v1/ask`, `GET /v1/health`, `GET /v1/cases`.
//!
//! Requests are queued on a fair semaphore so at most `workers` generations
//! run at once and waiting requests are served in arrival order.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use super::{ask, Answerer, CaseStudy, GenerationParams, ServeError, DISCLAIMER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub params: Option<GenerationParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: String,
    pub truncated: bool,
    pub latency_ms: f64,
    pub model: String,
    pub disclaimer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_fingerprint: Option<String>,
}

enum ModelState {
    Loading,
    Ready(Arc<dyn Answerer>),
    Failed(String),
}

#[derive(Clone)]
pub struct AppState {
    model: Arc<RwLock<ModelState>>,
    pool: Arc<Semaphore>,
    cases: Arc<Vec<CaseStudy>>,
}

impl AppState {
    /// A service whose model is still loading; `/v1/ask` answers 503 until
    /// [`AppState::set_ready`] is called.
    pub fn loading(workers: usize, cases: Vec<CaseStudy>) -> Self {
        Self {
            model: Arc::new(RwLock::new(ModelState::Loading)),
            pool: Arc::new(Semaphore::new(workers.max(1))),
            cases: Arc::new(cases),
        }
    }

    pub fn ready(answerer: Arc<dyn Answerer>, workers: usize, cases: Vec<CaseStudy>) -> Self {
        let s = Self::loading(workers, cases);
        s.set_ready(answerer);
        s
    }

    pub fn set_ready(&self, answerer: Arc<dyn Answerer>) {
        *self.model.write().expect("state lock") = ModelState::Ready(answerer);
    }

    pub fn set_failed(&self, reason: String) {
        *self.model.write().expect("state lock") = ModelState::Failed(reason);
    }

    fn answerer(&self) -> Result<Arc<dyn Answerer>, Response> {
        match &*self.model.read().expect("state lock") {
            ModelState::Ready(a) => Ok(a.clone()),
            ModelState::Loading => Err(error(StatusCode::SERVICE_UNAVAILABLE, "model is loading")),
            ModelState::Failed(r) => Err(error(StatusCode::SERVICE_UNAVAILABLE, &format!("model failed to load: {r}"))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/ask", post(ask_handler))
        .route("/v1/health", get(health))
        .route("/v1/cases", get(cases))
        .with_state(state)
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message, "disclaimer": DISCLAIMER }))).into_response()
}

fn status_for(e: &ServeError) -> StatusCode {
    match e {
        ServeError::EmptyQuestion | ServeError::PromptTooLong { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn ask_handler(State(state): State<AppState>, body: Result<Json<AskRequest>, JsonRejection>) -> Response {
    let req = match body {
        Ok(Json(req)) => req,
        // Unparseable bodies are 400; parseable JSON with the wrong shape is 422.
        Err(JsonRejection::JsonSyntaxError(e)) => return error(StatusCode::BAD_REQUEST, &e.body_text()),
        Err(JsonRejection::JsonDataError(e)) => return error(StatusCode::UNPROCESSABLE_ENTITY, &e.body_text()),
        Err(e) => return error(e.status(), &e.body_text()),
    };
    if req.question.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "question is empty");
    }
    let answerer = match state.answerer() {
        Ok(a) => a,
        Err(r) => return r,
    };
    let Ok(_permit) = state.pool.clone().acquire_owned().await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "worker pool closed");
    };
    let params = req.params.unwrap_or_default();
    let joined = tokio::task::spawn_blocking(move || ask(answerer.as_ref(), &req.question, &params)).await;
    match joined {
        Ok(Ok(t)) => Json(AskResponse {
            answer: t.answer,
            truncated: t.truncated,
            latency_ms: t.latency_ms,
            model: t.model_fingerprint,
            disclaimer: DISCLAIMER.to_string(),
        })
        .into_response(),
        Ok(Err(e)) => {
            tracing::warn!(error = %e, "ask failed");
            error(status_for(&e), &e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, &format!("worker panicked: {e}")),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    let (code, body) = match &*state.model.read().expect("state lock") {
        ModelState::Ready(a) => (
            StatusCode::OK,
            Health {
                status: "ok".into(),
                model_fingerprint: Some(a.fingerprint()),
            },
        ),
        ModelState::Loading => (
            StatusCode::SERVICE_UNAVAILABLE,
            Health {
                status: "loading".into(),
                model_fingerprint: None,
            },
        ),
        ModelState::Failed(_) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Health {
                status: "failed".into(),
                model_fingerprint: None,
            },
        ),
    };
    (code, Json(body)).into_response()
}

async fn cases(State(state): State<AppState>) -> Json<Vec<CaseStudy>> {
    Json(state.cases.as_ref().clone())
}

/// Binds `addr`, starts loading the model on a blocking thread and serves
/// until ctrl-c. Health reports `loading` until the loader finishes.
pub async fn serve<F>(addr: SocketAddr, workers: usize, cases: Vec<CaseStudy>, loader: F) -> Result<(), ServeError>
where
    F: FnOnce() -> Result<Arc<dyn Answerer>, ServeError> + Send + 'static,
{
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServeError::BindError {
        addr: addr.to_string(),
        message: e.to_string(),
    })?;
    let state = AppState::loading(workers, cases);
    let loading = state.clone();
    tokio::task::spawn_blocking(move || match loader() {
        Ok(a) => {
            tracing::info!(fingerprint = %a.fingerprint(), "model ready");
            loading.set_ready(a);
        }
        Err(e) => {
            tracing::error!(error = %e, "model failed to load");
            loading.set_failed(e.to_string());
        }
    });
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServeError::Io {
            path: addr.to_string().into(),
            message: e.to_string(),
        })
}
