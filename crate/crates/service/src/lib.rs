//! HTTP facade over prominence inference and attribute-feedback search.
//!
//! | route | response |
//! |---|---|
//! | `POST /api/sessions` | `{session_id, page, iteration}` |
//! | `GET /api/sessions/{id}/page` | same shape |
//! | `POST /api/sessions/{id}/feedback` | next page |
//! | `GET /api/pairs/{i}/{j}/explain?k=3` | `{statements, text, confidences}` |
//! | `GET /api/meta` | `{vocab, M, database_size, model_version}` |
//!
//! Errors are `{"error": code, "detail": message}`. Any other path is served
//! from the configured asset directory.

mod error;
mod sessions;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use prominence_core::dataset::{AttributeId, AttributeVocabulary};
use prominence_core::describe::{explain_prediction, Explanation};
use prominence_core::prominence::Polarity;
use prominence_core::rng;
use prominence_core::search::{Constraint, SearchEngine, SearchSession, SessionMode, Variant};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::ApiError;
pub use sessions::{SessionStore, SharedSession};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub page_size: usize,
    pub session_ttl: Duration,
    pub max_sessions: usize,
    /// Static UI and image files; `None` disables static serving.
    pub asset_dir: Option<PathBuf>,
    /// Name clients may pass as `database_ref`.
    pub database_ref: String,
    /// Sessions created without an explicit seed derive theirs from this.
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            page_size: 16,
            session_ttl: Duration::from_secs(3600),
            max_sessions: 1024,
            asset_dir: None,
            database_ref: "default".into(),
            seed: 0,
        }
    }
}

/// Immutable model and database shared by all requests, plus the sessions.
pub struct AppState {
    pub engine: SearchEngine,
    pub vocab: AttributeVocabulary,
    /// Per database image, in score-matrix order.
    pub asset_urls: Vec<Option<String>>,
    pub model_version: String,
    pub config: ServiceConfig,
    pub sessions: SessionStore,
    created: AtomicU64,
}

impl AppState {
    pub fn new(
        engine: SearchEngine,
        vocab: AttributeVocabulary,
        asset_urls: Vec<Option<String>>,
        model_version: String,
        config: ServiceConfig,
    ) -> Result<Self, ApiError> {
        if vocab.len() != engine.n_attributes() {
            return Err(ApiError::Internal(format!(
                "vocabulary has {} attributes but the model has {}",
                vocab.len(),
                engine.n_attributes()
            )));
        }
        if asset_urls.len() != engine.len() {
            return Err(ApiError::Internal(format!(
                "{} asset urls for {} database images",
                asset_urls.len(),
                engine.len()
            )));
        }
        Ok(Self {
            sessions: SessionStore::new(config.session_ttl, config.max_sessions),
            engine,
            vocab,
            asset_urls,
            model_version,
            config,
            created: AtomicU64::new(0),
        })
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.engine.scores.index_of(id)
    }

    fn page_entries(&self, session: &SearchSession) -> Vec<PageEntry> {
        session
            .page()
            .iter()
            .map(|&k| PageEntry {
                id: self.engine.scores.id(k).to_string(),
                asset_url: self.asset_urls[k].clone(),
            })
            .collect()
    }

    fn page_response(&self, session_id: String, session: &SearchSession) -> PageResponse {
        PageResponse {
            session_id,
            page: self.page_entries(session),
            iteration: session.iteration(),
        }
    }

    fn explain(&self, i: &str, j: &str, k: usize) -> Result<Explanation, ApiError> {
        let lookup = |id: &str| {
            self.index_of(id)
                .ok_or_else(|| ApiError::NotFound(format!("unknown image `{id}`")))
        };
        let (a, b) = (lookup(i)?, lookup(j)?);
        let scores = &self.engine.scores;
        let prediction = self.engine.model.predict(scores.row(a), scores.row(b))?;
        Ok(explain_prediction(&prediction, k, &self.vocab)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageEntry {
    pub id: String,
    pub asset_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResponse {
    pub session_id: String,
    pub page: Vec<PageEntry>,
    pub iteration: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub page_size: Option<usize>,
    #[serde(default)]
    pub database_ref: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackItem {
    pub ref_id: String,
    pub attribute_id: AttributeId,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub constraints: Vec<FeedbackItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub vocab: Vec<String>,
    #[serde(rename = "M")]
    pub m: usize,
    pub database_size: usize,
    pub model_version: String,
}

/// Parses a JSON body, treating an empty body as `T::default()` when given.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8], empty: Option<T>) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        if let Some(d) = empty {
            return Ok(d);
        }
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<PageResponse>, ApiError> {
    let req: CreateSessionRequest = parse_body(&body, Some(CreateSessionRequest::default()))?;
    if let Some(r) = &req.database_ref {
        if *r != state.config.database_ref {
            return Err(ApiError::NotFound(format!("unknown database `{r}`")));
        }
    }
    let page_size = req.page_size.unwrap_or(state.config.page_size);
    let seed = req.seed.unwrap_or_else(|| {
        let n = state.created.fetch_add(1, Ordering::Relaxed);
        rng::derive_seed(state.config.seed, &[n])
    });
    let session = SearchSession::new(
        &state.engine,
        Variant::Prominence,
        SessionMode::Interactive,
        page_size,
        seed,
    )?;
    let response = state.page_response(String::new(), &session);
    let (id, _) = state.sessions.insert(session)?;
    log::info!("created session {id}");
    Ok(Json(PageResponse {
        session_id: id,
        ..response
    }))
}

fn locked(shared: &SharedSession) -> std::sync::MutexGuard<'_, SearchSession> {
    shared.lock().unwrap_or_else(|e| e.into_inner())
}

async fn get_page(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<PageResponse>, ApiError> {
    let shared = state.sessions.get(&id)?;
    let session = locked(&shared);
    Ok(Json(state.page_response(id, &session)))
}

async fn submit_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<PageResponse>, ApiError> {
    let shared = state.sessions.get(&id)?;
    let req: FeedbackRequest = parse_body(&body, None)?;
    let round = req
        .constraints
        .iter()
        .map(|c| {
            let reference = state
                .index_of(&c.ref_id)
                .ok_or_else(|| ApiError::BadRequest(format!("unknown reference image `{}`", c.ref_id)))?;
            Ok(Constraint {
                reference,
                attribute: c.attribute_id,
                polarity: c.polarity,
            })
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    let mut session = locked(&shared);
    session.submit(&state.engine, &round)?;
    Ok(Json(state.page_response(id, &session)))
}

async fn explain(
    State(state): State<Arc<AppState>>,
    Path((i, j)): Path<(String, String)>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<Explanation>, ApiError> {
    let k = match query.get("k") {
        None => 3,
        Some(s) => s
            .parse::<usize>()
            .map_err(|_| ApiError::BadRequest(format!("k must be a positive integer, got `{s}`")))?,
    };
    Ok(Json(state.explain(&i, &j, k)?))
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<MetaResponse> {
    Json(MetaResponse {
        vocab: state.vocab.attributes().iter().map(|a| a.name.clone()).collect(),
        m: state.vocab.len(),
        database_size: state.engine.len(),
        model_version: state.model_version.clone(),
    })
}

async fn api_not_found() -> ApiError {
    ApiError::NotFound("no such endpoint".into())
}

pub fn router(state: Arc<AppState>) -> Router {
    let asset_dir = state.config.asset_dir.clone();
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/page", get(get_page))
        .route("/api/sessions/{id}/feedback", post(submit_feedback))
        .route("/api/pairs/{i}/{j}/explain", get(explain))
        .route("/api/meta", get(meta))
        .route("/api/{*rest}", get(api_not_found).post(api_not_found))
        .with_state(state);
    match asset_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(api_not_found),
    }
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
