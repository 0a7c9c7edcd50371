//! HTTP recommendation service.
//!
//! The listener comes up before the model has loaded; until then every
//! endpoint answers 503. Loaded state is immutable and shared by all
//! requests.

use std::collections::HashMap;
use std::future::IntoFuture;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pcr_core::corpus::{load_articles, load_queries, query_text, Article, Query};
use pcr_core::evaluate::{jaccard, query_token_set, token_set, year_gap};
use pcr_core::{EncoderParams, VectorIndex};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub struct ServiceState {
    pub params: EncoderParams,
    pub index: VectorIndex,
    pub articles: HashMap<String, Article>,
    pub queries: HashMap<String, Query>,
    /// Hex SHA-256 of the checkpoint file.
    pub model_version: String,
}

#[derive(Debug, Clone)]
pub struct ServicePaths {
    pub checkpoint: PathBuf,
    pub index: PathBuf,
    pub articles: PathBuf,
    pub queries: Option<PathBuf>,
}

impl ServiceState {
    pub fn load(paths: &ServicePaths) -> anyhow::Result<Self> {
        let bytes = std::fs::read(&paths.checkpoint)
            .with_context(|| format!("reading {}", paths.checkpoint.display()))?;
        let model_version = hex::encode(Sha256::digest(&bytes));
        let params = EncoderParams::read_from(&mut bytes.as_slice())?;
        let index = VectorIndex::load(&paths.index)?;
        let (articles, _) = load_articles(&paths.articles)?;
        let queries = match &paths.queries {
            Some(p) => load_queries(p)?,
            None => Vec::new(),
        };
        Self::new(params, index, articles, queries, model_version)
    }

    pub fn new(
        params: EncoderParams,
        index: VectorIndex,
        articles: Vec<Article>,
        queries: Vec<Query>,
        model_version: String,
    ) -> anyhow::Result<Self> {
        if index.dim() != params.out_dim() {
            bail!(
                "index dimension {} does not match the checkpoint output dimension {}",
                index.dim(),
                params.out_dim()
            );
        }
        let articles: HashMap<String, Article> = articles.into_iter().map(|a| (a.id.clone(), a)).collect();
        if let Some(missing) = index.ids().iter().find(|id| !articles.contains_key(*id)) {
            bail!("indexed article {missing:?} is missing from the article file");
        }
        Ok(ServiceState {
            params,
            index,
            articles,
            queries: queries.into_iter().map(|q| (q.paragraph_id.clone(), q)).collect(),
            model_version,
        })
    }
}

pub type SharedState = Arc<OnceLock<ServiceState>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }

    fn unavailable() -> Self {
        ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "unavailable",
            message: "model and index are not loaded yet".into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

fn loaded(state: &SharedState) -> Result<&ServiceState, ApiError> {
    state.get().ok_or_else(ApiError::unavailable)
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendRequest {
    #[serde(default)]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub topic_sentence: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub max_year: Option<i32>,
}

impl RecommendRequest {
    fn validate(&self) -> Result<(), ApiError> {
        if self.topic_sentence.trim().is_empty() {
            return Err(ApiError::bad_request("topic_sentence must not be empty"));
        }
        if self.title.trim().is_empty() && self.abstract_text.trim().is_empty() {
            return Err(ApiError::bad_request("title or abstract must not be empty"));
        }
        Ok(())
    }

    fn query_text(&self) -> String {
        query_text(&self.title, &self.abstract_text, &self.topic_sentence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedArticle {
    pub article_id: String,
    pub title: String,
    pub year: i32,
    pub distance: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub results: Vec<RecommendedArticle>,
    pub model_version: String,
    pub latency_ms: f64,
}

pub fn recommend(state: &ServiceState, req: &RecommendRequest) -> Result<Vec<RecommendedArticle>, ApiError> {
    req.validate()?;
    if req.k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let embedding = state
        .params
        .encode(&req.query_text())
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let hits = state
        .index
        .search(&embedding, req.k, req.max_year)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(i, h)| {
            let article = &state.articles[&h.id];
            RecommendedArticle {
                title: article.title.clone(),
                year: article.year,
                article_id: h.id,
                distance: h.distance,
                rank: i + 1,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainRequest {
    /// Explain against a loaded query instead of the request fields.
    #[serde(default)]
    pub query_id: Option<String>,
    #[serde(flatten)]
    pub request: RecommendRequest,
    pub candidate_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub candidate_id: String,
    pub candidate_year: i32,
    pub query_year: Option<i32>,
    /// Query year minus candidate year.
    pub delta_t: Option<i32>,
    pub jaccard: f64,
    pub distance: f64,
    /// 1-based rank among candidates passing the year filter.
    pub rank: Option<usize>,
    pub outside_year_filter: bool,
}

pub fn explain(state: &ServiceState, req: &ExplainRequest) -> Result<Explanation, ApiError> {
    let (text, year, exclude) = match &req.query_id {
        Some(id) => {
            let q = state
                .queries
                .get(id)
                .ok_or_else(|| ApiError::not_found(format!("unknown query {id:?}")))?;
            (q.text.clone(), Some(q.year), Some(q.citing_id.as_str()))
        }
        None => {
            req.request.validate()?;
            (req.request.query_text(), req.request.max_year, None)
        }
    };
    let candidate = state
        .articles
        .get(&req.candidate_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown candidate {:?}", req.candidate_id)))?;
    let row = state
        .index
        .position(&candidate.id)
        .ok_or_else(|| ApiError::not_found(format!("candidate {:?} is not indexed", candidate.id)))?;
    let embedding = state.params.encode(&text).map_err(|e| ApiError::internal(e.to_string()))?;
    let outside = year.is_some_and(|y| candidate.year >= y) || exclude == Some(candidate.id.as_str());
    let rank = if outside {
        None
    } else {
        let ranking = state
            .index
            .full_ranking(&embedding, year)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        ranking
            .iter()
            .filter(|h| Some(h.id.as_str()) != exclude)
            .position(|h| h.id == candidate.id)
            .map(|i| i + 1)
    };
    let overlap = jaccard(&query_token_set(&text), &token_set(&candidate.text()))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Explanation {
        candidate_id: candidate.id.clone(),
        candidate_year: candidate.year,
        query_year: year,
        delta_t: year.map(|y| year_gap(y, candidate.year)),
        jaccard: overlap,
        distance: state.index.distance(row, embedding.as_slice()),
        rank,
        outside_year_filter: outside,
    })
}

async fn recommend_handler(State(state): State<SharedState>, body: Bytes) -> Result<Response, ApiError> {
    let started = Instant::now();
    let s = loaded(&state)?;
    let req: RecommendRequest = parse(&body)?;
    let results = recommend(s, &req)?;
    Ok(Json(RecommendResponse {
        results,
        model_version: s.model_version.clone(),
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    })
    .into_response())
}

async fn explain_handler(State(state): State<SharedState>, body: Bytes) -> Result<Response, ApiError> {
    let s = loaded(&state)?;
    let req: ExplainRequest = parse(&body)?;
    Ok(Json(explain(s, &req)?).into_response())
}

async fn health_handler(State(state): State<SharedState>) -> Result<Response, ApiError> {
    let s = loaded(&state)?;
    Ok(Json(json!({
        "status": "ok",
        "model_version": s.model_version,
        "pool_size": s.index.len(),
    }))
    .into_response())
}

async fn article_handler(State(state): State<SharedState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = loaded(&state)?;
    let article = s
        .articles
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown article {id:?}")))?;
    Ok(Json(article).into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/v1/recommend", post(recommend_handler))
        .route("/api/v1/explain", post(explain_handler))
        .route("/api/v1/health", get(health_handler))
        .route("/api/v1/article/{id}", get(article_handler))
        .fallback(fallback)
        .with_state(state)
}

/// Binds `addr`, loads the model in the background and serves until
/// interrupted. A failed load stops the server.
pub async fn serve(addr: &str, paths: ServicePaths) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    let shared: SharedState = Arc::new(OnceLock::new());
    let server = tokio::spawn(
        axum::serve(listener, router(shared.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .into_future(),
    );
    let state = tokio::task::spawn_blocking(move || ServiceState::load(&paths)).await??;
    log::info!("model {} loaded, {} candidates", state.model_version, state.index.len());
    let _ = shared.set(state);
    server.await??;
    Ok(())
}
