use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use branchstance::attribution::{report, AttributionReport};
use branchstance::baselines::{FallbackSegmenter, Segmenter};
use branchstance::ingest::Dataset;
use branchstance::{Instance, StanceModel};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::project::{AnnotationRecord, ProjectError, ProjectState, Round};

/// Error body of every failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> ApiError {
        ApiError { code: code.to_string(), message: message.into(), status: status.as_u16() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> ApiError {
        let (status, code) = match &e {
            ProjectError::NoTasksRemaining { .. } => (StatusCode::NOT_FOUND, "no_tasks_remaining"),
            ProjectError::DuplicateSubmission { .. } => (StatusCode::CONFLICT, "duplicate_submission"),
            ProjectError::UnknownTask { .. } => (StatusCode::CONFLICT, "unknown_task"),
            ProjectError::InvalidLabel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_label"),
            ProjectError::InsufficientData => (StatusCode::CONFLICT, "insufficient_data"),
            ProjectError::UnresolvedInstances { .. } => (StatusCode::CONFLICT, "unresolved_instances"),
            ProjectError::UnknownInstance(_) => (StatusCode::NOT_FOUND, "unknown_instance"),
            ProjectError::Log { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

/// Where `/attribution/{id}` gets its reports: precomputed JSON files named
/// `<instance_id>.json`, else a loaded model.
#[derive(Clone, Default)]
pub struct AttributionSource {
    pub reports_dir: Option<PathBuf>,
    pub model: Option<Arc<StanceModel>>,
    pub segmenter: Option<Arc<dyn Segmenter>>,
}

#[derive(Clone)]
pub struct AppState {
    projects: Arc<HashMap<String, Arc<RwLock<ProjectState>>>>,
    token: Option<String>,
    attribution: AttributionSource,
}

impl AppState {
    pub fn new(projects: Vec<(String, ProjectState)>) -> AppState {
        AppState {
            projects: Arc::new(projects.into_iter().map(|(id, p)| (id, Arc::new(RwLock::new(p)))).collect()),
            token: None,
            attribution: AttributionSource::default(),
        }
    }

    /// Require `Authorization: Bearer <token>` on every request.
    pub fn with_token(mut self, token: impl Into<String>) -> AppState {
        self.token = Some(token.into());
        self
    }

    pub fn with_attribution(mut self, source: AttributionSource) -> AppState {
        self.attribution = source;
        self
    }

    fn project(&self, id: &str) -> Result<Arc<RwLock<ProjectState>>, ApiError> {
        self.projects
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_project", format!("no project `{id}`")))
    }

    fn check_auth(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let Some(token) = &self.token else {
            return Ok(());
        };
        let given =
            headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
        if given == Some(token.as_str()) {
            Ok(())
        } else {
            Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token"))
        }
    }

    /// Datasets of all projects, for thread lookups.
    fn find_thread<T>(&self, f: impl Fn(&Dataset) -> Option<T>) -> Option<T> {
        let mut ids: Vec<&String> = self.projects.keys().collect();
        ids.sort();
        ids.into_iter().find_map(|id| {
            let p = self.projects[id].read().unwrap_or_else(|e| e.into_inner());
            f(p.dataset())
        })
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
    round: Option<String>,
}

fn parse_round(s: Option<&str>) -> Result<Round, ApiError> {
    let s = s.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "missing `round`"))?;
    s.parse().map_err(|m: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", m))
}

async fn next_task(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(project): Path<String>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    st.check_auth(&headers)?;
    let annotator = q
        .annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "missing `annotator`"))?;
    let round = parse_round(q.round.as_deref())?;
    let p = st.project(&project)?;
    let task =
        tokio::task::spawn_blocking(move || p.write().unwrap_or_else(|e| e.into_inner()).next_task(&annotator, round))
            .await
            .map_err(internal)??;
    Ok(Json(task).into_response())
}

/// Body of `POST /projects/{id}/labels`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub instance_id: String,
    pub annotator_id: String,
    pub round: String,
    pub label: String,
}

async fn submit_label(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(project): Path<String>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Result<Response, ApiError> {
    st.check_auth(&headers)?;
    let Json(sub) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let round = parse_round(Some(&sub.round))?;
    let label = ProjectState::parse_label(&sub.label)?;
    let record = AnnotationRecord {
        instance_id: sub.instance_id,
        annotator_id: sub.annotator_id,
        round,
        label,
        submitted_at: Utc::now(),
    };
    let p = st.project(&project)?;
    let ack = tokio::task::spawn_blocking(move || p.write().unwrap_or_else(|e| e.into_inner()).submit_label(record))
        .await
        .map_err(internal)??;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn stats(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(project): Path<String>,
) -> Result<Response, ApiError> {
    st.check_auth(&headers)?;
    let p = st.project(&project)?;
    let s = p.read().unwrap_or_else(|e| e.into_inner()).stats();
    Ok(Json(s).into_response())
}

/// An instance as shown in the thread viewer; gold labels are withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadNode {
    pub instance_id: String,
    pub parent_id: Option<String>,
    pub depth: usize,
    pub text: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadView {
    pub thread_id: String,
    /// Pre-order.
    pub instances: Vec<ThreadNode>,
}

async fn thread(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(thread_id): Path<String>,
) -> Result<Response, ApiError> {
    st.check_auth(&headers)?;
    let view = st
        .find_thread(|ds| {
            let t = ds.thread(&thread_id)?;
            let instances = t
                .preorder()
                .into_iter()
                .map(|i: &Instance| ThreadNode {
                    instance_id: i.instance_id.clone(),
                    parent_id: i.parent_id.clone(),
                    depth: t.depth(&i.instance_id).expect("instance in thread"),
                    text: i.text.clone(),
                    created_at: i.created_at.to_string(),
                })
                .collect();
            Some(ThreadView { thread_id: thread_id.clone(), instances })
        })
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_thread", format!("no thread `{thread_id}`")))?;
    Ok(Json(view).into_response())
}

async fn attribution(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(instance_id): Path<String>,
) -> Result<Response, ApiError> {
    st.check_auth(&headers)?;
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "no_attribution", format!("no report for `{instance_id}`"));
    if let Some(dir) = &st.attribution.reports_dir {
        let path = dir.join(format!("{instance_id}.json"));
        if let Ok(text) = tokio::fs::read_to_string(&path).await {
            let rep: AttributionReport = serde_json::from_str(&text).map_err(internal)?;
            return Ok(Json(rep).into_response());
        }
    }
    let Some(model) = st.attribution.model.clone() else {
        return Err(not_found());
    };
    let branch =
        st.find_thread(|ds| ds.threads.iter().find_map(|t| t.sub_branch(&instance_id).ok())).ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "unknown_instance", format!("no instance `{instance_id}`"))
        })?;
    let seg = st.attribution.segmenter.clone().unwrap_or_else(|| Arc::new(FallbackSegmenter));
    let rep = tokio::task::spawn_blocking(move || report(&branch, model.as_ref(), seg.as_ref()))
        .await
        .map_err(internal)?
        .map_err(internal)?;
    Ok(Json(rep).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/projects/:id/next", get(next_task))
        .route("/projects/:id/labels", post(submit_label))
        .route("/projects/:id/stats", get(stats))
        .route("/threads/:id", get(thread))
        .route("/attribution/:id", get(attribution))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

/// Serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
