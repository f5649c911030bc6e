//! HTTP/JSON API over a [`Store`].
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | create from a config, manifest text and optional seed hierarchy |
//! | `GET /sessions` | list session ids |
//! | `GET /session/{id}/state` | hierarchy snapshot and progress |
//! | `GET /session/{id}/next` | pending prompt with crop and exemplars, or `{"done": true}` |
//! | `POST /session/{id}/answer` | answer the pending prompt |
//! | `GET /session/{id}/stats` | counts and question totals |
//! | `GET /session/{id}/export` | the dataset export as one JSON document |
//!
//! Errors are `{"error": "..."}` with 404 for unknown sessions, 409 for a
//! stale question seq (the pending prompt is echoed as `pending`) and 422
//! for malformed or rejected payloads.

use std::io::Cursor;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vislabel_core::ingest::Manifest;
use vislabel_core::loops::{Answer, NewCategoryDecision, Prompt, Response};
use vislabel_core::session::{
    AnswerStatus, DatasetExport, NextView, SessionConfig, SessionError, SessionStats, StateView,
};
use vislabel_core::{Descriptors, Hierarchy};

use crate::store::{lock, Store, StoreError};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    pending: Option<Prompt>,
}

impl ApiError {
    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
            pending: None,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        let (status, pending) = match e {
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, None),
            StoreError::Exists(_) => (StatusCode::CONFLICT, None),
            StoreError::Session(SessionError::StaleQuestion { pending, .. }) => {
                (StatusCode::CONFLICT, pending.map(|p| *p))
            }
            StoreError::Session(
                SessionError::InvalidAnswer(_)
                | SessionError::InvalidEvent { .. }
                | SessionError::Config(_)
                | SessionError::Ingest(_)
                | SessionError::Hierarchy(_),
            ) => (StatusCode::UNPROCESSABLE_ENTITY, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        if status.is_server_error() {
            log::error!("{message}");
        }
        ApiError {
            status,
            message,
            pending,
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        StoreError::Session(e).into()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::unprocessable(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> HttpResponse {
        let body = match self.pending {
            Some(p) => json!({ "error": self.message, "pending": p }),
            None => json!({ "error": self.message }),
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Body of `POST /sessions`. `manifest` is the manifest file's JSON Lines
/// text; without it the manifest is read from `config.manifest_uri`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub config: SessionConfig,
    #[serde(default)]
    pub manifest: Option<String>,
    #[serde(default)]
    pub seed: Option<Hierarchy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewCategoryBody {
    #[serde(default)]
    pub name: Option<String>,
    pub genus: String,
    #[serde(default)]
    pub differentia: String,
}

/// Body of `POST /session/{id}/answer`: the prompt's seq and exactly one of
/// `verdict`, `new_category` or `keep_at_parent: true`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_category: Option<NewCategoryBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_at_parent: Option<bool>,
}

impl AnswerBody {
    pub fn from_answer(answer: &Answer) -> Self {
        let mut body = AnswerBody {
            seq: answer.seq,
            ..Default::default()
        };
        match &answer.response {
            Response::Verdict(v) => body.verdict = Some(*v),
            Response::NewCategory(NewCategoryDecision::KeepAtParent) => body.keep_at_parent = Some(true),
            Response::NewCategory(NewCategoryDecision::Create(d)) => {
                body.new_category = Some(NewCategoryBody {
                    name: d.name.clone(),
                    genus: d.genus.clone(),
                    differentia: d.differentia.clone(),
                })
            }
        }
        body
    }

    pub fn into_answer(self) -> Result<Answer, String> {
        let response = match (self.verdict, self.new_category, self.keep_at_parent) {
            (Some(v), None, None) => Response::Verdict(v),
            (None, Some(c), None) => Response::NewCategory(NewCategoryDecision::Create(Descriptors {
                name: c.name,
                genus: c.genus,
                differentia: c.differentia,
            })),
            (None, None, Some(true)) => Response::NewCategory(NewCategoryDecision::KeepAtParent),
            (None, None, Some(false)) => return Err("keep_at_parent must be true when given".into()),
            _ => return Err("expected exactly one of verdict, new_category, keep_at_parent".into()),
        };
        Ok(Answer {
            seq: self.seq,
            response,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerReply {
    /// "applied", or "duplicate" for a repeated answer to an answered prompt.
    pub status: String,
    pub next: NextView,
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/session/{id}/state", get(state))
        .route("/session/{id}/next", get(next))
        .route("/session/{id}/answer", post(answer))
        .route("/session/{id}/stats", get(stats))
        .route("/session/{id}/export", get(export))
        .with_state(store)
}

async fn create_session(
    State(store): State<Arc<Store>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<StateView>)> {
    let Json(req) = body?;
    let manifest = match &req.manifest {
        Some(text) => Manifest::read(Cursor::new(text.as_bytes())),
        None => Manifest::load(&req.config.manifest_uri),
    }
    .map_err(|e| ApiError::unprocessable(format!("manifest: {e}")))?;
    let session = store.create(req.config, &manifest, req.seed.as_ref())?;
    let view = lock(&session).state().state_view();
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(store): State<Arc<Store>>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(store.list()?))
}

async fn state(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<StateView>> {
    let session = store.get(&id)?;
    let view = lock(&session).state().state_view();
    Ok(Json(view))
}

async fn next(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<NextView>> {
    let session = store.get(&id)?;
    let view = lock(&session).state().next_view();
    Ok(Json(view))
}

async fn answer(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Result<Json<AnswerBody>, JsonRejection>,
) -> ApiResult<Json<AnswerReply>> {
    let session = store.get(&id)?;
    let Json(body) = body?;
    let answer = body.into_answer().map_err(ApiError::unprocessable)?;
    let mut session = lock(&session);
    let status = session.answer(answer)?;
    Ok(Json(AnswerReply {
        status: match status {
            AnswerStatus::Applied => "applied",
            AnswerStatus::Duplicate => "duplicate",
        }
        .into(),
        next: session.state().next_view(),
    }))
}

async fn stats(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<SessionStats>> {
    let session = store.get(&id)?;
    let stats = lock(&session).state().stats();
    Ok(Json(stats))
}

async fn export(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<DatasetExport>> {
    let session = store.get(&id)?;
    let export = lock(&session).export();
    Ok(Json(export))
}
