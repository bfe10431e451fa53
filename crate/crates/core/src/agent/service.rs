use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex, RwLock};

use super::{Agent, AgentMode, ChatSession, LogEvent, ModeKind, SessionLogger};
use crate::error::{Error, Result};
use crate::label::SentimentLabel;
use crate::lexicon::LexiconKind;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub log_dir: Option<PathBuf>,
}

pub struct AppState {
    agent: Arc<Agent>,
    sessions: RwLock<HashMap<String, Arc<Mutex<ChatSession>>>>,
    logger: Option<SessionLogger>,
}

impl AppState {
    pub fn new(agent: Agent, logger: Option<SessionLogger>) -> Arc<Self> {
        Arc::new(AppState {
            agent: Arc::new(agent),
            sessions: RwLock::new(HashMap::new()),
            logger,
        })
    }

    fn log(&self, id: &str, event: &LogEvent) {
        if let Some(logger) = &self.logger {
            if let Err(e) = logger.append(id, event) {
                tracing::warn!(session = id, error = %e, "could not append to session log");
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

impl ApiError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            error: message.into(),
            field: Some(field.into()),
        }
    }

    fn not_found(id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            error: format!("unknown session `{id}`"),
            field: None,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            // validation messages start with the offending field name
            Error::Validation(msg) => {
                let field = msg.split_once(':').map(|(f, _)| f.trim().to_string());
                ApiError {
                    status: StatusCode::UNPROCESSABLE_ENTITY,
                    error: msg,
                    field,
                }
            }
            Error::Config(msg) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                error: msg,
                field: Some("mode".into()),
            },
            other => ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                error: other.to_string(),
                field: None,
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            error: r.body_text(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    mode: Option<String>,
    lexicon_kind: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PostMessage {
    text: Option<String>,
    label: Option<String>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<CreateSession>, JsonRejection>,
) -> std::result::Result<impl IntoResponse, ApiError> {
    let Json(body) = body?;
    let kind: ModeKind = body
        .mode
        .as_deref()
        .ok_or_else(|| ApiError::invalid("mode", "mode is required"))?
        .parse()
        .map_err(|e: Error| ApiError::invalid("mode", e.to_string()))?;
    let lexicon_kind = match body.lexicon_kind.as_deref() {
        Some(k) => k
            .parse::<LexiconKind>()
            .map_err(|e| ApiError::invalid("lexicon_kind", e.to_string()))?,
        None => state.agent.default_lexicon(kind),
    };
    let mode = AgentMode::new(kind, lexicon_kind).map_err(|e| ApiError::invalid("lexicon_kind", e.to_string()))?;
    state
        .agent
        .check_mode(&mode)
        .map_err(|e| ApiError::invalid("mode", e.to_string()))?;
    let session = ChatSession::new(mode);
    let id = session.id().to_string();
    state.log(&id, &LogEvent::Created {
        id: id.clone(),
        mode,
        created_at: session.created_at(),
    });
    state
        .sessions
        .write()
        .await
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id, "mode": kind, "lexicon_kind": lexicon_kind })),
    ))
}

async fn session_handle(state: &AppState, id: &str) -> std::result::Result<Arc<Mutex<ChatSession>>, ApiError> {
    state
        .sessions
        .read()
        .await
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(id))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: std::result::Result<Json<PostMessage>, JsonRejection>,
) -> std::result::Result<impl IntoResponse, ApiError> {
    let handle = session_handle(&state, &id).await?;
    let Json(body) = body?;
    let text = body.text.unwrap_or_default();
    if text.trim().is_empty() {
        return Err(ApiError::invalid("text", "text is required and must not be empty"));
    }
    let label: Option<SentimentLabel> = match body.label.as_deref() {
        Some(l) => Some(l.parse().map_err(|e: Error| ApiError::invalid("label", e.to_string()))?),
        None => None,
    };
    // one in-flight turn per session
    let mut guard = handle.lock().await;
    if guard.mode().kind == ModeKind::Oracle && label.is_none() {
        return Err(ApiError::invalid("label", "label is required in oracle mode"));
    }
    let mut session = guard.clone();
    let agent = state.agent.clone();
    let user_text = text.clone();
    let (session, result) = tokio::task::spawn_blocking(move || {
        let result = agent.reply(&mut session, &user_text, label);
        (session, result)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        error: e.to_string(),
        field: None,
    })?;
    let result = result?;
    *guard = session;
    state.log(&id, &LogEvent::Turn {
        user_text: text.trim().to_string(),
        label,
        result: result.clone(),
    });
    Ok(Json(result))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> std::result::Result<impl IntoResponse, ApiError> {
    let handle = session_handle(&state, &id).await?;
    let session = handle.lock().await.clone();
    Ok(Json(session))
}

async fn health(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    let agent = &state.agent;
    Json(json!({
        "status": "ok",
        "labels": agent.labels,
        "modes": agent.modes(),
        "lexicon_kind": agent.default_lexicon(ModeKind::Oracle),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .with_state(state)
}

/// Serves on an already bound listener until the task is cancelled.
pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> Result<()> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Binds `config.addr` and serves `agent`.
pub async fn serve(config: &ServeConfig, agent: Agent) -> Result<()> {
    let logger = config.log_dir.as_ref().map(SessionLogger::new).transpose()?;
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {}: {e}", config.addr)))?;
    tracing::info!(addr = %config.addr, "serving");
    serve_on(listener, AppState::new(agent, logger)).await
}
