//! HTTP API over a trained model: task and schema listing, chat sessions
//! that return the template of the predicted action, and a stateless
//! prediction endpoint.

mod engine;
mod error;
mod journal;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use sde_core::corpus::Turn;
use sde_core::schema::SchemaGraph;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

pub use engine::{AlignmentEntry, Engine, PredictResponse, RankedEntry, TaskInfo, MODEL_FILE};
pub use error::{ApiError, ErrorBody, ErrorDetail};
pub use journal::Journal;
pub use session::{alternates, DbHook, Session, SessionStore, SessionTurn, StubDb};

pub const DEFAULT_PORT: u16 = 8080;

/// JSON Schemas (draft 2020-12) of the wire format, keyed by file name.
pub mod contracts {
    pub const ERROR: &str = include_str!("../contracts/error.schema.json");
    pub const HEALTH: &str = include_str!("../contracts/health.schema.json");
    pub const TASKS: &str = include_str!("../contracts/tasks.schema.json");
    pub const SCHEMA_GRAPH: &str = include_str!("../contracts/schema_graph.schema.json");
    pub const TURN: &str = include_str!("../contracts/turn.schema.json");
    pub const SESSION: &str = include_str!("../contracts/session.schema.json");
    pub const PREDICT_RESPONSE: &str = include_str!("../contracts/predict_response.schema.json");
    pub const UTTERANCE_RESPONSE: &str =
        include_str!("../contracts/utterance_response.schema.json");
    pub const REQUESTS: &str = include_str!("../contracts/requests.schema.json");

    pub const ALL: [(&str, &str); 9] = [
        ("error.schema.json", ERROR),
        ("health.schema.json", HEALTH),
        ("tasks.schema.json", TASKS),
        ("schema_graph.schema.json", SCHEMA_GRAPH),
        ("turn.schema.json", TURN),
        ("session.schema.json", SESSION),
        ("predict_response.schema.json", PREDICT_RESPONSE),
        ("utterance_response.schema.json", UTTERANCE_RESPONSE),
        ("requests.schema.json", REQUESTS),
    ];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceConfig {
    pub port: u16,
    pub model_dir: PathBuf,
    pub schema_dir: PathBuf,
    pub journal: Option<PathBuf>,
}

impl ServiceConfig {
    /// Reads `SDE_PORT`, `SDE_MODEL_DIR`, `SDE_SCHEMA_DIR` and the optional
    /// `SDE_JOURNAL`.
    pub fn from_env() -> Result<Self, ApiError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let port = match var("SDE_PORT") {
            Some(p) => p
                .parse()
                .map_err(|_| ApiError::BadRequest(format!("SDE_PORT `{p}` is not a port")))?,
            None => DEFAULT_PORT,
        };
        Ok(Self {
            port,
            model_dir: var("SDE_MODEL_DIR")
                .unwrap_or_else(|| "model".into())
                .into(),
            schema_dir: var("SDE_SCHEMA_DIR")
                .unwrap_or_else(|| "schemas".into())
                .into(),
            journal: var("SDE_JOURNAL").map(PathBuf::from),
        })
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    sessions: Arc<SessionStore>,
    db: Arc<dyn DbHook>,
    journal: Option<Arc<Journal>>,
}

impl AppState {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine: Arc::new(engine),
            sessions: Arc::default(),
            db: Arc::new(StubDb),
            journal: None,
        }
    }

    pub fn with_db(mut self, db: impl DbHook + 'static) -> Self {
        self.db = Arc::new(db);
        self
    }

    /// Restores the sessions recorded in `journal` and logs to it from now on.
    pub fn with_journal(mut self, journal: Journal) -> std::io::Result<Self> {
        for s in Journal::replay(journal.path())? {
            self.sessions.insert(s);
        }
        self.journal = Some(Arc::new(journal));
        Ok(self)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    fn record(&self, s: &Session) {
        if let Some(j) = &self.journal {
            if let Err(e) = j.append(s) {
                tracing::warn!(error = %e, "journal write failed");
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TasksResponse {
    pub tasks: Vec<TaskInfo>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub task: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub task: String,
    #[serde(default)]
    pub history: Vec<Turn>,
}

/// Prediction for a posted utterance together with the system turn it
/// added.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UtteranceResponse {
    pub session_id: String,
    pub reply: SessionTurn,
    pub history_length: usize,
    #[serde(flatten)]
    pub prediction: PredictResponse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
    pub tasks: usize,
}

fn body<T>(req: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    req.map(|Json(v)| v)
        .map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn predict_blocking(
    state: &AppState,
    task: String,
    history: Vec<Turn>,
) -> Result<PredictResponse, ApiError> {
    let engine = Arc::clone(&state.engine);
    tokio::task::spawn_blocking(move || engine.predict(&task, &history))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn healthz(State(s): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_id: s.engine.model_id().to_string(),
        tasks: s.engine.tasks().len(),
    })
}

async fn tasks(State(s): State<AppState>) -> Json<TasksResponse> {
    Json(TasksResponse {
        tasks: s.engine.tasks(),
    })
}

async fn schema(
    State(s): State<AppState>,
    Path(task): Path<String>,
) -> Result<Json<SchemaGraph>, ApiError> {
    Ok(Json(s.engine.schema(&task)?.graph().clone()))
}

async fn create_session(
    State(s): State<AppState>,
    req: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Session>), ApiError> {
    let req = body(req)?;
    let session = Session::new(s.engine.schema(&req.task)?, s.engine.model_id());
    s.record(&session);
    s.sessions.insert(session.clone());
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Session>, ApiError> {
    let cell = s.sessions.get(&id).ok_or(ApiError::UnknownSession(id))?;
    let session = cell.lock().await.clone();
    Ok(Json(session))
}

async fn post_utterance(
    State(s): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<Utterance>, JsonRejection>,
) -> Result<Json<UtteranceResponse>, ApiError> {
    let cell = s
        .sessions
        .get(&id)
        .ok_or_else(|| ApiError::UnknownSession(id.clone()))?;
    let text = body(req)?.text;
    if text.trim().is_empty() {
        return Err(ApiError::Validation(
            "utterance text must not be empty".into(),
        ));
    }
    let mut session = cell.lock().await;
    let user: SessionTurn = Turn::user(text.trim()).into();
    let mut context = session.context();
    context.push(user.turn.clone());
    let prediction = predict_blocking(&s, session.task.clone(), context.clone()).await?;
    let top = prediction.top();
    let schema = s.engine.schema(&session.task)?;
    let text = top
        .template
        .clone()
        .unwrap_or_else(|| top.action.to_string());
    let reply = SessionTurn {
        turn: Turn::system(text, top.action.clone()),
        db_result: s.db.lookup(schema, &top.action, &context),
    };
    session.history.push(user);
    session.history.push(reply.clone());
    session.touch();
    s.record(&session);
    Ok(Json(UtteranceResponse {
        session_id: id,
        reply,
        history_length: session.history.len(),
        prediction,
    }))
}

async fn predict(
    State(s): State<AppState>,
    req: Result<Json<PredictRequest>, JsonRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let req = body(req)?;
    s.engine.schema(&req.task)?;
    Ok(Json(predict_blocking(&s, req.task, req.history).await?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/tasks", get(tasks))
        .route("/api/schema/{task}", get(schema))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/utterance", post(post_utterance))
        .route("/api/predict", post(predict))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Loads the engine from `config` and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ApiError> {
    let engine = Engine::load(&config.model_dir, &config.schema_dir)?;
    let mut state = AppState::new(engine);
    if let Some(path) = &config.journal {
        let journal = Journal::open(path)
            .map_err(|e| ApiError::Internal(format!("journal {}: {e}", path.display())))?;
        state = state
            .with_journal(journal)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
    }
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ApiError::Internal(format!("bind {addr}: {e}")))?;
    tracing::info!(%addr, model = state.engine.model_id(), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))
}
