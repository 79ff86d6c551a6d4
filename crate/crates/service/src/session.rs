use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use sde_core::corpus::{Speaker, Turn};
use sde_core::schema::{ActionId, NodeKind, ValidSchema};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

/// A stored turn. A system query turn carries the database row the hook
/// returned for it, so each post adds exactly two turns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTurn {
    #[serde(flatten)]
    pub turn: Turn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_result: Option<String>,
}

impl From<Turn> for SessionTurn {
    fn from(turn: Turn) -> Self {
        Self {
            turn,
            db_result: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub task: String,
    pub history: Vec<SessionTurn>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
    pub model_id: String,
}

impl Session {
    /// New session; opens with the schema's greeting when it starts with the
    /// system.
    pub fn new(schema: &ValidSchema, model_id: &str) -> Self {
        let start = schema.start_node();
        let history = match (&start.kind, &start.action) {
            (NodeKind::SystemResponse, Some(a)) => {
                vec![Turn::system(start.text.clone(), a.clone()).into()]
            }
            _ => Vec::new(),
        };
        let now = now_ms();
        Self {
            session_id: uuid::Uuid::new_v4().to_string(),
            task: schema.task().to_string(),
            history,
            created_at: now,
            updated_at: now,
            model_id: model_id.to_string(),
        }
    }

    /// History as the model sees it, database rows as their own turns.
    pub fn context(&self) -> Vec<Turn> {
        let mut out = Vec::with_capacity(self.history.len() + 1);
        for t in &self.history {
            out.push(t.turn.clone());
            if let Some(row) = &t.db_result {
                out.push(Turn::db(row.clone()));
            }
        }
        out
    }

    pub fn touch(&mut self) {
        self.updated_at = now_ms();
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Supplies the database turn that follows a query action.
pub trait DbHook: Send + Sync {
    fn lookup(&self, schema: &ValidSchema, action: &ActionId, history: &[Turn]) -> Option<String>;
}

/// Returns the schema's own database node text, e.g. `RESULT: balance [AMOUNT]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubDb;

impl DbHook for StubDb {
    fn lookup(&self, schema: &ValidSchema, action: &ActionId, _history: &[Turn]) -> Option<String> {
        schema.db_response_for(action).map(|n| n.text.clone())
    }
}

/// Sessions by id. Each session sits behind its own lock; the map lock is
/// only held to find or insert one.
#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionStore {
    pub fn insert(&self, session: Session) {
        let id = session.session_id.clone();
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// True when no two system turns are adjacent.
pub fn alternates(history: &[SessionTurn]) -> bool {
    history
        .windows(2)
        .all(|w| !(w[0].turn.speaker == Speaker::System && w[1].turn.speaker == Speaker::System))
}
