//! Dialog corpora, next-action examples and train/test splits.

mod split;
mod star;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ActionId, NodeId, SchemaRegistry};

pub use split::{split_leave_one_domain, split_leave_one_task, split_standard, Split, SplitKind};
pub use star::{import_star, import_star_dir, StarImport};
pub use synthetic::{generate_synthetic, SyntheticConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dialog `{dialog}`: {message}")]
    InvalidDialog { dialog: String, message: String },
    #[error("dialog `{dialog}` references task `{task}` with no registered schema")]
    UnknownTask { dialog: String, task: String },
    #[error("task `{task}` has {dialogs} dialog(s); a split needs at least 2")]
    DegenerateSplit { task: String, dialogs: usize },
    #[error("unknown holdout `{holdout}`; available: {available:?}")]
    UnknownHoldout {
        holdout: String,
        available: Vec<String>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "user")]
    User,
    #[serde(rename = "system")]
    System,
    #[serde(rename = "db")]
    Database,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => "[USER]",
            Speaker::System => "[SYSTEM]",
            Speaker::Database => "[DB]",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionId>,
    /// Schema node this turn realizes, when known (synthetic dialogs carry it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            action: None,
            node: None,
        }
    }

    pub fn system(text: impl Into<String>, action: ActionId) -> Self {
        Self {
            speaker: Speaker::System,
            text: text.into(),
            action: Some(action),
            node: None,
        }
    }

    pub fn db(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Database,
            text: text.into(),
            action: None,
            node: None,
        }
    }

    pub fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub task: String,
    pub domain: String,
    pub turns: Vec<Turn>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub dialogs: Vec<Dialog>,
}

impl Corpus {
    pub fn new(dialogs: Vec<Dialog>) -> Self {
        Self { dialogs }
    }

    pub fn len(&self) -> usize {
        self.dialogs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogs.is_empty()
    }

    pub fn tasks(&self) -> BTreeSet<&str> {
        self.dialogs.iter().map(|d| d.task.as_str()).collect()
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.dialogs.iter().map(|d| d.domain.as_str()).collect()
    }

    pub fn task_domains(&self) -> BTreeMap<&str, &str> {
        self.dialogs
            .iter()
            .map(|d| (d.task.as_str(), d.domain.as_str()))
            .collect()
    }

    pub fn turn_count(&self) -> usize {
        self.dialogs.iter().map(|d| d.turns.len()).sum()
    }

    pub fn system_turn_count(&self) -> usize {
        self.dialogs
            .iter()
            .flat_map(|d| &d.turns)
            .filter(|t| t.speaker == Speaker::System)
            .count()
    }

    /// Every text in the corpus, in order.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.dialogs
            .iter()
            .flat_map(|d| d.turns.iter().map(|t| t.text.as_str()))
    }

    /// Checks turn-level invariants, task/domain consistency and, when a
    /// registry is given, that every task has a schema.
    pub fn check(&self, registry: Option<&SchemaRegistry>) -> Result<(), CorpusError> {
        let mut domain_of: BTreeMap<&str, &str> = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for d in &self.dialogs {
            let bad = |message: String| CorpusError::InvalidDialog {
                dialog: d.id.clone(),
                message,
            };
            if !ids.insert(d.id.as_str()) {
                return Err(bad("duplicate dialog id".into()));
            }
            if !d.turns.iter().any(|t| t.speaker == Speaker::System) {
                return Err(bad("dialog has no system turn".into()));
            }
            for (i, t) in d.turns.iter().enumerate() {
                if t.text.trim().is_empty() {
                    return Err(bad(format!("turn {i} has empty text")));
                }
                if (t.speaker == Speaker::System) != t.action.is_some() {
                    return Err(bad(format!(
                        "turn {i}: exactly the system turns carry an action"
                    )));
                }
            }
            match domain_of.insert(&d.task, &d.domain) {
                Some(prev) if prev != d.domain => {
                    return Err(bad(format!(
                        "task `{}` appears in domains `{prev}` and `{}`",
                        d.task, d.domain
                    )))
                }
                _ => {}
            }
            if let Some(reg) = registry {
                if reg.get(&d.task).is_none() {
                    return Err(CorpusError::UnknownTask {
                        dialog: d.id.clone(),
                        task: d.task.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON; byte-identical for identical corpora.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("corpus always serializes");
        s.push('\n');
        s
    }
}

/// Parses and checks a corpus file.
pub fn load_corpus(
    mut source: impl Read,
    registry: Option<&SchemaRegistry>,
) -> Result<Corpus, CorpusError> {
    let mut buf = String::new();
    source.read_to_string(&mut buf)?;
    let corpus: Corpus = serde_json::from_str(&buf).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    corpus.check(registry)?;
    Ok(corpus)
}

/// The turns preceding a system turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogContext {
    pub turns: Vec<Turn>,
}

impl DialogContext {
    pub fn new(turns: Vec<Turn>) -> Self {
        Self { turns }
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Speaker-tagged text, e.g. `[SYSTEM] Hello! [USER] hi`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for t in &self.turns {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(t.speaker.tag());
            out.push(' ');
            out.push_str(&t.text);
        }
        out
    }

    /// The most recent user or database turn.
    pub fn last_candidate_turn(&self) -> Option<&Turn> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.speaker != Speaker::System)
    }
}

/// One next-action prediction problem.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub context: DialogContext,
    pub gold_action: ActionId,
    pub task: String,
    pub domain: String,
    pub dialog_id: String,
    pub turn_index: usize,
}

pub fn dialog_examples(d: &Dialog) -> impl Iterator<Item = Example> + '_ {
    d.turns.iter().enumerate().filter_map(move |(i, t)| {
        let gold_action = t.action.clone().filter(|_| t.speaker == Speaker::System)?;
        Some(Example {
            context: DialogContext::new(d.turns[..i].to_vec()),
            gold_action,
            task: d.task.clone(),
            domain: d.domain.clone(),
            dialog_id: d.id.clone(),
            turn_index: i,
        })
    })
}

/// One example per system turn, in dialog then turn order.
pub fn make_examples(corpus: &Corpus) -> Vec<Example> {
    corpus.dialogs.iter().flat_map(dialog_examples).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn toy_dialog(id: &str, task: &str, domain: &str) -> Dialog {
        Dialog {
            id: id.into(),
            task: task.into(),
            domain: domain.into(),
            turns: vec![
                Turn::user("hi"),
                Turn::system("Hello!", ActionId::new("hello")),
                Turn::user("my name is bo"),
                Turn::system("What is your pin?", ActionId::new("ask_pin")),
            ],
        }
    }

    #[test]
    fn examples_per_system_turn() {
        let c = Corpus::new(vec![toy_dialog("d1", "t", "x")]);
        let ex = make_examples(&c);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].context.turns.len(), 1);
        assert_eq!(ex[1].context.turns.len(), 3);
        assert_eq!(ex[1].gold_action, ActionId::new("ask_pin"));
        assert_eq!(ex[1].turn_index, 3);
        assert_eq!(ex.len(), c.system_turn_count());
    }

    #[test]
    fn greeting_first_gives_empty_context() {
        let mut d = toy_dialog("d1", "t", "x");
        d.turns.remove(0);
        let ex = make_examples(&Corpus::new(vec![d]));
        assert!(ex[0].context.is_empty());
    }

    #[test]
    fn context_serialization() {
        let d = toy_dialog("d1", "t", "x");
        let ctx = DialogContext::new(d.turns[..3].to_vec());
        assert_eq!(
            ctx.serialize(),
            "[USER] hi [SYSTEM] Hello! [USER] my name is bo"
        );
        assert_eq!(ctx.last_candidate_turn().unwrap().text, "my name is bo");
    }

    #[test]
    fn load_counts_and_checks() {
        let empty = load_corpus(r#"{"dialogs":[]}"#.as_bytes(), None).unwrap();
        assert_eq!((empty.len(), empty.tasks().len()), (0, 0));

        let dialogs = (0..6)
            .map(|i| toy_dialog(&format!("d{i}"), ["a", "b"][i % 2], "x"))
            .collect();
        let c = Corpus::new(dialogs);
        let back = load_corpus(c.to_json().as_bytes(), None).unwrap();
        assert_eq!(back, c);
        assert_eq!((back.len(), back.tasks().len()), (6, 2));

        let reg = SchemaRegistry::new();
        assert!(matches!(
            load_corpus(c.to_json().as_bytes(), Some(&reg)),
            Err(CorpusError::UnknownTask { .. })
        ));
        let bad = r#"{"dialogs":[{"id":"d","task":"t","domain":"x","turns":[{"speaker":"system","text":"hi"}]}]}"#;
        assert!(matches!(
            load_corpus(bad.as_bytes(), None),
            Err(CorpusError::InvalidDialog { .. })
        ));
        assert!(matches!(
            load_corpus("{".as_bytes(), None),
            Err(CorpusError::Parse { .. })
        ));
    }
}
