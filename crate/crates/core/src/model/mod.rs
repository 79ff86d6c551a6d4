//! Next-action models: the pooled-vector classifier and schema attention with
//! its ablations.

mod bundle;
mod engine;
mod ops;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::schema::{ActionId, NodeId, SchemaError, ValidSchema};
use crate::tensor::Matrix;

pub use bundle::{ModelBundle, BUNDLE_FORMAT_VERSION};
pub use engine::{
    Alignment, Model, ModelConfig, ModelVars, Prediction, PreparedSchema, RankedAction,
};
pub use ops::{
    baseline_forward, mix, propagate_to_actions, sam_forward, schema_attention, sentence_attention,
    AttentionResult,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("context has no tokens to attend from")]
    EmptyContext,
    #[error("no candidate nodes to attend to")]
    EmptyCandidates,
    #[error("action `{0}` is not in the action vocabulary")]
    UnknownAction(ActionId),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("this configuration needs a classification head")]
    MissingHead,
    #[error(
        "schema for task `{task}` changed since training (fingerprint {trained}, now {found})"
    )]
    SchemaMismatch {
        task: String,
        trained: String,
        found: String,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered, duplicate-free list of actions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<ActionId>", into = "Vec<ActionId>")]
pub struct ActionVocabulary {
    actions: Vec<ActionId>,
    index: HashMap<ActionId, usize>,
}

impl From<Vec<ActionId>> for ActionVocabulary {
    fn from(v: Vec<ActionId>) -> Self {
        Self::new(v)
    }
}

impl From<ActionVocabulary> for Vec<ActionId> {
    fn from(v: ActionVocabulary) -> Self {
        v.actions
    }
}

impl ActionVocabulary {
    pub fn new(actions: impl IntoIterator<Item = ActionId>) -> Self {
        let mut v = Self::default();
        v.extend(actions);
        v
    }

    fn extend(&mut self, actions: impl IntoIterator<Item = ActionId>) {
        for a in actions {
            if !self.index.contains_key(&a) {
                self.index.insert(a.clone(), self.actions.len());
                self.actions.push(a);
            }
        }
    }

    /// This vocabulary followed by any of `more` not already present.
    pub fn extended<'a>(&self, more: impl IntoIterator<Item = &'a ActionId>) -> Self {
        let mut v = self.clone();
        v.extend(more.into_iter().cloned());
        v
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn index(&self, a: &ActionId) -> Option<usize> {
        self.index.get(a).copied()
    }

    pub fn get(&self, i: usize) -> &ActionId {
        &self.actions[i]
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.actions
    }

    pub fn contains(&self, a: &ActionId) -> bool {
        self.index.contains_key(a)
    }
}

/// Probabilities over an [`ActionVocabulary`], index-aligned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Nonnegative entries summing to one within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.probs.iter().all(|p| *p >= 0.0 && p.is_finite()) && (self.sum() - 1.0).abs() <= tol
    }

    /// Highest-probability index; ties go to the lexicographically smallest
    /// action name.
    pub fn argmax(&self, vocab: &ActionVocabulary) -> usize {
        (0..self.probs.len())
            .min_by(|&a, &b| {
                self.probs[b]
                    .total_cmp(&self.probs[a])
                    .then_with(|| vocab.get(a).cmp(vocab.get(b)))
            })
            .expect("nonempty distribution")
    }
}

/// The four switches separating schema attention from its sentence-level,
/// classifier-combined ancestor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    /// [1] User-aware schema; off means the system-only variant.
    pub user_aware_schema: bool,
    /// [2] Word-level attention; off means pooled-vector attention.
    pub word_level_attention: bool,
    /// [3] Batches drawn from a single task.
    pub same_task_sampling: bool,
    /// [4] Schema distribution alone; off mixes in a classifier head.
    pub no_linear_head: bool,
}

impl AblationFlags {
    pub const SAM: Self = Self {
        user_aware_schema: true,
        word_level_attention: true,
        same_task_sampling: true,
        no_linear_head: true,
    };
    pub const BERT_S: Self = Self {
        user_aware_schema: false,
        word_level_attention: false,
        same_task_sampling: false,
        no_linear_head: false,
    };

    fn bits(self) -> [bool; 4] {
        [
            self.user_aware_schema,
            self.word_level_attention,
            self.same_task_sampling,
            self.no_linear_head,
        ]
    }

    fn from_bits(b: [bool; 4]) -> Self {
        Self {
            user_aware_schema: b[0],
            word_level_attention: b[1],
            same_task_sampling: b[2],
            no_linear_head: b[3],
        }
    }

    /// SAM with the listed improvements (1-based) switched off.
    pub fn without(removed: &[usize]) -> Self {
        let mut b = [true; 4];
        for &r in removed {
            b[r - 1] = false;
        }
        Self::from_bits(b)
    }

    /// Every one of the 16 combinations.
    pub fn all() -> impl Iterator<Item = Self> {
        (0..16u8).map(|m| Self::from_bits([m & 1 != 0, m & 2 != 0, m & 4 != 0, m & 8 != 0]))
    }
}

/// Which model family, with the flags for schema attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Baseline,
    Sam(AblationFlags),
}

impl ModelKind {
    pub fn needs_head(self) -> bool {
        match self {
            ModelKind::Baseline => true,
            ModelKind::Sam(f) => !f.no_linear_head,
        }
    }

    pub fn flags(self) -> Option<AblationFlags> {
        match self {
            ModelKind::Baseline => None,
            ModelKind::Sam(f) => Some(f),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Baseline => f.write_str("baseline"),
            ModelKind::Sam(flags) if *flags == AblationFlags::SAM => f.write_str("sam"),
            ModelKind::Sam(flags) if *flags == AblationFlags::BERT_S => f.write_str("bert+s"),
            ModelKind::Sam(flags) => {
                let off: String = flags
                    .bits()
                    .iter()
                    .enumerate()
                    .filter(|(_, on)| !**on)
                    .map(|(i, _)| char::from(b'1' + i as u8))
                    .collect();
                write!(f, "sam-{off}")
            }
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    /// `baseline`, `sam`, `bert+s`, or `sam-` followed by the improvements to
    /// remove, e.g. `sam-1` or `sam-234`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "baseline" => return Ok(ModelKind::Baseline),
            "sam" => return Ok(ModelKind::Sam(AblationFlags::SAM)),
            "bert+s" => return Ok(ModelKind::Sam(AblationFlags::BERT_S)),
            _ => {}
        }
        let digits = s
            .strip_prefix("sam-")
            .ok_or_else(|| format!("unknown model `{s}`"))?;
        let mut removed = Vec::new();
        for c in digits
            .chars()
            .filter(|c| !matches!(c, '[' | ']' | ',' | '-'))
        {
            match c.to_digit(10) {
                Some(d @ 1..=4) if !removed.contains(&(d as usize)) => removed.push(d as usize),
                _ => {
                    return Err(format!(
                        "bad ablation list in `{s}`; use digits 1-4 once each"
                    ))
                }
            }
        }
        if removed.is_empty() {
            return Err(format!("`{s}` removes nothing; use `sam`"));
        }
        Ok(ModelKind::Sam(AblationFlags::without(&removed)))
    }
}

impl TryFrom<String> for ModelKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> Self {
        k.to_string()
    }
}

/// Linear classifier over the pooled context vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineHead {
    /// `|A| × d`
    pub w: Matrix,
    /// `1 × |A|`
    pub b: Matrix,
}

impl BaselineHead {
    pub fn zeros(actions: usize, dim: usize) -> Self {
        Self {
            w: Matrix::zeros(actions, dim),
            b: Matrix::zeros(1, actions),
        }
    }

    pub fn actions(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }
}

/// A schema node offered to the attention, with its text and the action its
/// successor emits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub node: NodeId,
    pub task: String,
    pub text: String,
    pub action: ActionId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub entries: Vec<CandidateEntry>,
}

impl CandidateSet {
    pub fn entry(schema: &ValidSchema, node: &NodeId) -> Result<CandidateEntry, SchemaError> {
        Ok(CandidateEntry {
            node: node.clone(),
            task: schema.task().to_string(),
            text: schema.node_text_repr(node)?.text,
            action: schema.next_action(node)?,
        })
    }

    /// Every candidate node of `schema`, in document order.
    pub fn from_schema(schema: &ValidSchema) -> Self {
        let entries = schema
            .candidate_nodes()
            .iter()
            .map(|n| Self::entry(schema, n).expect("candidate nodes of a valid schema"))
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.entries.iter().map(|e| e.action.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_round_trip() {
        let names = [
            "baseline", "sam", "bert+s", "sam-1", "sam-2", "sam-3", "sam-4", "sam-234", "sam-13",
        ];
        for n in names {
            let k: ModelKind = n.parse().unwrap();
            assert_eq!(k.to_string(), n);
        }
        assert_eq!(
            "sam-[2,3,4]".parse::<ModelKind>().unwrap().to_string(),
            "sam-234"
        );
        assert_eq!(
            "SAM-1234".parse::<ModelKind>().unwrap(),
            ModelKind::Sam(AblationFlags::BERT_S)
        );
        for bad in ["sam-", "sam-5", "sam-11", "bert", ""] {
            assert!(bad.parse::<ModelKind>().is_err(), "{bad}");
        }
        assert_eq!(AblationFlags::all().count(), 16);
    }

    #[test]
    fn vocabulary_extension_keeps_order() {
        let v = ActionVocabulary::new(["b", "a", "b"].map(ActionId::new));
        assert_eq!(v.len(), 2);
        let more = [ActionId::new("c"), ActionId::new("a")];
        let e = v.extended(&more);
        assert_eq!(e.actions(), &["b", "a", "c"].map(ActionId::new));
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"["b","a","c"]"#);
    }

    #[test]
    fn argmax_breaks_ties_by_name() {
        let v = ActionVocabulary::new(["zeta", "alpha", "mid"].map(ActionId::new));
        let d = ActionDistribution {
            probs: vec![0.4, 0.4, 0.2],
        };
        assert_eq!(v.get(d.argmax(&v)).as_str(), "alpha");
    }
}
