//! Metrics, held-out evaluation, transfer experiments and reports.

mod experiment;
mod metrics;
mod significance;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Example};
use crate::model::{Model, ModelError, PreparedSchema};
use crate::schema::{ActionId, SchemaRegistry};
use crate::train::{TrainError, LOSS_EPS};

pub use experiment::{
    run_experiment, run_experiment_with, ExperimentKind, ExperimentReport, ExperimentSpec, Hygiene,
    ModelRow, RunResult, SeedScore,
};
pub use metrics::{accuracy, weighted_f1, ClassMetrics, MetricError, MetricReport};
pub use significance::{significance, welch_t_test, PairwiseTest, TTest};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("training failed: {0}")]
    Train(#[source] Box<TrainError>),
    #[error("no schema registered for task `{0}`")]
    UnknownTask(String),
    #[error("row `{row}` has {seeds} seed(s); significance needs at least 2")]
    InsufficientSeeds { row: String, seeds: usize },
    #[error("zero-shot hygiene violated for holdout `{holdout}`: {message}")]
    Hygiene { holdout: String, message: String },
    #[error("holdout `{holdout}` failed: {message}")]
    HoldoutFailed {
        holdout: String,
        message: String,
        partial: Box<ExperimentReport>,
    },
    #[error("invalid experiment: {0}")]
    Config(String),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(Box::new(e))
    }
}

/// Predictions of a model on a set of examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<ActionId>,
    pub golds: Vec<ActionId>,
    pub report: MetricReport,
    pub mean_loss: f64,
    /// Largest probability any single prediction put on actions outside the
    /// example's task schema.
    pub max_mass_outside_schema: f64,
}

/// Schemas prepared for `model`, one per task, built on first use.
pub struct PreparedCache<'m> {
    model: &'m Model,
    registry: &'m SchemaRegistry,
    prepared: BTreeMap<String, (PreparedSchema, BTreeSet<ActionId>)>,
}

impl<'m> PreparedCache<'m> {
    pub fn new(model: &'m Model, registry: &'m SchemaRegistry) -> Self {
        Self {
            model,
            registry,
            prepared: BTreeMap::new(),
        }
    }

    fn get(&mut self, task: &str) -> Result<&(PreparedSchema, BTreeSet<ActionId>), EvalError> {
        if !self.prepared.contains_key(task) {
            let schema = self
                .registry
                .get(task)
                .ok_or_else(|| EvalError::UnknownTask(task.to_string()))?;
            let p = self.model.prepare_schema(schema)?;
            let actions = schema.actions().into_iter().collect();
            self.prepared.insert(task.to_string(), (p, actions));
        }
        Ok(&self.prepared[task])
    }
}

/// Runs `model` on every example with its task's schema.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    registry: &SchemaRegistry,
) -> Result<Evaluation, EvalError> {
    let mut cache = PreparedCache::new(model, registry);
    let mut predictions = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    let mut loss_sum = 0.0;
    let mut outside: f64 = 0.0;
    for ex in examples {
        let (prepared, schema_actions) = cache.get(&ex.task)?;
        let (dist, _) = model.distribution(prepared, &ex.context)?;
        let vocab = &prepared.vocab;
        predictions.push(vocab.get(dist.argmax(vocab)).clone());
        golds.push(ex.gold_action.clone());
        let p_gold = vocab.index(&ex.gold_action).map_or(0.0, |i| dist.probs[i]);
        loss_sum += -(p_gold + LOSS_EPS).ln();
        let off: f64 = dist
            .probs
            .iter()
            .enumerate()
            .filter(|(i, _)| !schema_actions.contains(vocab.get(*i)))
            .map(|(_, p)| p)
            .sum();
        outside = outside.max(off);
    }
    let report = weighted_f1(&predictions, &golds)?;
    Ok(Evaluation {
        predictions,
        golds,
        report,
        mean_loss: loss_sum / examples.len() as f64,
        max_mass_outside_schema: outside,
    })
}
