//! Cross-entropy training for every model variant.

mod optim;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Example;
use crate::encoder::build_vocab;
use crate::eval::{evaluate, EvalError};
use crate::model::{
    ActionDistribution, ActionVocabulary, CandidateEntry, CandidateSet, Model, ModelBundle,
    ModelConfig, ModelError, ModelKind,
};
use crate::schema::{ActionId, SchemaRegistry};
use crate::tensor::{Matrix, Tape};

pub use optim::{global_norm, OptimizerConfig, OptimizerKind, OptimizerState};

/// Floor inside the log so a zero-probability gold stays finite.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training examples")]
    NoExamples,
    #[error("task `{task}`: gold action `{action}` has no schema node leading to it")]
    GoldNodeMissing { task: String, action: ActionId },
    #[error("no schema registered for task `{0}`")]
    UnknownTask(String),
    #[error("loss became {loss} at epoch {epoch}, step {step} (gradient norm {grad_norm})")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
        grad_norm: f64,
    },
    #[error("checkpoint does not match this run: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// The gold-action nodes of every example in the batch.
    #[default]
    BatchGoldNodes,
    /// Every candidate node of the batch's (single) task.
    FullTaskSchema,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub model_config: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub candidate_mode: CandidateMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Sam(crate::model::AblationFlags::SAM),
            model_config: ModelConfig::default(),
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 13,
            optimizer: OptimizerConfig::default(),
            candidate_mode: CandidateMode::BatchGoldNodes,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite nonnegative number");
        }
        let w = self.model_config.mixture_weight;
        if !(0.0..=1.0).contains(&w) {
            return bad("mixture_weight must lie in [0, 1]");
        }
        if self.candidate_mode == CandidateMode::FullTaskSchema && !self.same_task() {
            return bad("full_task_schema candidates need same-task batches");
        }
        Ok(())
    }

    pub fn same_task(&self) -> bool {
        self.model.flags().is_some_and(|f| f.same_task_sampling)
    }
}

/// Which examples a batch may draw from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskScope {
    Mixed,
    Task(String),
}

/// Indices into the training examples plus their scope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub examples: Vec<usize>,
    pub scope: TaskScope,
}

/// One epoch of uniformly shuffled, fixed-size batches.
pub fn sample_batches_random(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|c| Batch {
            examples: c.to_vec(),
            scope: TaskScope::Mixed,
        })
        .collect()
}

/// One epoch of single-task batches. Each batch picks a task with
/// probability proportional to its examples not yet used this epoch, then
/// takes the next `batch_size` of that task's shuffled examples.
pub fn sample_batches_same_task(
    tasks: &[&str],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Vec<Batch> {
    let mut pools: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        pools.entry(t).or_default().push(i);
    }
    for pool in pools.values_mut() {
        pool.shuffle(rng);
        pool.reverse();
    }
    let mut left = tasks.len();
    let mut out = Vec::new();
    while left > 0 {
        let mut r = rng.random_range(0..left);
        let (&task, pool) = pools
            .iter_mut()
            .find(|(_, p)| {
                if r < p.len() {
                    true
                } else {
                    r -= p.len();
                    false
                }
            })
            .expect("r is below the remaining total");
        let take = batch_size.min(pool.len());
        let examples: Vec<usize> = (0..take)
            .map(|_| pool.pop().expect("nonempty pool"))
            .collect();
        left -= take;
        out.push(Batch {
            examples,
            scope: TaskScope::Task(task.to_string()),
        });
    }
    out
}

/// Candidate nodes for a batch, drawn from `schemas` (already in the model's
/// variant). Entries are deduplicated and ordered by task, then document
/// order.
pub fn build_candidates(
    examples: &[&Example],
    schemas: &SchemaRegistry,
    mode: CandidateMode,
) -> Result<CandidateSet, TrainError> {
    let mut wanted: BTreeMap<&str, BTreeSet<crate::schema::NodeId>> = BTreeMap::new();
    for ex in examples {
        let schema = schemas
            .get(&ex.task)
            .ok_or_else(|| TrainError::UnknownTask(ex.task.clone()))?;
        let nodes = schema.nodes_for_action(&ex.gold_action);
        if nodes.is_empty() {
            return Err(TrainError::GoldNodeMissing {
                task: ex.task.clone(),
                action: ex.gold_action.clone(),
            });
        }
        let set = wanted.entry(&ex.task).or_default();
        match mode {
            CandidateMode::BatchGoldNodes => set.extend(nodes),
            CandidateMode::FullTaskSchema => set.extend(schema.candidate_nodes()),
        }
    }
    let mut entries: Vec<CandidateEntry> = Vec::new();
    for (task, nodes) in wanted {
        let schema = schemas.get(task).expect("checked above");
        for n in schema
            .candidate_nodes()
            .into_iter()
            .filter(|n| nodes.contains(n))
        {
            entries.push(CandidateSet::entry(schema, &n).expect("candidate node"));
        }
    }
    Ok(CandidateSet { entries })
}

/// `−ln(P(gold) + ε)`.
pub fn loss(
    dist: &ActionDistribution,
    vocab: &ActionVocabulary,
    gold: &ActionId,
) -> Result<f64, ModelError> {
    let i = vocab
        .index(gold)
        .ok_or_else(|| ModelError::UnknownAction(gold.clone()))?;
    Ok(-(dist.probs[i] + LOSS_EPS).ln())
}

/// Every action the model of `kind` should know after training on
/// `examples` with `schemas`, in name order.
pub fn training_actions(
    kind: ModelKind,
    examples: &[Example],
    schemas: &SchemaRegistry,
) -> ActionVocabulary {
    let mut set: BTreeSet<ActionId> = examples.iter().map(|e| e.gold_action.clone()).collect();
    if let ModelKind::Sam(_) = kind {
        let tasks: BTreeSet<&str> = examples.iter().map(|e| e.task.as_str()).collect();
        for t in tasks {
            if let Some(s) = schemas.get(t) {
                set.extend(s.actions());
            }
        }
    }
    ActionVocabulary::new(set)
}

/// Where the per-epoch RNG stream stands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    pub seed: u64,
    pub epoch: usize,
    /// Batches of this epoch already consumed.
    pub step: usize,
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    pub rng: RngPosition,
    /// Batch losses of the current, unfinished epoch.
    pub epoch_losses: Vec<f64>,
    pub history: Vec<EpochMetrics>,
    pub best: Option<BestSoFar>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(
            &tmp,
            serde_json::to_string(self).expect("checkpoint serializes"),
        )?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        let c: Self = serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))?;
        c.bundle.model.check()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub epoch: usize,
    pub accuracy: f64,
    pub bundle: ModelBundle,
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best epoch on the held-out set, or the last epoch without one.
    pub best: ModelBundle,
    pub best_epoch: usize,
    pub last: Model,
    pub metrics: Vec<EpochMetrics>,
    /// Examples left out of training (SAM variants skip empty contexts).
    pub skipped_examples: usize,
}

/// A training run in progress.
pub struct Trainer<'d> {
    config: TrainConfig,
    model: Model,
    optimizer: OptimizerState,
    rng: RngPosition,
    examples: Vec<&'d Example>,
    schemas: &'d SchemaRegistry,
    views: SchemaRegistry,
    heldout: Option<&'d [Example]>,
    plan: Vec<Batch>,
    epoch_losses: Vec<f64>,
    history: Vec<EpochMetrics>,
    best: Option<BestSoFar>,
    run_dir: Option<PathBuf>,
    skipped: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Mean batch loss and its gradient for every tensor of `model`, in
/// [`Model::tensors`] order. Tensors the batch does not touch get `None`.
pub fn loss_and_gradients(
    model: &Model,
    examples: &[&Example],
    schemas: &SchemaRegistry,
    mode: CandidateMode,
) -> Result<(f64, Vec<Option<Matrix>>), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let mut views = SchemaRegistry::new();
    for t in examples
        .iter()
        .map(|e| e.task.as_str())
        .collect::<BTreeSet<_>>()
    {
        let s = schemas
            .get(t)
            .ok_or_else(|| TrainError::UnknownTask(t.to_string()))?;
        views.insert(model.schema_view(s));
    }
    gradients_on_views(model, examples, &views, mode)
}

fn gradients_on_views(
    model: &Model,
    exs: &[&Example],
    views: &SchemaRegistry,
    mode: CandidateMode,
) -> Result<(f64, Vec<Option<Matrix>>), TrainError> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let n_actions = model.actions.len();
    let (cands, groups) = match model.kind {
        ModelKind::Baseline => (Vec::new(), Vec::new()),
        ModelKind::Sam(_) => {
            let set = build_candidates(exs, views, mode)?;
            let mut cands = Vec::with_capacity(set.len());
            let mut groups = Vec::with_capacity(set.len());
            for c in &set.entries {
                cands.push(model.encode_on_tape(&mut tape, &vars, &model.node_tokens(&c.text)));
                groups.push(
                    model
                        .actions
                        .index(&c.action)
                        .ok_or_else(|| ModelError::UnknownAction(c.action.clone()))?,
                );
            }
            (cands, groups)
        }
    };
    let mut losses = Vec::with_capacity(exs.len());
    for ex in exs {
        let tokens = model.context_tokens(&ex.context);
        let ctx = (!tokens.is_empty()).then(|| model.encode_on_tape(&mut tape, &vars, &tokens));
        let p = model.distribution_on_tape(&mut tape, &vars, ctx, &cands, &groups, n_actions)?;
        let gold = model
            .actions
            .index(&ex.gold_action)
            .ok_or_else(|| ModelError::UnknownAction(ex.gold_action.clone()))?;
        losses.push(tape.nll(p, gold, LOSS_EPS));
    }
    let total = tape.mean_scalars(&losses);
    let value = tape.value(total).get(0, 0);
    let mut grads = vec![None; model.tensor_count()];
    for (k, g) in tape.backward(total).into_params() {
        grads[k] = Some(g);
    }
    Ok((value, grads))
}

impl<'d> Trainer<'d> {
    /// Fresh model initialized from `config.seed`; the vocabulary comes from
    /// the training dialogs and their schemas.
    pub fn new(
        config: TrainConfig,
        train: &'d [Example],
        schemas: &'d SchemaRegistry,
        heldout: Option<&'d [Example]>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::NoExamples);
        }
        let tasks: BTreeSet<&str> = train.iter().map(|e| e.task.as_str()).collect();
        let mut texts: Vec<String> = train.iter().map(|e| e.context.serialize()).collect();
        for t in &tasks {
            let s = schemas
                .get(t)
                .ok_or_else(|| TrainError::UnknownTask(t.to_string()))?;
            texts.extend(
                s.graph()
                    .nodes
                    .iter()
                    .map(|n| format!("{} {}", n.kind.tag(), n.text)),
            );
        }
        let vocab = build_vocab(
            texts.iter().map(String::as_str),
            config.model_config.encoder.max_vocab,
        );
        let actions = training_actions(config.model, train, schemas);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::init(
            config.model,
            config.model_config.clone(),
            vocab,
            actions,
            &mut rng,
        );
        Self::with_model(config, model, train, schemas, heldout)
    }

    /// Continues from `model` with fresh optimizer state.
    pub fn with_model(
        config: TrainConfig,
        model: Model,
        train: &'d [Example],
        schemas: &'d SchemaRegistry,
        heldout: Option<&'d [Example]>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if model.kind != config.model {
            return Err(TrainError::Config(format!(
                "model is `{}`, config says `{}`",
                model.kind, config.model
            )));
        }
        model.check()?;
        let is_sam = matches!(model.kind, ModelKind::Sam(_));
        let examples: Vec<&Example> = train
            .iter()
            .filter(|e| !(is_sam && e.context.is_empty()))
            .collect();
        if examples.is_empty() {
            return Err(TrainError::NoExamples);
        }
        let mut views = SchemaRegistry::new();
        for t in examples
            .iter()
            .map(|e| e.task.as_str())
            .collect::<BTreeSet<_>>()
        {
            let s = schemas
                .get(t)
                .ok_or_else(|| TrainError::UnknownTask(t.to_string()))?;
            views.insert(model.schema_view(s));
        }
        if is_sam {
            for e in &examples {
                if views
                    .get(&e.task)
                    .expect("registered")
                    .nodes_for_action(&e.gold_action)
                    .is_empty()
                {
                    return Err(TrainError::GoldNodeMissing {
                        task: e.task.clone(),
                        action: e.gold_action.clone(),
                    });
                }
            }
        }
        let optimizer = OptimizerState::new(&model.tensors());
        let skipped = train.len() - examples.len();
        let mut t = Self {
            rng: RngPosition {
                seed: config.seed,
                epoch: 0,
                step: 0,
            },
            config,
            model,
            optimizer,
            examples,
            schemas,
            views,
            heldout,
            plan: Vec::new(),
            epoch_losses: Vec::new(),
            history: Vec::new(),
            best: None,
            run_dir: None,
            skipped,
        };
        t.plan = t.plan_epoch(0);
        Ok(t)
    }

    /// Restores a run saved by [`Trainer::checkpoint`]. The data must be the
    /// same as when it was saved.
    pub fn resume(
        ckpt: Checkpoint,
        train: &'d [Example],
        schemas: &'d SchemaRegistry,
        heldout: Option<&'d [Example]>,
    ) -> Result<Self, TrainError> {
        let Checkpoint {
            bundle,
            config,
            optimizer,
            rng,
            epoch_losses,
            history,
            best,
        } = ckpt;
        let mut t = Self::with_model(config, bundle.model, train, schemas, heldout)?;
        if !optimizer.matches(&t.model.tensors()) {
            return Err(TrainError::CheckpointMismatch(
                "optimizer state shapes differ from the model".into(),
            ));
        }
        t.optimizer = optimizer;
        t.history = history;
        t.best = best;
        t.rng = rng;
        t.epoch_losses = epoch_losses;
        t.plan = t.plan_epoch(rng.epoch);
        if rng.step > t.plan.len() {
            return Err(TrainError::CheckpointMismatch(format!(
                "step {} beyond epoch length {}",
                rng.step,
                t.plan.len()
            )));
        }
        Ok(t)
    }

    /// Writes `metrics.jsonl`, `epoch_{k}.ckpt` and `best.ckpt` under `dir`.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn position(&self) -> RngPosition {
        self.rng
    }

    pub fn is_finished(&self) -> bool {
        self.rng.epoch >= self.config.epochs
    }

    fn plan_epoch(&self, epoch: usize) -> Vec<Batch> {
        let mut rng = epoch_rng(self.config.seed, epoch);
        if self.config.same_task() {
            let tasks: Vec<&str> = self.examples.iter().map(|e| e.task.as_str()).collect();
            sample_batches_same_task(&tasks, self.config.batch_size, &mut rng)
        } else {
            sample_batches_random(self.examples.len(), self.config.batch_size, &mut rng)
        }
    }

    fn bundle(&self) -> ModelBundle {
        ModelBundle::new(
            self.model.clone(),
            self.views.tasks().filter_map(|t| self.schemas.get(t)),
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            bundle: self.bundle(),
            config: self.config.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng,
            epoch_losses: self.epoch_losses.clone(),
            history: self.history.clone(),
            best: self.best.clone(),
        }
    }

    /// Mean loss of one batch and its gradients, keyed like
    /// [`Model::tensors`].
    fn batch_gradients(&self, batch: &Batch) -> Result<(f64, Vec<Option<Matrix>>), TrainError> {
        let exs: Vec<&Example> = batch.examples.iter().map(|&i| self.examples[i]).collect();
        gradients_on_views(&self.model, &exs, &self.views, self.config.candidate_mode)
    }

    /// Runs the next batch; finishes the epoch (metrics, checkpoints) when it
    /// was the last one. Returns the batch loss, or `None` once done.
    pub fn step(&mut self) -> Result<Option<f64>, TrainError> {
        if self.is_finished() {
            return Ok(None);
        }
        let batch = self.plan[self.rng.step].clone();
        let (value, grads) = self.batch_gradients(&batch)?;
        if !value.is_finite() {
            return Err(TrainError::Divergence {
                epoch: self.rng.epoch,
                step: self.rng.step,
                loss: value,
                grad_norm: global_norm(&grads),
            });
        }
        let lr = self.config.learning_rate;
        optim::step(
            &self.config.optimizer,
            lr,
            &mut self.optimizer,
            &mut self.model.tensors_mut(),
            grads,
        );
        self.epoch_losses.push(value);
        self.rng.step += 1;
        if self.rng.step == self.plan.len() {
            self.end_epoch()?;
        }
        Ok(Some(value))
    }

    fn end_epoch(&mut self) -> Result<(), TrainError> {
        let epoch = self.rng.epoch;
        let mean = self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len().max(1) as f64;
        self.epoch_losses.clear();
        let mut lines = vec![EpochMetrics {
            epoch,
            split: "train".into(),
            loss: mean,
            accuracy: None,
            f1: None,
        }];
        let mut improved = false;
        if let Some(held) = self.heldout.filter(|h| !h.is_empty()) {
            let ev = evaluate(&self.model, held, self.schemas)?;
            lines.push(EpochMetrics {
                epoch,
                split: "heldout".into(),
                loss: ev.mean_loss,
                accuracy: Some(ev.report.accuracy),
                f1: Some(ev.report.weighted_f1),
            });
            improved = self
                .best
                .as_ref()
                .is_none_or(|b| ev.report.accuracy > b.accuracy);
            if improved {
                self.best = Some(BestSoFar {
                    epoch,
                    accuracy: ev.report.accuracy,
                    bundle: self.bundle(),
                });
            }
        }
        self.rng = RngPosition {
            seed: self.config.seed,
            epoch: epoch + 1,
            step: 0,
        };
        if !self.is_finished() {
            self.plan = self.plan_epoch(epoch + 1);
        }
        if let Some(dir) = &self.run_dir {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("metrics.jsonl"))?;
            for l in &lines {
                writeln!(
                    f,
                    "{}",
                    serde_json::to_string(l).expect("metrics serialize")
                )?;
            }
            self.checkpoint()
                .save(dir.join(format!("epoch_{epoch}.ckpt")))?;
            if improved || self.heldout.is_none() {
                self.best_bundle().save(dir.join("best.ckpt"))?;
            }
        }
        self.history.extend(lines);
        Ok(())
    }

    fn best_bundle(&self) -> ModelBundle {
        match &self.best {
            Some(b) => b.bundle.clone(),
            None => self.bundle(),
        }
    }

    /// Trains to the configured number of epochs.
    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        while self.step()?.is_some() {}
        let best_epoch = self
            .best
            .as_ref()
            .map_or(self.config.epochs - 1, |b| b.epoch);
        Ok(TrainOutcome {
            best: self.best_bundle(),
            best_epoch,
            last: self.model,
            metrics: self.history,
            skipped_examples: self.skipped,
        })
    }
}

/// Trains a fresh model; see [`Trainer`].
pub fn train(
    config: TrainConfig,
    train: &[Example],
    schemas: &SchemaRegistry,
    heldout: Option<&[Example]>,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(config, train, schemas, heldout)?;
    if let Some(d) = run_dir {
        t = t.with_run_dir(d);
    }
    t.run()
}

#[cfg(test)]
mod tests;
