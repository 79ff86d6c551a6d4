use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate, significance, EvalError, PairwiseTest};
use crate::corpus::{
    split_leave_one_domain, split_leave_one_task, split_standard, Corpus, Split, SplitKind,
};
use crate::model::ModelKind;
use crate::schema::{ActionId, SchemaRegistry};
use crate::train::{TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Standard,
    TaskTransfer,
    DomainTransfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Tasks or domains to hold out; every one when empty. Ignored for the
    /// standard setting.
    #[serde(default)]
    pub holdouts: Vec<String>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    /// Template for every run; `model` and `seed` are overwritten per run.
    pub train: TrainConfig,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_fraction() -> f64 {
    0.8
}

impl ExperimentSpec {
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// Checks that the training side never saw the holdout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hygiene {
    pub train_dialogs: usize,
    pub test_dialogs: usize,
    pub shared_dialogs: usize,
    pub train_examples_from_holdout: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ModelKind,
    pub seed: u64,
    pub holdout: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// Support-weighted F1 over gold actions the model never trained on.
    pub unseen_action_f1: Option<f64>,
    pub unseen_action_support: usize,
    /// Predictions naming an action the model never trained on.
    pub unseen_action_predictions: usize,
    pub max_mass_outside_schema: f64,
    pub hygiene: Hygiene,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// One model's aggregate: per seed, the support-weighted mean over holdouts;
/// then mean and sample standard deviation across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: ModelKind,
    pub per_seed: Vec<SeedScore>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
    pub std_accuracy: f64,
    pub std_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub spec_fingerprint: String,
    pub aggregation: String,
    pub significance_method: String,
    pub runs: Vec<RunResult>,
    pub rows: Vec<ModelRow>,
    pub significance: Vec<PairwiseTest>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn row(&self, model: ModelKind) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Aligned text table, one line per model.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.to_string().len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}",
            "model", "acc", "f1", "f1 sd"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.2}  {:>8.2}  {:>8.2}",
                r.model.to_string(),
                100.0 * r.mean_accuracy,
                100.0 * r.mean_f1,
                100.0 * r.std_f1
            );
        }
        out
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = if x.len() < 2 {
        0.0
    } else {
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (m, sd)
}

fn splits(spec: &ExperimentSpec, corpus: &Corpus) -> Result<Vec<Split>, EvalError> {
    let holdouts = |all: BTreeSet<&str>| -> Vec<String> {
        if spec.holdouts.is_empty() {
            all.into_iter().map(str::to_string).collect()
        } else {
            spec.holdouts.clone()
        }
    };
    Ok(match spec.kind {
        ExperimentKind::Standard => vec![split_standard(
            corpus,
            spec.train_fraction,
            spec.split_seed,
        )?],
        ExperimentKind::TaskTransfer => holdouts(corpus.tasks())
            .iter()
            .map(|h| split_leave_one_task(corpus, h))
            .collect::<Result<_, _>>()?,
        ExperimentKind::DomainTransfer => holdouts(corpus.domains())
            .iter()
            .map(|h| split_leave_one_domain(corpus, h))
            .collect::<Result<_, _>>()?,
    })
}

fn hygiene(split: &Split) -> Result<Hygiene, EvalError> {
    let train = split.train_dialogs();
    let test = split.test_dialogs();
    let shared = train.intersection(&test).count();
    let from_holdout = match (&split.holdout, split.kind) {
        (Some(h), SplitKind::LeaveOneTask) => split.train.iter().filter(|e| &e.task == h).count(),
        (Some(h), SplitKind::LeaveOneDomain) => {
            split.train.iter().filter(|e| &e.domain == h).count()
        }
        _ => 0,
    };
    let h = Hygiene {
        train_dialogs: train.len(),
        test_dialogs: test.len(),
        shared_dialogs: shared,
        train_examples_from_holdout: from_holdout,
    };
    if shared > 0 || from_holdout > 0 {
        return Err(EvalError::Hygiene {
            holdout: split.holdout.clone().unwrap_or_default(),
            message: format!(
                "{shared} shared dialog(s), {from_holdout} training example(s) from the holdout"
            ),
        });
    }
    Ok(h)
}

fn run_one(
    spec: &ExperimentSpec,
    split: &Split,
    model: ModelKind,
    seed: u64,
    registry: &SchemaRegistry,
) -> Result<RunResult, EvalError> {
    let hygiene = hygiene(split)?;
    let config = TrainConfig {
        model,
        seed,
        ..spec.train.clone()
    };
    let outcome = Trainer::new(config, &split.train, registry, None)?.run()?;
    let trained = &outcome.best.model;
    let ev = evaluate(trained, &split.test, registry)?;
    let unseen = |a: &ActionId| !trained.actions.contains(a);
    let unseen_classes: Vec<_> = ev
        .report
        .per_class
        .iter()
        .filter(|c| unseen(&c.action))
        .collect();
    let unseen_support: usize = unseen_classes.iter().map(|c| c.support).sum();
    let unseen_action_f1 = (unseen_support > 0).then(|| {
        unseen_classes
            .iter()
            .map(|c| c.support as f64 * c.f1)
            .sum::<f64>()
            / unseen_support as f64
    });
    Ok(RunResult {
        model,
        seed,
        holdout: split.holdout.clone(),
        n_train: split.train.len(),
        n_test: split.test.len(),
        accuracy: ev.report.accuracy,
        weighted_f1: ev.report.weighted_f1,
        unseen_action_f1,
        unseen_action_support: unseen_support,
        unseen_action_predictions: ev.predictions.iter().filter(|p| unseen(p)).count(),
        max_mass_outside_schema: ev.max_mass_outside_schema,
        hygiene,
    })
}

fn assemble(spec: &ExperimentSpec, runs: Vec<RunResult>) -> Result<ExperimentReport, EvalError> {
    let mut rows = Vec::new();
    for &model in &spec.models {
        let mut per_seed = Vec::new();
        for &seed in &spec.seeds {
            let rs: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.model == model && r.seed == seed)
                .collect();
            let n: usize = rs.iter().map(|r| r.n_test).sum();
            if n == 0 {
                continue;
            }
            let w = |f: fn(&RunResult) -> f64| {
                rs.iter().map(|r| r.n_test as f64 * f(r)).sum::<f64>() / n as f64
            };
            per_seed.push(SeedScore {
                seed,
                accuracy: w(|r| r.accuracy),
                weighted_f1: w(|r| r.weighted_f1),
            });
        }
        if per_seed.is_empty() {
            continue;
        }
        let (mean_accuracy, std_accuracy) =
            mean_sd(&per_seed.iter().map(|s| s.accuracy).collect::<Vec<_>>());
        let (mean_f1, std_f1) =
            mean_sd(&per_seed.iter().map(|s| s.weighted_f1).collect::<Vec<_>>());
        rows.push(ModelRow {
            model,
            per_seed,
            mean_accuracy,
            mean_f1,
            std_accuracy,
            std_f1,
        });
    }
    let significance = if spec.seeds.len() >= 2 && rows.iter().all(|r| r.per_seed.len() >= 2) {
        let series: Vec<(String, Vec<f64>)> = rows
            .iter()
            .map(|r| {
                (
                    r.model.to_string(),
                    r.per_seed.iter().map(|s| s.weighted_f1).collect(),
                )
            })
            .collect();
        significance(&series, "weighted_f1")?
    } else {
        Vec::new()
    };
    Ok(ExperimentReport {
        kind: spec.kind,
        spec_fingerprint: spec.fingerprint(),
        aggregation: "support-weighted mean over holdouts, then mean over seeds".into(),
        significance_method: "Welch two-sample t-test on per-seed aggregate weighted F1".into(),
        runs,
        rows,
        significance,
    })
}

/// Trains and evaluates every (holdout, model, seed) combination.
pub fn run_experiment(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    registry: &SchemaRegistry,
) -> Result<ExperimentReport, EvalError> {
    run_experiment_with(spec, corpus, registry, |_| {})
}

/// As [`run_experiment`], calling `on_run` after each finished run.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    registry: &SchemaRegistry,
    mut on_run: impl FnMut(&RunResult),
) -> Result<ExperimentReport, EvalError> {
    if spec.models.is_empty() || spec.seeds.is_empty() {
        return Err(EvalError::Config(
            "need at least one model and one seed".into(),
        ));
    }
    for t in corpus.tasks() {
        if registry.get(t).is_none() {
            return Err(EvalError::UnknownTask(t.to_string()));
        }
    }
    let splits = splits(spec, corpus)?;
    let mut runs = Vec::new();
    for split in &splits {
        for &model in &spec.models {
            for &seed in &spec.seeds {
                match run_one(spec, split, model, seed, registry) {
                    Ok(r) => {
                        on_run(&r);
                        runs.push(r);
                    }
                    Err(e) => {
                        let holdout = split.holdout.clone().unwrap_or_else(|| "standard".into());
                        let partial = assemble(spec, runs)?;
                        return Err(EvalError::HoldoutFailed {
                            holdout,
                            message: format!("{model} seed {seed}: {e}"),
                            partial: Box::new(partial),
                        });
                    }
                }
            }
        }
    }
    assemble(spec, runs)
}
