use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dialog_examples, Corpus, CorpusError, Dialog, Example};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Standard,
    LeaveOneTask,
    LeaveOneDomain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub kind: SplitKind,
    pub holdout: Option<String>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Split {
    pub fn train_dialogs(&self) -> BTreeSet<&str> {
        self.train.iter().map(|e| e.dialog_id.as_str()).collect()
    }

    pub fn test_dialogs(&self) -> BTreeSet<&str> {
        self.test.iter().map(|e| e.dialog_id.as_str()).collect()
    }
}

fn examples<'a>(dialogs: impl IntoIterator<Item = &'a Dialog>) -> Vec<Example> {
    dialogs.into_iter().flat_map(dialog_examples).collect()
}

/// Dialog-level random split, stratified by task. Each task contributes
/// `round(fraction · n)` dialogs to training, clamped so that both sides get
/// at least one.
pub fn split_standard(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<Split, CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::Config(format!(
            "train fraction {train_fraction} is outside (0, 1)"
        )));
    }
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in corpus.dialogs.iter().enumerate() {
        by_task.entry(&d.task).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; corpus.len()];
    for (task, mut idx) in by_task {
        if idx.len() < 2 {
            return Err(CorpusError::DegenerateSplit {
                task: task.to_string(),
                dialogs: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n_train =
            ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) =
        corpus.dialogs.iter().zip(&in_train).partition(|(_, t)| **t);
    Ok(Split {
        kind: SplitKind::Standard,
        holdout: None,
        train: examples(train.into_iter().map(|(d, _)| d)),
        test: examples(test.into_iter().map(|(d, _)| d)),
    })
}

fn leave_one_out(
    corpus: &Corpus,
    holdout: &str,
    kind: SplitKind,
    key: impl Fn(&Dialog) -> &str,
) -> Result<Split, CorpusError> {
    let available: BTreeSet<&str> = corpus.dialogs.iter().map(&key).collect();
    if !available.contains(holdout) {
        return Err(CorpusError::UnknownHoldout {
            holdout: holdout.to_string(),
            available: available.into_iter().map(String::from).collect(),
        });
    }
    let (test, train): (Vec<&Dialog>, Vec<&Dialog>) =
        corpus.dialogs.iter().partition(|d| key(d) == holdout);
    Ok(Split {
        kind,
        holdout: Some(holdout.to_string()),
        train: examples(train),
        test: examples(test),
    })
}

/// Tests on every dialog of `task`, trains on all other tasks.
pub fn split_leave_one_task(corpus: &Corpus, task: &str) -> Result<Split, CorpusError> {
    leave_one_out(corpus, task, SplitKind::LeaveOneTask, |d| &d.task)
}

/// Tests on every task of `domain`, trains on all other domains.
pub fn split_leave_one_domain(corpus: &Corpus, domain: &str) -> Result<Split, CorpusError> {
    leave_one_out(corpus, domain, SplitKind::LeaveOneDomain, |d| &d.domain)
}
