use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::ActionId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no examples to score")]
    EmptyInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub action: ActionId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// Classes present in the gold labels, by name.
    pub per_class: Vec<ClassMetrics>,
    pub n: usize,
}

fn check(preds: &[ActionId], golds: &[ActionId]) -> Result<(), MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

pub fn accuracy(preds: &[ActionId], golds: &[ActionId]) -> Result<f64, MetricError> {
    check(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class scores over the gold classes, averaged by gold support. Any
/// zero denominator yields 0.
pub fn weighted_f1(preds: &[ActionId], golds: &[ActionId]) -> Result<MetricReport, MetricError> {
    let acc = accuracy(preds, golds)?;
    #[derive(Default)]
    struct Counts {
        tp: usize,
        predicted: usize,
        support: usize,
    }
    let mut counts: BTreeMap<&ActionId, Counts> = BTreeMap::new();
    for g in golds {
        counts.entry(g).or_default().support += 1;
    }
    for (p, g) in preds.iter().zip(golds) {
        if let Some(c) = counts.get_mut(p) {
            c.predicted += 1;
            if p == g {
                c.tp += 1;
            }
        }
    }
    let n = golds.len();
    let per_class: Vec<ClassMetrics> = counts
        .into_iter()
        .map(|(a, c)| {
            let precision = ratio(c.tp, c.predicted);
            let recall = ratio(c.tp, c.support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                action: a.clone(),
                precision,
                recall,
                f1,
                support: c.support,
            }
        })
        .collect();
    let weighted = per_class
        .iter()
        .map(|c| c.support as f64 / n as f64 * c.f1)
        .sum();
    Ok(MetricReport {
        accuracy: acc,
        weighted_f1: weighted,
        per_class,
        n,
    })
}
