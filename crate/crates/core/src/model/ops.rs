//! Forward computations on already-encoded sequences.

use super::{AblationFlags, ActionDistribution, ActionVocabulary, BaselineHead, ModelError};
use crate::encoder::EncodedSequence;
use crate::schema::ActionId;
use crate::tensor::{dot, joint_block_softmax, softmax, Matrix};

/// Word-level alignment of one context against every candidate node.
#[derive(Clone, Debug)]
pub struct AttentionResult {
    /// `N × M_i` raw dot products per candidate.
    pub scores: Vec<Matrix>,
    /// Weights from one softmax over all unmasked cells of all candidates.
    pub alphas: Vec<Matrix>,
    /// Total weight per candidate; sums to one.
    pub mass: Vec<f64>,
}

fn check_inputs(h: &EncodedSequence, cands: &[EncodedSequence]) -> Result<(), ModelError> {
    if !h.mask.iter().any(|m| *m) {
        return Err(ModelError::EmptyContext);
    }
    if cands.is_empty() {
        return Err(ModelError::EmptyCandidates);
    }
    for c in cands {
        if c.dim() != h.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: h.dim(),
                found: c.dim(),
            });
        }
    }
    Ok(())
}

pub fn schema_attention(
    h: &EncodedSequence,
    cands: &[EncodedSequence],
) -> Result<AttentionResult, ModelError> {
    check_inputs(h, cands)?;
    let blocks: Vec<&Matrix> = cands.iter().map(|c| &c.matrix).collect();
    let masks: Vec<&[bool]> = cands.iter().map(|c| c.mask.as_slice()).collect();
    let j = joint_block_softmax(&h.matrix, &h.mask, &blocks, &masks);
    Ok(AttentionResult {
        scores: j.scores,
        alphas: j.alphas,
        mass: j.mass,
    })
}

/// Pooled-vector attention: one score per candidate, softmax over candidates.
pub fn sentence_attention(
    h: &EncodedSequence,
    cands: &[EncodedSequence],
) -> Result<Vec<f64>, ModelError> {
    check_inputs(h, cands)?;
    let scores: Vec<f64> = cands.iter().map(|c| dot(&h.pooled, &c.pooled)).collect();
    Ok(softmax(&scores))
}

/// Sums candidate mass into the action each candidate's successor emits.
pub fn propagate_to_actions(
    mass: &[f64],
    actions: &[ActionId],
    vocab: &ActionVocabulary,
) -> Result<ActionDistribution, ModelError> {
    if mass.len() != actions.len() {
        return Err(ModelError::DimensionMismatch {
            expected: actions.len(),
            found: mass.len(),
        });
    }
    let mut probs = vec![0.0; vocab.len()];
    for (m, a) in mass.iter().zip(actions) {
        let i = vocab
            .index(a)
            .ok_or_else(|| ModelError::UnknownAction(a.clone()))?;
        probs[i] += m;
    }
    Ok(ActionDistribution { probs })
}

/// `softmax(W · pooled + b)` over the head's actions.
pub fn baseline_forward(
    pooled: &[f64],
    head: &BaselineHead,
) -> Result<ActionDistribution, ModelError> {
    if pooled.len() != head.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: head.dim(),
            found: pooled.len(),
        });
    }
    let logits: Vec<f64> = (0..head.actions())
        .map(|a| dot(head.w.row(a), pooled) + head.b.get(0, a))
        .collect();
    Ok(ActionDistribution {
        probs: softmax(&logits),
    })
}

/// `(1 − weight) · schema + weight · clf`, where `clf` covers a prefix of the
/// schema's vocabulary and is zero beyond it.
pub fn mix(
    schema: &ActionDistribution,
    clf: &ActionDistribution,
    weight: f64,
) -> ActionDistribution {
    assert!(clf.probs.len() <= schema.probs.len());
    let probs = schema
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| (1.0 - weight) * p + weight * clf.probs.get(i).copied().unwrap_or(0.0))
        .collect();
    ActionDistribution { probs }
}

/// Schema-guided next-action distribution and the per-candidate mass behind
/// it. Flags [1] and [3] act upstream (schema variant, batch sampling) and
/// are ignored here.
pub fn sam_forward(
    h: &EncodedSequence,
    cands: &[EncodedSequence],
    actions: &[ActionId],
    vocab: &ActionVocabulary,
    flags: AblationFlags,
    head: Option<&BaselineHead>,
    mixture_weight: f64,
) -> Result<(ActionDistribution, Vec<f64>), ModelError> {
    let mass = if flags.word_level_attention {
        schema_attention(h, cands)?.mass
    } else {
        sentence_attention(h, cands)?
    };
    let schema = propagate_to_actions(&mass, actions, vocab)?;
    if flags.no_linear_head {
        return Ok((schema, mass));
    }
    let head = head.ok_or(ModelError::MissingHead)?;
    let clf = baseline_forward(&h.pooled, head)?;
    Ok((mix(&schema, &clf, mixture_weight), mass))
}
