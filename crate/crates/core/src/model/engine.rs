use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{baseline_forward, mix, sam_forward};
use super::{
    ActionDistribution, ActionVocabulary, BaselineHead, CandidateSet, ModelError, ModelKind,
};
use crate::corpus::DialogContext;
use crate::encoder::{
    tokenize_with, EncodedSequence, Encoder, EncoderConfig, EncoderParams, EncoderVars, TokenSeq,
    Vocab,
};
use crate::schema::{ActionId, NodeId, NodeKind, ValidSchema};
use crate::tensor::{Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Most recent context tokens kept; capped by the encoder's positions.
    pub context_window: usize,
    /// Classifier share when a head is mixed into the schema distribution.
    pub mixture_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            context_window: 128,
            mixture_weight: 0.5,
        }
    }
}

/// A trainable next-action model of either family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub head: Option<BaselineHead>,
    /// Actions seen in training; the head's output order.
    pub actions: ActionVocabulary,
}

/// Tape handles for one registration of a [`Model`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub head: Option<(Var, Var)>,
}

/// A schema made ready for inference: its variant chosen, candidates encoded
/// once, action vocabulary extended.
#[derive(Clone, Debug)]
pub struct PreparedSchema {
    pub schema: ValidSchema,
    pub candidates: CandidateSet,
    pub encodings: Vec<EncodedSequence>,
    pub vocab: ActionVocabulary,
    /// Action of the start node when the dialog opens with the system.
    pub start_action: Option<ActionId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedAction {
    pub action: ActionId,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub node: NodeId,
    pub text: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Every action, most probable first; ties broken by name.
    pub ranked: Vec<RankedAction>,
    /// Up to three most-attended schema nodes.
    pub alignments: Vec<Alignment>,
}

impl Prediction {
    pub fn top(&self) -> &ActionId {
        &self.ranked[0].action
    }
}

fn rank(dist: &ActionDistribution, vocab: &ActionVocabulary) -> Vec<RankedAction> {
    let mut idx: Vec<usize> = (0..dist.probs.len()).collect();
    idx.sort_by(|&a, &b| {
        dist.probs[b]
            .total_cmp(&dist.probs[a])
            .then_with(|| vocab.get(a).cmp(vocab.get(b)))
    });
    idx.into_iter()
        .map(|i| RankedAction {
            action: vocab.get(i).clone(),
            probability: dist.probs[i],
        })
        .collect()
}

impl Model {
    pub fn init(
        kind: ModelKind,
        config: ModelConfig,
        vocab: Vocab,
        actions: ActionVocabulary,
        rng: &mut impl Rng,
    ) -> Self {
        let encoder = EncoderParams::init(config.encoder.clone(), vocab, rng);
        let head = kind.needs_head().then(|| {
            let d = encoder.dim();
            let dist = Normal::new(0.0, 0.02).expect("positive std");
            let w = Matrix::from_vec(
                actions.len(),
                d,
                (0..actions.len() * d).map(|_| dist.sample(rng)).collect(),
            );
            BaselineHead {
                w,
                b: Matrix::zeros(1, actions.len()),
            }
        });
        Self {
            kind,
            config,
            encoder,
            head,
            actions,
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn tensor_count(&self) -> usize {
        self.encoder.tensor_count() + if self.head.is_some() { 2 } else { 0 }
    }

    /// Encoder tensors followed by the head's `w` and `b`; the index of each
    /// is its tape key.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.tensors();
        if let Some(h) = &self.head {
            v.push(&h.w);
            v.push(&h.b);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.tensors_mut();
        if let Some(h) = &mut self.head {
            v.push(&mut h.w);
            v.push(&mut h.b);
        }
        v
    }

    pub fn check(&self) -> Result<(), ModelError> {
        self.encoder.check_shapes()?;
        if self.kind.needs_head() != self.head.is_some() {
            return Err(ModelError::Format(format!(
                "head presence does not match model `{}`",
                self.kind
            )));
        }
        if let Some(h) = &self.head {
            let expected = (self.actions.len(), self.dim());
            if h.w.shape() != expected || h.b.shape() != (1, expected.0) {
                return Err(ModelError::Format(format!(
                    "head shape {:?}, expected {expected:?}",
                    h.w.shape()
                )));
            }
        }
        Ok(())
    }

    fn window(&self) -> usize {
        self.config
            .context_window
            .min(self.config.encoder.max_positions)
    }

    /// Serialized, tokenized context keeping only the most recent tokens.
    pub fn context_tokens(&self, ctx: &DialogContext) -> TokenSeq {
        let mut seq = tokenize_with(&self.encoder.vocab, &ctx.serialize());
        seq.truncate_front(self.window());
        seq
    }

    pub fn node_tokens(&self, text: &str) -> TokenSeq {
        let mut seq = tokenize_with(&self.encoder.vocab, text);
        seq.truncate_front(self.config.encoder.max_positions);
        seq
    }

    /// The schema as this model sees it (system-only when [1] is off).
    pub fn schema_view(&self, schema: &ValidSchema) -> ValidSchema {
        match self.kind.flags() {
            Some(f) if !f.user_aware_schema => schema.to_system_only(),
            _ => schema.clone(),
        }
    }

    pub fn prepare_schema(&self, schema: &ValidSchema) -> Result<PreparedSchema, ModelError> {
        let schema = self.schema_view(schema);
        let candidates = CandidateSet::from_schema(&schema);
        let encodings = match self.kind {
            ModelKind::Baseline => Vec::new(),
            ModelKind::Sam(_) => candidates
                .entries
                .iter()
                .map(|c| self.encoder.encode(&self.node_tokens(&c.text)))
                .collect::<Result<_, _>>()?,
        };
        let vocab = self.actions.extended(&schema.actions());
        let start = schema.start_node();
        let start_action = (start.kind == NodeKind::SystemResponse)
            .then(|| start.action.clone())
            .flatten();
        Ok(PreparedSchema {
            schema,
            candidates,
            encodings,
            vocab,
            start_action,
        })
    }

    fn head_distribution(&self, pooled: &[f64]) -> Result<ActionDistribution, ModelError> {
        baseline_forward(pooled, self.head.as_ref().ok_or(ModelError::MissingHead)?)
    }

    /// Distribution over `prepared.vocab` and, for schema attention, the mass
    /// on each candidate.
    pub fn distribution(
        &self,
        prepared: &PreparedSchema,
        ctx: &DialogContext,
    ) -> Result<(ActionDistribution, Option<Vec<f64>>), ModelError> {
        let tokens = self.context_tokens(ctx);
        let n = prepared.vocab.len();
        let pad = |d: ActionDistribution| {
            let mut probs = d.probs;
            probs.resize(n, 0.0);
            ActionDistribution { probs }
        };
        let flags = match self.kind {
            ModelKind::Baseline => {
                let pooled = if tokens.is_empty() {
                    vec![0.0; self.dim()]
                } else {
                    self.encoder.encode(&tokens)?.pooled
                };
                return Ok((pad(self.head_distribution(&pooled)?), None));
            }
            ModelKind::Sam(f) => f,
        };
        if tokens.is_empty() {
            // Nothing to align yet: the schema's opening system turn.
            let mut probs = vec![0.0; n];
            let start = prepared
                .start_action
                .as_ref()
                .ok_or(ModelError::EmptyContext)?;
            probs[prepared
                .vocab
                .index(start)
                .expect("schema actions are in the vocabulary")] = 1.0;
            let schema = ActionDistribution { probs };
            if flags.no_linear_head {
                return Ok((schema, None));
            }
            let clf = self.head_distribution(&vec![0.0; self.dim()])?;
            return Ok((mix(&schema, &clf, self.config.mixture_weight), None));
        }
        let h = self.encoder.encode(&tokens)?;
        let (dist, mass) = sam_forward(
            &h,
            &prepared.encodings,
            &prepared.candidates.actions(),
            &prepared.vocab,
            flags,
            self.head.as_ref(),
            self.config.mixture_weight,
        )?;
        Ok((dist, Some(mass)))
    }

    pub fn predict(
        &self,
        prepared: &PreparedSchema,
        ctx: &DialogContext,
    ) -> Result<Prediction, ModelError> {
        let (dist, mass) = self.distribution(prepared, ctx)?;
        let mut alignments: Vec<Alignment> = mass
            .map(|m| {
                prepared
                    .candidates
                    .entries
                    .iter()
                    .zip(m)
                    .map(|(c, w)| Alignment {
                        node: c.node.clone(),
                        text: c.text.clone(),
                        weight: w,
                    })
                    .collect()
            })
            .unwrap_or_default();
        // Stable sort keeps document order among equal weights.
        alignments.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        alignments.truncate(3);
        Ok(Prediction {
            ranked: rank(&dist, &prepared.vocab),
            alignments,
        })
    }

    /// Puts every tensor on `tape`, keyed by its index in [`Model::tensors`].
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ModelVars {
        let encoder = self.encoder.register(tape, 0);
        let k = self.encoder.tensor_count();
        let head = self
            .head
            .as_ref()
            .map(|h| (tape.param(k, &h.w), tape.param(k + 1, &h.b)));
        ModelVars { encoder, head }
    }

    /// Records the encoding of `seq` (nonempty) on the tape.
    pub fn encode_on_tape(&self, tape: &mut Tape<'_>, vars: &ModelVars, seq: &TokenSeq) -> Var {
        let ids = self.encoder.token_ids(seq);
        self.encoder.forward(tape, &vars.encoder, &ids, ids.len())
    }

    fn head_on_tape(
        &self,
        tape: &mut Tape<'_>,
        vars: &ModelVars,
        pooled: Var,
        n_actions: usize,
    ) -> Result<Var, ModelError> {
        let (w, b) = vars.head.ok_or(ModelError::MissingHead)?;
        let logits = tape.matmul_t(pooled, w);
        let logits = tape.add_row(logits, b);
        let p = tape.softmax_rows(logits, None);
        let extra =
            n_actions
                .checked_sub(self.actions.len())
                .ok_or(ModelError::DimensionMismatch {
                    expected: self.actions.len(),
                    found: n_actions,
                })?;
        Ok(if extra == 0 {
            p
        } else {
            let zeros = tape.constant(Matrix::zeros(1, extra));
            tape.concat_cols(&[p, zeros])
        })
    }

    /// Differentiable counterpart of [`Model::distribution`] for one context
    /// already encoded on the tape (`ctx`, all rows real; `None` when empty).
    /// `cands` are the candidate encodings and `groups[i]` the vocabulary
    /// index of candidate `i`'s action. Returns a `1 × n_actions` probability
    /// row.
    pub fn distribution_on_tape(
        &self,
        tape: &mut Tape<'_>,
        vars: &ModelVars,
        ctx: Option<Var>,
        cands: &[Var],
        groups: &[usize],
        n_actions: usize,
    ) -> Result<Var, ModelError> {
        let flags = match (self.kind, ctx) {
            (ModelKind::Baseline, None) => {
                let pooled = tape.constant(Matrix::zeros(1, self.dim()));
                return self.head_on_tape(tape, vars, pooled, n_actions);
            }
            (ModelKind::Sam(_), None) => return Err(ModelError::EmptyContext),
            (ModelKind::Baseline, Some(_)) => None,
            (ModelKind::Sam(f), Some(_)) => Some(f),
        };
        let ctx = ctx.expect("handled above");
        let ctx_mask = vec![true; tape.value(ctx).rows()];
        let pooled = tape.masked_mean(ctx, &ctx_mask);
        let Some(flags) = flags else {
            return self.head_on_tape(tape, vars, pooled, n_actions);
        };
        if cands.is_empty() {
            return Err(ModelError::EmptyCandidates);
        }
        let mass = if flags.word_level_attention {
            let masks: Vec<Vec<bool>> = cands
                .iter()
                .map(|c| vec![true; tape.value(*c).rows()])
                .collect();
            tape.joint_attention(ctx, &ctx_mask, cands, &masks)
        } else {
            let pooled_cands: Vec<Var> = cands
                .iter()
                .map(|c| {
                    let m = vec![true; tape.value(*c).rows()];
                    tape.masked_mean(*c, &m)
                })
                .collect();
            let stacked = tape.concat_rows(&pooled_cands);
            let scores = tape.matmul_t(pooled, stacked);
            tape.softmax_rows(scores, None)
        };
        let schema = tape.group_sum(mass, groups, n_actions);
        if flags.no_linear_head {
            return Ok(schema);
        }
        let clf = self.head_on_tape(tape, vars, pooled, n_actions)?;
        let w = self.config.mixture_weight;
        Ok(tape.add_scaled(schema, clf, 1.0 - w, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;
    use crate::encoder::build_vocab;
    use crate::model::AblationFlags;
    use crate::schema::{fixtures, load_schema_str};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank() -> ValidSchema {
        ValidSchema::new(load_schema_str(fixtures::BANK_BALANCE).unwrap()).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                dim: 8,
                layers: 1,
                heads: 2,
                ffn_dim: 16,
                max_positions: 64,
                max_vocab: 200,
            },
            context_window: 40,
            mixture_weight: 0.5,
        }
    }

    fn model(kind: ModelKind, schema: &ValidSchema) -> Model {
        let texts: Vec<String> = schema
            .graph()
            .nodes
            .iter()
            .map(|n| format!("{} {}", n.kind.tag(), n.text))
            .collect();
        let vocab = build_vocab(texts.iter().map(String::as_str), 200);
        let mut actions = schema.actions();
        actions.pop();
        Model::init(
            kind,
            small_config(),
            vocab,
            ActionVocabulary::new(actions),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
    }

    fn context() -> DialogContext {
        DialogContext::new(vec![
            Turn::system("Hello, how can I help?", ActionId::new("hello")),
            Turn::user("I forgot my account number"),
        ])
    }

    #[test]
    fn tape_and_direct_paths_agree() {
        let schema = bank();
        let kinds = ["baseline", "sam", "sam-1", "sam-2", "sam-4", "bert+s"];
        for name in kinds {
            let m = model(name.parse().unwrap(), &schema);
            m.check().unwrap();
            let prepared = m.prepare_schema(&schema).unwrap();
            let (direct, _) = m.distribution(&prepared, &context()).unwrap();
            assert!(direct.is_valid(1e-9), "{name}");

            let mut tape = Tape::new();
            let vars = m.register(&mut tape);
            let ctx = m.encode_on_tape(&mut tape, &vars, &m.context_tokens(&context()));
            let cands: Vec<Var> = prepared
                .candidates
                .entries
                .iter()
                .map(|c| m.encode_on_tape(&mut tape, &vars, &m.node_tokens(&c.text)))
                .collect();
            let groups: Vec<usize> = prepared
                .candidates
                .entries
                .iter()
                .map(|c| prepared.vocab.index(&c.action).unwrap())
                .collect();
            let p = m
                .distribution_on_tape(
                    &mut tape,
                    &vars,
                    Some(ctx),
                    &cands,
                    &groups,
                    prepared.vocab.len(),
                )
                .unwrap();
            for (a, b) in tape.value(p).data().iter().zip(&direct.probs) {
                assert!((a - b).abs() < 1e-12, "{name}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn extended_vocabulary_covers_unseen_actions() {
        let schema = bank();
        let m = model("sam".parse().unwrap(), &schema);
        let prepared = m.prepare_schema(&schema).unwrap();
        assert_eq!(prepared.vocab.len(), m.actions.len() + 1);
        let b = model(ModelKind::Baseline, &schema);
        let (d, mass) = b
            .distribution(&b.prepare_schema(&schema).unwrap(), &context())
            .unwrap();
        assert_eq!(*d.probs.last().unwrap(), 0.0);
        assert!(mass.is_none());
    }

    #[test]
    fn empty_context_opens_with_the_start_action() {
        let schema = bank();
        let m = model("sam".parse().unwrap(), &schema);
        let prepared = m.prepare_schema(&schema).unwrap();
        let pred = m.predict(&prepared, &DialogContext::default()).unwrap();
        assert_eq!(Some(pred.top()), prepared.start_action.as_ref());
        assert_eq!(pred.ranked[0].probability, 1.0);
        assert!(pred.alignments.is_empty());
    }

    #[test]
    fn prediction_is_ranked_with_three_alignments() {
        let schema = bank();
        let m = model("sam".parse().unwrap(), &schema);
        let pred = m
            .predict(&m.prepare_schema(&schema).unwrap(), &context())
            .unwrap();
        assert!(pred
            .ranked
            .windows(2)
            .all(|w| w[0].probability >= w[1].probability));
        assert_eq!(pred.alignments.len(), 3);
        assert!(pred
            .alignments
            .windows(2)
            .all(|w| w[0].weight >= w[1].weight));
    }

    #[test]
    fn system_only_view_follows_flag_one() {
        let schema = bank();
        let m = model(ModelKind::Sam(AblationFlags::without(&[1])), &schema);
        let p = m.prepare_schema(&schema).unwrap();
        assert_eq!(p.schema.variant(), crate::schema::Variant::SystemOnly);
        let m = model("sam".parse().unwrap(), &schema);
        assert_eq!(
            m.prepare_schema(&schema).unwrap().schema.variant(),
            crate::schema::Variant::UserAware
        );
    }
}
