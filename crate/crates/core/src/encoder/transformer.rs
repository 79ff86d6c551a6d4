use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EncodedSequence, Encoder, EncoderError, TokenSeq, Tokenizer, Vocab};
use crate::tensor::{Matrix, Tape, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub max_vocab: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_positions: 256,
            max_vocab: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

const LAYER_TENSORS: usize = 16;

impl LayerParams {
    fn tensors(&self) -> [&Matrix; LAYER_TENSORS] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; LAYER_TENSORS] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

const LAYER_NAMES: [&str; LAYER_TENSORS] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2",
    "ln2_gain", "ln2_bias",
];

/// Weights of the trainable encoder: token and position embeddings, an
/// embedding layer norm, then post-norm transformer blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    /// `(|vocab| + 1) × d`; the last row embeds unknown tokens.
    pub token_embedding: Matrix,
    /// `max_positions × d`, indexed by distance from the last real token.
    pub position_embedding: Matrix,
    pub ln_gain: Matrix,
    pub ln_bias: Matrix,
    pub layers: Vec<LayerParams>,
}

/// Tape handles for one registration of [`EncoderParams`].
#[derive(Clone, Debug)]
pub struct EncoderVars {
    token_embedding: Var,
    position_embedding: Var,
    ln_gain: Var,
    ln_bias: Var,
    layers: Vec<[Var; LAYER_TENSORS]>,
}

/// Gradients shaped like [`EncoderParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub tensors: Vec<Matrix>,
}

impl GradientBundle {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            tensors: params
                .tensors()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("positive std");
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    )
}

impl EncoderParams {
    /// Random initialization. Residual output projections start small so a
    /// fresh encoder stays close to its (normalized) embeddings.
    pub fn init(config: EncoderConfig, vocab: Vocab, rng: &mut impl Rng) -> Self {
        let d = config.dim;
        let f = config.ffn_dim;
        assert!(
            d > 0 && config.heads > 0 && d.is_multiple_of(config.heads),
            "dim must split evenly across heads"
        );
        let proj = (d as f64).powf(-0.5);
        let ones = || Matrix::filled(1, d, 1.0);
        let zeros = |n| Matrix::zeros(1, n);
        let token_embedding = normal(rng, vocab.len() + 1, d, 1.0);
        let position_embedding = normal(rng, config.max_positions, d, 0.1);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                wq: normal(rng, d, d, proj),
                bq: zeros(d),
                wk: normal(rng, d, d, proj),
                bk: zeros(d),
                wv: normal(rng, d, d, proj),
                bv: zeros(d),
                wo: normal(rng, d, d, 0.02),
                bo: zeros(d),
                ln1_gain: ones(),
                ln1_bias: zeros(d),
                w1: normal(rng, d, f, proj),
                b1: zeros(f),
                w2: normal(rng, f, d, 0.02),
                b2: zeros(d),
                ln2_gain: ones(),
                ln2_bias: zeros(d),
            })
            .collect();
        Self {
            config,
            vocab,
            token_embedding,
            position_embedding,
            ln_gain: ones(),
            ln_bias: zeros(d),
            layers,
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn tensor_count(&self) -> usize {
        4 + LAYER_TENSORS * self.layers.len()
    }

    /// Every trainable tensor in a fixed order shared with
    /// [`tensors_mut`](Self::tensors_mut), [`tensor_names`](Self::tensor_names)
    /// and [`GradientBundle`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![
            &self.token_embedding,
            &self.position_embedding,
            &self.ln_gain,
            &self.ln_bias,
        ];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.token_embedding,
            &mut self.position_embedding,
            &mut self.ln_gain,
            &mut self.ln_bias,
        ];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = [
            "token_embedding",
            "position_embedding",
            "ln_gain",
            "ln_bias",
        ]
        .map(String::from)
        .into();
        for i in 0..self.layers.len() {
            out.extend(LAYER_NAMES.iter().map(|n| format!("layer{i}.{n}")));
        }
        out
    }

    /// Shapes implied by the config and vocabulary, in tensor order.
    pub fn expected_shapes(&self) -> Vec<(usize, usize)> {
        let EncoderConfig {
            dim: d,
            ffn_dim: f,
            max_positions: p,
            ..
        } = self.config;
        let mut out = vec![(self.vocab.len() + 1, d), (p, d), (1, d), (1, d)];
        for _ in 0..self.config.layers {
            out.extend([
                (d, d),
                (1, d),
                (d, d),
                (1, d),
                (d, d),
                (1, d),
                (d, d),
                (1, d),
                (1, d),
                (1, d),
                (d, f),
                (1, f),
                (f, d),
                (1, d),
                (1, d),
                (1, d),
            ]);
        }
        out
    }

    /// Rejects parameters whose tensors disagree with their own config, e.g.
    /// a checkpoint edited by hand or written by a different build.
    pub fn check_shapes(&self) -> Result<(), EncoderError> {
        if self.layers.len() != self.config.layers {
            return Err(EncoderError::ShapeMismatch {
                expected: (self.config.layers, LAYER_TENSORS),
                found: (self.layers.len(), LAYER_TENSORS),
            });
        }
        for ((m, expected), name) in self
            .tensors()
            .into_iter()
            .zip(self.expected_shapes())
            .zip(self.tensor_names())
        {
            if m.shape() != expected {
                return Err(EncoderError::ShapeMismatch {
                    expected,
                    found: m.shape(),
                });
            }
            if !m.is_finite() {
                return Err(EncoderError::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.vocab.clone())
    }

    pub fn token_ids(&self, seq: &TokenSeq) -> Vec<usize> {
        seq.tokens
            .iter()
            .map(|t| self.vocab.id_or_unk(&t.text))
            .collect()
    }

    /// Puts every tensor on `tape` as a parameter leaf with keys
    /// `key_offset..key_offset + tensor_count()`.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, key_offset: usize) -> EncoderVars {
        let mut key = key_offset;
        let mut leaf = |tape: &mut Tape<'a>, m: &'a Matrix| {
            key += 1;
            tape.param(key - 1, m)
        };
        let token_embedding = leaf(tape, &self.token_embedding);
        let position_embedding = leaf(tape, &self.position_embedding);
        let ln_gain = leaf(tape, &self.ln_gain);
        let ln_bias = leaf(tape, &self.ln_bias);
        let layers = self
            .layers
            .iter()
            .map(|l| l.tensors().map(|m| leaf(tape, m)))
            .collect();
        EncoderVars {
            token_embedding,
            position_embedding,
            ln_gain,
            ln_bias,
            layers,
        }
    }

    /// Records the forward pass of `ids` on `tape`. The first `n_real` ids
    /// are real tokens and the rest padding; padding is invisible to the
    /// real rows and comes out as zero rows.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        vars: &EncoderVars,
        ids: &[usize],
        n_real: usize,
    ) -> Var {
        let n = ids.len();
        let mask: Vec<bool> = (0..n).map(|i| i < n_real).collect();
        let positions: Vec<usize> = (0..n)
            .map(|i| if i < n_real { n_real - 1 - i } else { 0 })
            .collect();
        let tok = tape.gather(vars.token_embedding, ids);
        let pos = tape.gather(vars.position_embedding, &positions);
        let x = tape.add(tok, pos);
        let mut x = tape.layer_norm(x, vars.ln_gain, vars.ln_bias, LN_EPS);
        let heads = self.config.heads;
        let dh = self.config.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for lv in &vars.layers {
            let [wq, bq, wk, bk, wv, bv, wo, bo, g1, b1n, w1, b1, w2, b2, g2, b2n] = *lv;
            let q = tape.matmul(x, wq);
            let q = tape.add_row(q, bq);
            let k = tape.matmul(x, wk);
            let k = tape.add_row(k, bk);
            let v = tape.matmul(x, wv);
            let v = tape.add_row(v, bv);
            let mut ctx = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let s = tape.matmul_t(qh, kh);
                let s = tape.scale(s, scale);
                let a = tape.softmax_rows(s, Some(&mask));
                ctx.push(tape.matmul(a, vh));
            }
            let ctx = if heads == 1 {
                ctx[0]
            } else {
                tape.concat_cols(&ctx)
            };
            let att = tape.matmul(ctx, wo);
            let att = tape.add_row(att, bo);
            let res = tape.add(x, att);
            let x1 = tape.layer_norm(res, g1, b1n, LN_EPS);
            let hdn = tape.matmul(x1, w1);
            let hdn = tape.add_row(hdn, b1);
            let hdn = tape.gelu(hdn);
            let out = tape.matmul(hdn, w2);
            let out = tape.add_row(out, b2);
            let res = tape.add(x1, out);
            x = tape.layer_norm(res, g2, b2n, LN_EPS);
        }
        if n_real < n {
            x = tape.mask_rows(x, &mask);
        }
        x
    }

    fn check_len(&self, len: usize) -> Result<(), EncoderError> {
        if len > self.config.max_positions {
            return Err(EncoderError::SequenceTooLong {
                len,
                max: self.config.max_positions,
            });
        }
        Ok(())
    }

    /// Encodes `seq` followed by padding up to `padded_len` tokens.
    pub fn encode_padded(
        &self,
        seq: &TokenSeq,
        padded_len: usize,
    ) -> Result<EncodedSequence, EncoderError> {
        self.check_len(seq.len())?;
        let n_real = seq.len();
        let n = padded_len.max(n_real);
        let mask: Vec<bool> = (0..n).map(|i| i < n_real).collect();
        if n_real == 0 {
            return Ok(EncodedSequence::from_rows(
                Matrix::zeros(n, self.dim()),
                mask,
            ));
        }
        let mut ids = self.token_ids(seq);
        ids.resize(n, self.vocab.unk_id());
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, 0);
        let out = self.forward(&mut tape, &vars, &ids, n_real);
        Ok(EncodedSequence::from_rows(tape.value(out).clone(), mask))
    }

    /// Gradient of `Σ upstream ⊙ encode(seq).matrix` with respect to every
    /// parameter tensor.
    pub fn backward(
        &self,
        seq: &TokenSeq,
        upstream: &Matrix,
    ) -> Result<GradientBundle, EncoderError> {
        self.check_len(seq.len())?;
        let expected = (seq.len(), self.dim());
        if upstream.shape() != expected {
            return Err(EncoderError::ShapeMismatch {
                expected,
                found: upstream.shape(),
            });
        }
        let mut bundle = GradientBundle::zeros_like(self);
        if seq.is_empty() {
            return Ok(bundle);
        }
        let ids = self.token_ids(seq);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, 0);
        let out = self.forward(&mut tape, &vars, &ids, ids.len());
        for (key, g) in tape.backward_from(out, upstream.clone()).into_params() {
            bundle.tensors[key] = g;
        }
        Ok(bundle)
    }
}

impl Encoder for EncoderParams {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn encode(&self, seq: &TokenSeq) -> Result<EncodedSequence, EncoderError> {
        self.encode_padded(seq, seq.len())
    }
}
