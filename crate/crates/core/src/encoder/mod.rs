//! Text to vectors: tokenization, vocabularies and the encoder contract.

mod hashed;
mod tokenize;
mod transformer;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Matrix;

pub use hashed::{hashed_encode, HashedEncoder};
pub use tokenize::{pre_tokenize, tokenize_with, Token, TokenSeq, Tokenizer};
pub use transformer::{EncoderConfig, EncoderParams, EncoderVars, GradientBundle, LayerParams};
pub use vocab::{build_vocab, Vocab};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sequence of {len} tokens exceeds the {max} supported positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("encoder tensor `{0}` has non-finite entries")]
    NonFinite(String),
}

/// Per-token vectors plus their masked mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub matrix: Matrix,
    pub pooled: Vec<f64>,
    /// True for real tokens, false for padding.
    pub mask: Vec<bool>,
}

impl EncodedSequence {
    /// Builds the sequence and its pooled vector from rows and a mask.
    pub fn from_rows(matrix: Matrix, mask: Vec<bool>) -> Self {
        assert_eq!(matrix.rows(), mask.len());
        let d = matrix.cols();
        let mut pooled = vec![0.0; d];
        let n = mask.iter().filter(|m| **m).count();
        if n > 0 {
            for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                for (p, v) in pooled.iter_mut().zip(matrix.row(r)) {
                    *p += v;
                }
            }
            pooled.iter_mut().for_each(|p| *p /= n as f64);
        }
        Self {
            matrix,
            pooled,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// Anything that maps a token sequence to an [`EncodedSequence`].
pub trait Encoder {
    fn dim(&self) -> usize;
    fn encode(&self, seq: &TokenSeq) -> Result<EncodedSequence, EncoderError>;
}
