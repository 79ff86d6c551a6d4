use sha2::{Digest, Sha256};

use super::{EncodedSequence, Encoder, EncoderError, TokenSeq};
use crate::tensor::Matrix;

/// Parameter-free encoder: every token maps to a fixed pseudo-random vector
/// derived from `(seed, token)`. Used where tests need an encoder with no
/// training state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashedEncoder {
    pub seed: u64,
    pub dim: usize,
}

impl HashedEncoder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        let mut block = 0u32;
        while out.len() < self.dim {
            let digest = Sha256::new()
                .chain_update(self.seed.to_le_bytes())
                .chain_update(block.to_le_bytes())
                .chain_update(token.as_bytes())
                .finalize();
            for chunk in digest.chunks_exact(8) {
                if out.len() == self.dim {
                    break;
                }
                let x = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                out.push(x as f64 / u64::MAX as f64 * 2.0 - 1.0);
            }
            block += 1;
        }
        out
    }
}

impl Encoder for HashedEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, seq: &TokenSeq) -> Result<EncodedSequence, EncoderError> {
        Ok(hashed_encode(self.seed, self.dim, seq))
    }
}

pub fn hashed_encode(seed: u64, dim: usize, seq: &TokenSeq) -> EncodedSequence {
    let enc = HashedEncoder { seed, dim };
    let mut data = Vec::with_capacity(seq.len() * dim);
    for t in &seq.tokens {
        data.extend(enc.token_vector(&t.text));
    }
    EncodedSequence::from_rows(
        Matrix::from_vec(seq.len(), dim, data),
        vec![true; seq.len()],
    )
}
