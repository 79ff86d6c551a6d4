use super::matrix::Matrix;

/// Output of [`joint_block_softmax`].
#[derive(Clone, Debug)]
pub struct JointSoftmax {
    /// Raw dot-product scores per block (`N×M_i`), masked cells included.
    pub scores: Vec<Matrix>,
    /// Normalized weights per block; masked cells are exactly zero.
    pub alphas: Vec<Matrix>,
    /// Per-block mass, `Σ_jk alphas[i]`.
    pub mass: Vec<f64>,
}

/// Scores `h_j · s_{i,k}` for every block `i`, then applies one softmax over
/// the union of all unmasked cells of all blocks.
///
/// If no cell is unmasked every output is zero.
pub fn joint_block_softmax(
    h: &Matrix,
    h_mask: &[bool],
    blocks: &[&Matrix],
    block_masks: &[&[bool]],
) -> JointSoftmax {
    assert_eq!(blocks.len(), block_masks.len());
    assert_eq!(h.rows(), h_mask.len());
    let scores: Vec<Matrix> = blocks.iter().map(|s| h.matmul_t(s)).collect();
    let mut max = f64::NEG_INFINITY;
    for (w, m) in scores.iter().zip(block_masks) {
        for (j, keep_j) in h_mask.iter().enumerate() {
            if !keep_j {
                continue;
            }
            for (k, keep_k) in m.iter().enumerate() {
                if *keep_k {
                    max = max.max(w.get(j, k));
                }
            }
        }
    }
    let mut alphas: Vec<Matrix> = scores
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let mut mass = vec![0.0; blocks.len()];
    if max == f64::NEG_INFINITY {
        return JointSoftmax {
            scores,
            alphas,
            mass,
        };
    }
    let mut z = 0.0;
    for (i, (w, m)) in scores.iter().zip(block_masks).enumerate() {
        for (j, keep_j) in h_mask.iter().enumerate() {
            if !keep_j {
                continue;
            }
            for (k, keep_k) in m.iter().enumerate() {
                if *keep_k {
                    let e = (w.get(j, k) - max).exp();
                    alphas[i].set(j, k, e);
                    z += e;
                }
            }
        }
    }
    for (a, p) in alphas.iter_mut().zip(mass.iter_mut()) {
        a.scale_assign(1.0 / z);
        *p = a.data().iter().sum();
    }
    JointSoftmax {
        scores,
        alphas,
        mass,
    }
}
