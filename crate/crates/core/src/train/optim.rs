use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the whole gradient when its L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(params: &[&Matrix]) -> Self {
        let z = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            t: 0,
            m: z(),
            v: z(),
        }
    }

    pub fn matches(&self, params: &[&Matrix]) -> bool {
        self.m.len() == params.len()
            && self
                .m
                .iter()
                .zip(params)
                .all(|(m, p)| m.shape() == p.shape())
    }
}

pub fn global_norm(grads: &[Option<Matrix>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// One update. `grads[i]` is the gradient of parameter `i`, `None` when the
/// loss did not touch it.
pub fn step(
    cfg: &OptimizerConfig,
    lr: f64,
    state: &mut OptimizerState,
    params: &mut [&mut Matrix],
    mut grads: Vec<Option<Matrix>>,
) {
    assert_eq!(params.len(), grads.len());
    if let Some(max) = cfg.clip_norm {
        let norm = global_norm(&grads);
        if norm > max {
            grads
                .iter_mut()
                .flatten()
                .for_each(|g| g.scale_assign(max / norm));
        }
    }
    state.t += 1;
    match cfg.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(&grads) {
                if let Some(g) = g {
                    p.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(p, g)| *p -= lr * g);
                }
            }
        }
        OptimizerKind::Adam => {
            let t = state.t as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for (i, p) in params.iter_mut().enumerate() {
                let m = state.m[i].data_mut();
                let v = state.v[i].data_mut();
                let g = grads[i].as_ref().map(Matrix::data);
                for (j, x) in p.data_mut().iter_mut().enumerate() {
                    let gj = g.map_or(0.0, |g| g[j]);
                    m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                    v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                    *x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
                }
            }
        }
    }
}
