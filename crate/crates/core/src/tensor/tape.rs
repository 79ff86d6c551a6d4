//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter as
//! borrowed leaves tagged with a caller-chosen key, so a whole batch (context
//! encodings, candidate encodings, heads, loss) can share one tape and one
//! backward sweep. Each op's backward rule is written out by hand.

use super::kernels::{joint_block_softmax, JointSoftmax};
use super::matrix::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
}

impl Value<'_> {
    fn get(&self) -> &Matrix {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    Gather {
        table: usize,
        idx: Vec<usize>,
    },
    Add(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Scale(usize, f64),
    AddScaled(usize, usize, f64, f64),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(usize),
    // Masked columns come out as exact zeros, so the usual Jacobian already
    // gives them zero gradient.
    Softmax(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    MaskedMean {
        x: usize,
        mask: Vec<bool>,
    },
    MaskRows {
        x: usize,
        mask: Vec<bool>,
    },
    JointAttention {
        context: usize,
        cands: Vec<usize>,
        ctx_mask: Vec<bool>,
        cand_masks: Vec<Vec<bool>>,
        alphas: Vec<Matrix>,
    },
    GroupSum {
        x: usize,
        groups: Vec<usize>,
    },
    Nll {
        x: usize,
        gold: usize,
        eps: f64,
    },
    MeanScalars(Vec<usize>),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Option<Matrix>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.by_node[v.0].as_ref()
    }

    /// Gradient accumulated on the parameter leaf registered under `key`.
    pub fn param(&self, key: usize) -> Option<&Matrix> {
        self.params
            .iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, node)| self.by_node[*node].as_ref())
    }

    /// Moves out every parameter gradient as `(key, grad)`.
    pub fn into_params(mut self) -> Vec<(usize, Matrix)> {
        let mut out = Vec::with_capacity(self.params.len());
        for (key, node) in self.params {
            if let Some(g) = self.by_node[node].take() {
                out.push((key, g));
            }
        }
        out
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(usize, usize)>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, m: Matrix, op: Op) -> Var {
        self.push(Value::Owned(m), op)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.nodes[v.0].value.get()
    }

    /// Registers a trainable tensor; its gradient is reported under `key`.
    pub fn param(&mut self, key: usize, m: &'a Matrix) -> Var {
        let v = self.push(Value::Borrowed(m), Op::Leaf);
        self.params.push((key, v.0));
        v
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.owned(m, Op::Leaf)
    }

    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let out = self.value(table).select_rows(idx);
        self.owned(
            out,
            Op::Gather {
                table: table.0,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.owned(out, Op::Add(a.0, b.0))
    }

    /// `x + 1·row` where `row` is `1×cols`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), self.value(x).cols());
        let mut out = self.value(x).clone();
        let rv = r.data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv) {
                *o += b;
            }
        }
        self.owned(out, Op::AddRow(x.0, row.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.owned(out, Op::MatMul(a.0, b.0))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.owned(out, Op::MatMulT(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scaled(s);
        self.owned(out, Op::Scale(x.0, s))
    }

    /// `wa·a + wb·b`
    pub fn add_scaled(&mut self, a: Var, b: Var, wa: f64, wb: f64) -> Var {
        let mut out = self.value(a).scaled(wa);
        out.add_assign(&self.value(b).scaled(wb));
        self.owned(out, Op::AddScaled(a.0, b.0, wa, wb))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut xhat = Matrix::zeros(n, d);
        let mut inv_std = vec![0.0; n];
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat.set(i, j, h);
                out.set(i, j, h * g[j] + b[j]);
            }
        }
        self.owned(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = gelu(*v);
        }
        self.owned(out, Op::Gelu(x.0))
    }

    /// Row-wise softmax; when `key_mask` is given, masked columns get zero
    /// weight.
    pub fn softmax_rows(&mut self, x: Var, key_mask: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let p = match key_mask {
                Some(m) => super::matrix::masked_softmax(row, |j| m[j]),
                None => super::matrix::softmax(row),
            };
            out.row_mut(i).copy_from_slice(&p);
        }
        self.owned(out, Op::Softmax(x.0))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows(), len);
        for i in 0..xv.rows() {
            out.row_mut(i)
                .copy_from_slice(&xv.row(i)[start..start + len]);
        }
        self.owned(out, Op::SliceCols { x: x.0, start })
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        let rows = self.value(xs[0]).rows();
        let cols: usize = xs.iter().map(|v| self.value(*v).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for v in xs {
                let m = self.value(*v);
                assert_eq!(m.rows(), rows);
                out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
                off += m.cols();
            }
        }
        self.owned(out, Op::ConcatCols(xs.iter().map(|v| v.0).collect()))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        let cols = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for v in xs {
            let m = self.value(*v);
            assert_eq!(m.cols(), cols);
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        self.owned(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(xs.iter().map(|v| v.0).collect()),
        )
    }

    /// Mean of the rows where `mask` is true, as a `1×cols` row. Zero when
    /// nothing is unmasked.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Var {
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols()];
        let count = mask.iter().filter(|m| **m).count();
        if count > 0 {
            for i in 0..xv.rows() {
                if mask[i] {
                    for (o, v) in out.iter_mut().zip(xv.row(i)) {
                        *o += v;
                    }
                }
            }
            for o in &mut out {
                *o /= count as f64;
            }
        }
        self.owned(
            Matrix::row_vector(out),
            Op::MaskedMean {
                x: x.0,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Var {
        let mut out = self.value(x).clone();
        for (i, keep) in mask.iter().enumerate() {
            if !keep {
                out.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.owned(
            out,
            Op::MaskRows {
                x: x.0,
                mask: mask.to_vec(),
            },
        )
    }

    /// Word-level alignment of a context against candidate encodings with a
    /// single softmax over every unmasked cell of every score matrix. Output
    /// is the `1×n` row of per-candidate mass.
    pub fn joint_attention(
        &mut self,
        context: Var,
        ctx_mask: &[bool],
        cands: &[Var],
        cand_masks: &[Vec<bool>],
    ) -> Var {
        let JointSoftmax { alphas, mass, .. } = {
            let h = self.value(context);
            let ss: Vec<&Matrix> = cands.iter().map(|c| self.value(*c)).collect();
            let ms: Vec<&[bool]> = cand_masks.iter().map(Vec::as_slice).collect();
            joint_block_softmax(h, ctx_mask, &ss, &ms)
        };
        self.owned(
            Matrix::row_vector(mass),
            Op::JointAttention {
                context: context.0,
                cands: cands.iter().map(|v| v.0).collect(),
                ctx_mask: ctx_mask.to_vec(),
                cand_masks: cand_masks.to_vec(),
                alphas,
            },
        )
    }

    /// Sums entries of a `1×n` row into `n_out` buckets: `out[groups[i]] += x[i]`.
    pub fn group_sum(&mut self, x: Var, groups: &[usize], n_out: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1);
        assert_eq!(xv.cols(), groups.len());
        let mut out = vec![0.0; n_out];
        for (i, &g) in groups.iter().enumerate() {
            out[g] += xv.data()[i];
        }
        self.owned(
            Matrix::row_vector(out),
            Op::GroupSum {
                x: x.0,
                groups: groups.to_vec(),
            },
        )
    }

    /// `−ln(x[gold] + eps)` for a `1×n` probability row.
    pub fn nll(&mut self, x: Var, gold: usize, eps: f64) -> Var {
        let p = self.value(x).data()[gold];
        let out = Matrix::filled(1, 1, -(p + eps).ln());
        self.owned(out, Op::Nll { x: x.0, gold, eps })
    }

    pub fn mean_scalars(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let s: f64 = xs.iter().map(|v| self.value(*v).data()[0]).sum();
        let out = Matrix::filled(1, 1, s / xs.len() as f64);
        self.owned(out, Op::MeanScalars(xs.iter().map(|v| v.0).collect()))
    }

    /// Backpropagates from `root` seeded with `seed` (same shape as the root).
    pub fn backward_from(&self, root: Var, seed: Matrix) -> Gradients {
        assert_eq!(
            seed.shape(),
            self.value(root).shape(),
            "seed shape mismatch"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            by_node: grads,
            params: self.params.clone(),
        }
    }

    /// Backpropagates a scalar (`1×1`) loss.
    pub fn backward(&self, loss: Var) -> Gradients {
        self.backward_from(loss, Matrix::filled(1, 1, 1.0))
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Gather { table, idx } => {
                let t = self.nodes[*table].value.get();
                let acc = grads[*table].get_or_insert_with(|| Matrix::zeros(t.rows(), t.cols()));
                for (r, &row) in idx.iter().enumerate() {
                    for (a, v) in acc.row_mut(row).iter_mut().zip(g.row(r)) {
                        *a += v;
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, row) => {
                accumulate(grads, *x, g.clone());
                let mut r = vec![0.0; g.cols()];
                for k in 0..g.rows() {
                    for (a, v) in r.iter_mut().zip(g.row(k)) {
                        *a += v;
                    }
                }
                accumulate(grads, *row, Matrix::row_vector(r));
            }
            Op::MatMul(a, b) => {
                let av = self.nodes[*a].value.get();
                let bv = self.nodes[*b].value.get();
                accumulate(grads, *a, g.matmul_t(bv));
                accumulate(grads, *b, av.t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                // out = a·bᵀ ⇒ da = g·b, db = gᵀ·a
                let av = self.nodes[*a].value.get();
                let bv = self.nodes[*b].value.get();
                accumulate(grads, *a, g.matmul(bv));
                accumulate(grads, *b, g.t_matmul(av));
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.scaled(*s)),
            Op::AddScaled(a, b, wa, wb) => {
                accumulate(grads, *a, g.scaled(*wa));
                accumulate(grads, *b, g.scaled(*wb));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.nodes[*gain].value.get().data();
                let (n, d) = xhat.shape();
                let mut dx = Matrix::zeros(n, d);
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..n {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    for j in 0..d {
                        dxhat[j] = gr[j] * gv[j];
                        dgain[j] += gr[j] * xr[j];
                        dbias[j] += gr[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx = dot(&dxhat, xr) / d as f64;
                    let out = dx.row_mut(r);
                    for j in 0..d {
                        out[j] = inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, Matrix::row_vector(dgain));
                accumulate(grads, *bias, Matrix::row_vector(dbias));
            }
            Op::Gelu(x) => {
                let xv = self.nodes[*x].value.get();
                let mut dx = g.clone();
                for (d, v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    *d *= gelu_grad(*v);
                }
                accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let y = node.value.get();
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let s = dot(yr, gr);
                    for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - s);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let xv = self.nodes[*x].value.get();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(xs) => {
                let mut off = 0;
                for &x in xs {
                    let c = self.nodes[x].value.get().cols();
                    let mut dx = Matrix::zeros(g.rows(), c);
                    for r in 0..g.rows() {
                        dx.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                    }
                    accumulate(grads, x, dx);
                    off += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.nodes[x].value.get().rows();
                    let idx: Vec<usize> = (off..off + n).collect();
                    accumulate(grads, x, g.select_rows(&idx));
                    off += n;
                }
            }
            Op::MaskedMean { x, mask } => {
                let xv = self.nodes[*x].value.get();
                let count = mask.iter().filter(|m| **m).count();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                if count > 0 {
                    let scale = 1.0 / count as f64;
                    for (r, keep) in mask.iter().enumerate() {
                        if *keep {
                            for (o, v) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                                *o = v * scale;
                            }
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MaskRows { x, mask } => {
                let mut dx = g.clone();
                for (r, keep) in mask.iter().enumerate() {
                    if !keep {
                        dx.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::JointAttention {
                context,
                cands,
                ctx_mask,
                cand_masks,
                alphas,
            } => {
                // p_i = Σ α^i; dL/dw^i_jk = α^i_jk (g_i − Σ_l g_l p_l)
                let p = node.value.get().data();
                let gp = g.data();
                let centre: f64 = gp.iter().zip(p).map(|(a, b)| a * b).sum();
                let h = self.nodes[*context].value.get();
                let mut dh = Matrix::zeros(h.rows(), h.cols());
                for (i, &c) in cands.iter().enumerate() {
                    let s = self.nodes[c].value.get();
                    let mut dw = alphas[i].clone();
                    let coef = gp[i] - centre;
                    for (r, keep_r) in ctx_mask.iter().enumerate() {
                        for (k, keep_k) in cand_masks[i].iter().enumerate() {
                            let v = if *keep_r && *keep_k {
                                dw.get(r, k) * coef
                            } else {
                                0.0
                            };
                            dw.set(r, k, v);
                        }
                    }
                    dh.add_assign(&dw.matmul(s));
                    accumulate(grads, c, dw.t_matmul(h));
                }
                accumulate(grads, *context, dh);
            }
            Op::GroupSum { x, groups } => {
                let d: Vec<f64> = groups.iter().map(|&gidx| g.data()[gidx]).collect();
                accumulate(grads, *x, Matrix::row_vector(d));
            }
            Op::Nll { x, gold, eps } => {
                let xv = self.nodes[*x].value.get();
                let mut dx = Matrix::zeros(1, xv.cols());
                dx.data_mut()[*gold] = -g.data()[0] / (xv.data()[*gold] + eps);
                accumulate(grads, *x, dx);
            }
            Op::MeanScalars(xs) => {
                let share = g.data()[0] / xs.len() as f64;
                for &x in xs {
                    accumulate(grads, x, Matrix::filled(1, 1, share));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], i: usize, g: Matrix) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
