use std::collections::HashMap;

use super::{matmul, matmul_nt, matmul_tn, Grads, ParamId, ParamSet, Tensor};

/// Variance floor inside the layer-norm square root.
pub const LN_EPS: f64 = 1e-6;
const LEAK: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<usize>, usize),
    Elu(Var),
    Relu(Var),
    LeakyRelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    LayerNorm(Var),
    Bce(Var, Vec<f64>, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records values in creation order; `backward` visits nodes in reverse,
/// which is a reverse topological order because inputs always precede outputs.
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.rows, t.cols, t.data.iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    Tensor::new(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Panics on non-finite forward values when enabled.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.check_finite && !value.is_finite() {
            panic!("non-finite value produced by {:?}", std::mem::discriminant(&op));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf for a parameter; repeated calls return the same variable.
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(ps.get(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), "add", |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols), "add_row: {:?} + {:?}", x.shape(), r.shape());
        let mut out = x.clone();
        for i in 0..x.rows {
            for j in 0..x.cols {
                out.data[i * x.cols + j] += r.data[j];
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), "sub", |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), "mul", |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `r×1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        assert_eq!((c.rows, c.cols), (x.rows, 1), "mul_col: {:?} by {:?}", x.shape(), c.shape());
        let mut out = x.clone();
        for i in 0..x.rows {
            for j in 0..x.cols {
                out.data[i * x.cols + j] *= c.data[i];
            }
        }
        self.push(out, Op::MulCol(a, col))
    }

    /// `s·a + t`
    pub fn affine(&mut self, a: Var, s: f64, t: f64) -> Var {
        let v = map(self.value(a), |x| s * x + t);
        self.push(v, Op::Affine(a, s))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows, rows, "concat_cols: row mismatch");
                self.value(p).cols
            })
            .sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows: column mismatch");
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx {
            assert!(i < x.rows, "gather_rows: index {i} out of {} rows", x.rows);
            data.extend_from_slice(x.row(i));
        }
        let t = Tensor::new(idx.len(), x.cols, data);
        self.push(t, Op::GatherRows(a, idx.to_vec()))
    }

    /// Output row `idx[i]` accumulates input row `i`; `n_out` output rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Var {
        let x = self.value(a);
        assert_eq!(idx.len(), x.rows, "scatter_add_rows: index length");
        let mut out = Tensor::zeros(n_out, x.cols);
        for (i, &t) in idx.iter().enumerate() {
            assert!(t < n_out, "scatter_add_rows: target {t} out of {n_out}");
            for j in 0..x.cols {
                out.data[t * x.cols + j] += x.data[i * x.cols + j];
            }
        }
        self.push(out, Op::ScatterAddRows(a, idx.to_vec()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Column sums as a `1×c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                out.data[j] += x.data[i * x.cols + j];
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows.max(1) as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `r×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.rows, 1, (0..x.rows).map(|i| x.row(i).iter().sum()).collect());
        self.push(out, Op::SumCols(a))
    }

    /// Row-wise inner products of two equally shaped matrices.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum_cols(m)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..x.rows {
            let row = &mut out.data[i * x.cols..(i + 1) * x.cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Softmax of an `r×1` logit column within segments `seg[i] < n_seg`,
    /// optionally reweighted: `γ̃_i = exp(z_i) w_i / Σ_{seg} exp(z_j) w_j`.
    /// Segments whose weighted mass is zero get all-zero outputs.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize], n_seg: usize, weights: Option<&[f64]>) -> Var {
        let z = self.value(a);
        assert_eq!((z.rows, z.cols), (seg.len(), 1), "segment_softmax: logits must be a column");
        if let Some(w) = weights {
            assert_eq!(w.len(), seg.len());
        }
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(z.data[i]);
        }
        let mut e: Vec<f64> = seg
            .iter()
            .enumerate()
            .map(|(i, &s)| (z.data[i] - max[s]).exp() * weights.map_or(1.0, |w| w[i]))
            .collect();
        let mut tot = vec![0.0; n_seg];
        for (i, &s) in seg.iter().enumerate() {
            tot[s] += e[i];
        }
        for (i, &s) in seg.iter().enumerate() {
            e[i] = if tot[s] > 0.0 { e[i] / tot[s] } else { 0.0 };
        }
        self.push(Tensor::column(e), Op::SegmentSoftmax(a, seg.to_vec(), n_seg))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(v, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| if x > 0.0 { x } else { LEAK * x });
        self.push(v, Op::LeakyRelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map(self.value(a), sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = map(self.value(a), softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Row-wise `(x − ⟨x⟩) / sqrt(⟨x²⟩ − ⟨x⟩² + ε)`.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let c = x.cols as f64;
        for i in 0..x.rows {
            let row = &mut out.data[i * x.cols..(i + 1) * x.cols];
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        self.push(out, Op::LayerNorm(a))
    }

    /// `Σ_i w_i (softplus(s_i) − y_i s_i)`: weighted binary cross-entropy
    /// on logits `s` (`r×1`).
    pub fn bce_with_logits(&mut self, s: Var, targets: &[f64], weights: &[f64]) -> Var {
        let x = self.value(s);
        assert_eq!((x.rows, x.cols), (targets.len(), 1), "bce: logits must be a column");
        assert_eq!(targets.len(), weights.len());
        let l = x
            .data
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &y), &w)| w * (softplus(z) - y * z))
            .sum();
        self.push(Tensor::scalar(l), Op::Bce(s, targets.to_vec(), weights.to_vec()))
    }

    /// Gradients of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(out).len(), 1, "backward from a non-scalar");
        let mut g: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        g[out.0] = Some(Tensor::scalar(1.0));
        for k in (0..=out.0).rev() {
            let Some(gk) = g[k].take() else { continue };
            let node = &self.nodes[k];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    g[k] = Some(gk);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&gk, self.value(*b));
                    let db = matmul_tn(self.value(*a), &gk);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gk.clone());
                    acc(&mut g, *b, gk);
                }
                Op::AddRow(a, r) => {
                    let mut dr = Tensor::zeros(1, gk.cols);
                    for i in 0..gk.rows {
                        for j in 0..gk.cols {
                            dr.data[j] += gk.data[i * gk.cols + j];
                        }
                    }
                    acc(&mut g, *a, gk);
                    acc(&mut g, *r, dr);
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *b, map(&gk, |x| -x));
                    acc(&mut g, *a, gk);
                }
                Op::Mul(a, b) => {
                    let da = zip(&gk, self.value(*b), "mul'", |x, y| x * y);
                    let db = zip(&gk, self.value(*a), "mul'", |x, y| x * y);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::MulCol(a, c) => {
                    let x = self.value(*a);
                    let col = self.value(*c);
                    let mut da = gk.clone();
                    let mut dc = Tensor::zeros(x.rows, 1);
                    for i in 0..x.rows {
                        for j in 0..x.cols {
                            let idx = i * x.cols + j;
                            da.data[idx] *= col.data[i];
                            dc.data[i] += gk.data[idx] * x.data[idx];
                        }
                    }
                    acc(&mut g, *a, da);
                    acc(&mut g, *c, dc);
                }
                Op::Affine(a, s) => acc(&mut g, *a, map(&gk, |x| x * s)),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols;
                        let mut d = Vec::with_capacity(gk.rows * c);
                        for i in 0..gk.rows {
                            d.extend_from_slice(&gk.row(i)[off..off + c]);
                        }
                        acc(&mut g, p, Tensor::new(gk.rows, c, d));
                        off += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows;
                        let d = gk.data[off * gk.cols..(off + r) * gk.cols].to_vec();
                        acc(&mut g, p, Tensor::new(r, gk.cols, d));
                        off += r;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    for (i, &s) in idx.iter().enumerate() {
                        for j in 0..x.cols {
                            da.data[s * x.cols + j] += gk.data[i * x.cols + j];
                        }
                    }
                    acc(&mut g, *a, da);
                }
                Op::ScatterAddRows(a, idx) => {
                    let mut data = Vec::with_capacity(idx.len() * gk.cols);
                    for &t in idx {
                        data.extend_from_slice(gk.row(t));
                    }
                    acc(&mut g, *a, Tensor::new(idx.len(), gk.cols, data));
                }
                Op::SumAll(a) => {
                    let x = self.value(*a);
                    acc(&mut g, *a, Tensor::filled(x.rows, x.cols, gk.item()));
                }
                Op::SumRows(a) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        da.data[i * x.cols..(i + 1) * x.cols].copy_from_slice(&gk.data);
                    }
                    acc(&mut g, *a, da);
                }
                Op::SumCols(a) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        da.data[i * x.cols..(i + 1) * x.cols].iter_mut().for_each(|v| *v = gk.data[i]);
                    }
                    acc(&mut g, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let mut da = Tensor::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let yr = y.row(i);
                        let gr = gk.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..y.cols {
                            da.data[i * y.cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut g, *a, da);
                }
                Op::SegmentSoftmax(a, seg, n_seg) => {
                    let mut dot = vec![0.0; *n_seg];
                    for (i, &s) in seg.iter().enumerate() {
                        dot[s] += y.data[i] * gk.data[i];
                    }
                    let d = seg
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| y.data[i] * (gk.data[i] - dot[s]))
                        .collect();
                    acc(&mut g, *a, Tensor::column(d));
                }
                Op::Elu(a) => {
                    let d = zip(&gk, self.value(*a), "elu'", |q, x| if x > 0.0 { q } else { q * x.exp() });
                    acc(&mut g, *a, d);
                }
                Op::Relu(a) => {
                    let d = zip(&gk, self.value(*a), "relu'", |q, x| if x > 0.0 { q } else { 0.0 });
                    acc(&mut g, *a, d);
                }
                Op::LeakyRelu(a) => {
                    let d = zip(&gk, self.value(*a), "lrelu'", |q, x| if x > 0.0 { q } else { LEAK * q });
                    acc(&mut g, *a, d);
                }
                Op::Sigmoid(a) => acc(&mut g, *a, zip(&gk, y, "sigmoid'", |q, s| q * s * (1.0 - s))),
                Op::Softplus(a) => {
                    let d = zip(&gk, self.value(*a), "softplus'", |q, x| q * sigmoid(x));
                    acc(&mut g, *a, d);
                }
                Op::Tanh(a) => acc(&mut g, *a, zip(&gk, y, "tanh'", |q, t| q * (1.0 - t * t))),
                Op::LayerNorm(a) => {
                    let x = self.value(*a);
                    let c = x.cols as f64;
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        let xr = x.row(i);
                        let mean = xr.iter().sum::<f64>() / c;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let yr = y.row(i);
                        let gr = gk.row(i);
                        let gm = gr.iter().sum::<f64>() / c;
                        let gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / c;
                        for j in 0..x.cols {
                            da.data[i * x.cols + j] = inv * (gr[j] - gm - yr[j] * gy);
                        }
                    }
                    acc(&mut g, *a, da);
                }
                Op::Bce(s, targets, weights) => {
                    let x = self.value(*s);
                    let q = gk.item();
                    let d = x
                        .data
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&z, &t), &w)| q * w * (sigmoid(z) - t))
                        .collect();
                    acc(&mut g, *s, Tensor::column(d));
                }
            }
        }
        g
    }

    /// Backward pass collected onto the parameters bound to this tape.
    pub fn param_grads(&self, out: Var, ps: &ParamSet) -> Grads {
        let g = self.backward(out);
        let mut grads = Grads::zeros_like(ps);
        for (&id, &v) in &self.params {
            if let Some(Some(t)) = g.get(v.0) {
                grads.0[id.0].add_assign(t);
            }
        }
        grads
    }
}

fn acc(g: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut g[v.0] {
        Some(t) => t.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}
