use rand::Rng;

use super::hyperenv::TRIPLET_FEATURE_DIM;
use crate::tensor::nn::Linear;
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// Triplets of several environments over a shared set of atom rows.
#[derive(Debug, Clone, Default)]
pub struct TripletBatch {
    pub n_rows: usize,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub b2: Vec<usize>,
    /// `n_triplets × TRIPLET_FEATURE_DIM`
    pub features: Vec<f64>,
    pub priors: Vec<f64>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn feature_tensor(&self) -> Tensor {
        Tensor::new(self.len(), TRIPLET_FEATURE_DIM, self.features.clone())
    }

    /// 1 for rows that receive at least one triplet.
    fn receiver_mask(&self, recv: &[usize]) -> Tensor {
        let mut m = vec![0.0; self.n_rows];
        for &r in recv {
            m[r] = 1.0;
        }
        Tensor::column(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Triplet `(a,b,b′)` updates `b′`.
    Outward,
    /// Triplet `(a,b,b′)` updates `a`.
    Inward,
}

/// One triangular attention pass. Projections of the hypernode vector
/// `x_{a,0} ∥ x_{b,1} ∥ x_{b′,2} ∥ t` are computed blockwise from per-atom
/// projections, which equals applying the full matrix to the concatenation.
#[derive(Debug, Clone)]
pub struct TaPass {
    pub dir: Direction,
    lin: [Linear; 3],
    value: [Linear; 3],
    value_t: Linear,
    key: [Linear; 3],
    key_t: Linear,
    query: Linear,
    c: Linear,
}

impl TaPass {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, dir: Direction, rng: &mut R) -> Self {
        let td = TRIPLET_FEATURE_DIM;
        let mut mk = |part: &str, i: usize, o: usize, bias: bool| Linear::new(ps, &format!("{name}.{part}"), i, o, bias, rng);
        TaPass {
            dir,
            lin: [mk("lin0", d, d, true), mk("lin1", d, d, true), mk("lin2", d, d, true)],
            value: [mk("value0", d, d, false), mk("value1", d, d, false), mk("value2", d, d, false)],
            value_t: mk("value_t", td, d, false),
            key: [mk("key0", d, d, false), mk("key1", d, d, false), mk("key2", d, d, false)],
            key_t: mk("key_t", td, d, false),
            query: mk("query", d, d, false),
            c: mk("c", d, 1, false),
        }
    }

    fn project(&self, t: &mut Tape, ps: &ParamSet, xm: &[Var; 3], tb: &TripletBatch, feats: Var, value: bool) -> Var {
        let (mats, mt) = if value { (&self.value, &self.value_t) } else { (&self.key, &self.key_t) };
        let idx = [&tb.a, &tb.b, &tb.b2];
        let mut acc = mt.forward(t, ps, feats);
        for k in 0..3 {
            let p = mats[k].forward(t, ps, xm[k]);
            let g = t.gather_rows(p, idx[k]);
            acc = t.add(acc, g);
        }
        acc
    }

    /// Receivers become `ELU(x + Σ γ̃ W h)`; rows without triplets pass through.
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var, tb: &TripletBatch) -> Var {
        if tb.is_empty() {
            return x;
        }
        let recv = match self.dir {
            Direction::Outward => &tb.b2,
            Direction::Inward => &tb.a,
        };
        let xm = [0, 1, 2].map(|k| self.lin[k].forward(t, ps, x));
        let feats = t.constant(tb.feature_tensor());
        let v = self.project(t, ps, &xm, tb, feats, true);
        let k = self.project(t, ps, &xm, tb, feats, false);
        let q = self.query.forward(t, ps, x);
        let q = t.gather_rows(q, recv);
        let h = t.add(q, k);
        let h = t.leaky_relu(h);
        let z = self.c.forward(t, ps, h);
        let z = t.leaky_relu(z);
        let gamma = t.segment_softmax(z, recv, tb.n_rows, Some(&tb.priors));
        let msg = t.mul_col(v, gamma);
        let msg = t.scatter_add_rows(msg, recv, tb.n_rows);
        let y = t.add(x, msg);
        let y = t.elu(y);
        let diff = t.sub(y, x);
        let mask = t.constant(tb.receiver_mask(recv));
        let diff = t.mul_col(diff, mask);
        t.add(x, diff)
    }
}

/// Attentive pooling of atom rows into one row per segment.
#[derive(Debug, Clone)]
pub struct Reduce {
    w0: Linear,
    w1: Linear,
    c: Linear,
    w: Linear,
}

impl Reduce {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        let mut mk = |part: &str, o: usize| Linear::new(ps, &format!("{name}.{part}"), d, o, false, rng);
        Reduce {
            w0: mk("w0", d),
            w1: mk("w1", d),
            c: mk("c", 1),
            w: mk("w", d),
        }
    }

    /// `LN(ELU(pool + Σ_j γ_j W x_j))` with `pool = Σ_j x_j`.
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var, seg: &[usize], n_seg: usize) -> Var {
        let pool = t.scatter_add_rows(x, seg, n_seg);
        let a = self.w0.forward(t, ps, x);
        let b = self.w1.forward(t, ps, pool);
        let b = t.gather_rows(b, seg);
        let h = t.add(a, b);
        let h = t.leaky_relu(h);
        let z = self.c.forward(t, ps, h);
        let z = t.leaky_relu(z);
        let gamma = t.segment_softmax(z, seg, n_seg, None);
        let wx = self.w.forward(t, ps, x);
        let wx = t.mul_col(wx, gamma);
        let delta = t.scatter_add_rows(wx, seg, n_seg);
        let y = t.add(pool, delta);
        let y = t.elu(y);
        t.layer_norm(y)
    }

    /// Attention weights alone, for inspection.
    pub fn weights(&self, t: &mut Tape, ps: &ParamSet, x: Var, seg: &[usize], n_seg: usize) -> Var {
        let pool = t.scatter_add_rows(x, seg, n_seg);
        let a = self.w0.forward(t, ps, x);
        let b = self.w1.forward(t, ps, pool);
        let b = t.gather_rows(b, seg);
        let h = t.add(a, b);
        let h = t.leaky_relu(h);
        let z = self.c.forward(t, ps, h);
        let z = t.leaky_relu(z);
        t.segment_softmax(z, seg, n_seg, None)
    }
}
