//! Topological atom encoder: input projection, one bond-aware attention
//! round, three plain attention rounds, each followed by a GRU update.

use rand::Rng;

use crate::molio::{featurize, MolGraph, ATOM_FEATURE_DIM, BOND_FEATURE_DIM};
use crate::tensor::nn::{Gru, Linear};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// Message-passing rounds after the input projection.
pub const ROUNDS: usize = 4;

/// Several molecules as one disjoint graph.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_atoms: usize,
    pub x: Tensor,
    /// Directed edges `src → dst`, both directions per bond.
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub e: Tensor,
    /// Edges plus one self-loop per atom.
    pub src_loop: Vec<usize>,
    pub dst_loop: Vec<usize>,
    /// First atom row of each member graph.
    pub offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&MolGraph]) -> Self {
        let mut x = Vec::new();
        let mut e = Vec::new();
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut n = 0;
        for g in graphs {
            offsets.push(n);
            let (af, bf) = featurize(g);
            for f in &af {
                x.extend_from_slice(f);
            }
            for (bi, b) in g.bonds().iter().enumerate() {
                for (s, d) in [(b.a, b.b), (b.b, b.a)] {
                    src.push(n + s);
                    dst.push(n + d);
                    e.extend_from_slice(&bf[bi]);
                }
            }
            n += g.n_atoms();
        }
        let m = src.len();
        let mut src_loop = src.clone();
        let mut dst_loop = dst.clone();
        src_loop.extend(0..n);
        dst_loop.extend(0..n);
        GraphBatch {
            n_atoms: n,
            x: Tensor::new(n, ATOM_FEATURE_DIM, x),
            src,
            dst,
            e: Tensor::new(m, BOND_FEATURE_DIM, e),
            src_loop,
            dst_loop,
            offsets,
        }
    }
}

/// Bond-aware attention over first neighbours.
#[derive(Debug, Clone, Copy)]
pub struct Ga0 {
    w: Linear,
    w_msg: Linear,
    c1: Linear,
    c2: Linear,
}

impl Ga0 {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        Ga0 {
            w: Linear::new(ps, &format!("{name}.w"), d + BOND_FEATURE_DIM, d, false, rng),
            w_msg: Linear::new(ps, &format!("{name}.w_msg"), d, d, false, rng),
            c1: Linear::new(ps, &format!("{name}.c1"), d, 1, false, rng),
            c2: Linear::new(ps, &format!("{name}.c2"), d, 1, false, rng),
        }
    }

    /// `Σ_{a'∈N(a)} γ_aa' W′x_a'`; isolated atoms receive zero.
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, b: &GraphBatch, x: Var) -> Var {
        let n = b.n_atoms;
        if b.src.is_empty() {
            let d = t.shape(x)[1];
            return t.constant(Tensor::zeros(n, d));
        }
        let xs = t.gather_rows(x, &b.src);
        let e = t.constant(b.e.clone());
        let xe = t.concat_cols(&[xs, e]);
        let xaa = self.w.forward(t, ps, xe);
        let xaa = t.leaky_relu(xaa);
        let za = self.c1.forward(t, ps, x);
        let za = t.gather_rows(za, &b.dst);
        let zb = self.c2.forward(t, ps, xaa);
        let z = t.add(za, zb);
        let z = t.leaky_relu(z);
        let gamma = t.segment_softmax(z, &b.dst, n, None);
        let msg = self.w_msg.forward(t, ps, x);
        let msg = t.gather_rows(msg, &b.src);
        let msg = t.mul_col(msg, gamma);
        t.scatter_add_rows(msg, &b.dst, n)
    }
}

/// Attention over first neighbours and the atom itself.
#[derive(Debug, Clone, Copy)]
pub struct Ga1 {
    w: Linear,
    c_self: Linear,
    c_nbr: Linear,
}

impl Ga1 {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        Ga1 {
            w: Linear::new(ps, &format!("{name}.w"), d, d, false, rng),
            c_self: Linear::new(ps, &format!("{name}.c_self"), d, 1, false, rng),
            c_nbr: Linear::new(ps, &format!("{name}.c_nbr"), d, 1, false, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, b: &GraphBatch, x: Var) -> Var {
        let n = b.n_atoms;
        let y = self.w.forward(t, ps, x);
        // c·(y_a || y_a') split into its two halves
        let za = self.c_self.forward(t, ps, y);
        let za = t.gather_rows(za, &b.dst_loop);
        let zb = self.c_nbr.forward(t, ps, y);
        let zb = t.gather_rows(zb, &b.src_loop);
        let z = t.add(za, zb);
        let z = t.leaky_relu(z);
        let gamma = t.segment_softmax(z, &b.dst_loop, n, None);
        let msg = t.gather_rows(y, &b.src_loop);
        let msg = t.mul_col(msg, gamma);
        t.scatter_add_rows(msg, &b.dst_loop, n)
    }
}

#[derive(Debug, Clone)]
pub struct AtomEncoder {
    pub d: usize,
    input: Linear,
    ga0: Ga0,
    ga1: Vec<Ga1>,
    gru: Vec<Gru>,
}

impl AtomEncoder {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        let input = Linear::new(ps, &format!("{name}.input"), ATOM_FEATURE_DIM, d, true, rng);
        let ga0 = Ga0::new(ps, &format!("{name}.ga0"), d, rng);
        let ga1 = (1..ROUNDS).map(|k| Ga1::new(ps, &format!("{name}.ga1_{k}"), d, rng)).collect();
        let gru = (0..ROUNDS).map(|k| Gru::new(ps, &format!("{name}.gru{k}"), d, rng)).collect();
        AtomEncoder { d, input, ga0, ga1, gru }
    }

    /// `n_atoms × d` layer-normalized embeddings.
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, b: &GraphBatch) -> Var {
        let x = t.constant(b.x.clone());
        let x0 = self.input.forward(t, ps, x);
        let x0 = t.leaky_relu(x0);
        let h = self.ga0.forward(t, ps, b, x0);
        let h = t.elu(h);
        let y = self.gru[0].forward(t, ps, h, x0);
        let mut x = t.relu(y);
        for (ga, gru) in self.ga1.iter().zip(&self.gru[1..]) {
            let h = ga.forward(t, ps, b, x);
            let h = t.elu(h);
            let y = gru.forward(t, ps, h, x);
            x = t.relu(y);
        }
        t.layer_norm(x)
    }
}
