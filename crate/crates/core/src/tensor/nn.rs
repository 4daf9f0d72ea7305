//! Parameterized layers over a [`Tape`].

use rand::Rng;

use super::{ParamId, ParamSet, Tape, Tensor, Var};

/// `y = x W + b` with `W` stored `in × out`, initialized `U(±1/√in)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = ps.add(format!("{name}.w"), Tensor::uniform(d_in, d_out, bound, rng));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::uniform(1, d_out, bound, rng)));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let w = t.param(ps, self.w);
        let y = t.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = t.param(ps, b);
                t.add_row(y, b)
            }
            None => y,
        }
    }

    /// Sets weights and bias to zero.
    pub fn zero(&self, ps: &mut ParamSet) {
        ps.get_mut(self.w).data.iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = self.b {
            ps.get_mut(b).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Gated recurrent update of state `x` by input `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    r_h: Linear,
    r_x: Linear,
    s_h: Linear,
    s_x: Linear,
    t_h: Linear,
    t_x: Linear,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        let mut lin = |part: &str| Linear::new(ps, &format!("{name}.{part}"), d, d, true, rng);
        Gru {
            r_h: lin("r_h"),
            r_x: lin("r_x"),
            s_h: lin("s_h"),
            s_x: lin("s_x"),
            t_h: lin("t_h"),
            t_x: lin("t_x"),
        }
    }

    /// `(1 − s)∘t + s∘x` with reset `r`, update `s`, candidate `t`.
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, h: Var, x: Var) -> Var {
        let a = self.r_h.forward(t, ps, h);
        let b = self.r_x.forward(t, ps, x);
        let r = t.add(a, b);
        let r = t.sigmoid(r);
        let a = self.s_h.forward(t, ps, h);
        let b = self.s_x.forward(t, ps, x);
        let s = t.add(a, b);
        let s = t.sigmoid(s);
        let a = self.t_h.forward(t, ps, h);
        let b = self.t_x.forward(t, ps, x);
        let rb = t.mul(r, b);
        let c = t.add(a, rb);
        let c = t.tanh(c);
        let one_minus = t.affine(s, -1.0, 1.0);
        let keep = t.mul(one_minus, c);
        let carry = t.mul(s, x);
        t.add(keep, carry)
    }
}

/// `ELU(x + Lin₂(LN(ELU(Lin₁ x))))`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResTrans {
    l1: Linear,
    l2: Linear,
}

impl ResTrans {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        ResTrans {
            l1: Linear::new(ps, &format!("{name}.l1"), d, d, true, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), d, d, true, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let h = self.l1.forward(t, ps, x);
        let h = t.elu(h);
        let h = t.layer_norm(h);
        let h = self.l2.forward(t, ps, h);
        let y = t.add(x, h);
        t.elu(y)
    }
}
