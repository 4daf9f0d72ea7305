//! Dense row-major matrices with a reverse-mode tape.

mod adam;
mod checkpoint;
pub mod nn;
mod tape;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use tape::{Tape, Var, LN_EPS};

/// A `rows × cols` matrix; vectors are `1 × n` or `n × 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length {} != {rows}x{cols}", data.len());
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor::new(rows, cols, vec![v; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let data = rows
            .iter()
            .flat_map(|row| {
                assert_eq!(row.len(), c, "ragged rows");
                row.iter().copied()
            })
            .collect();
        Tensor::new(r, c, data)
    }

    pub fn column(v: Vec<f64>) -> Self {
        let n = v.len();
        Tensor::new(n, 1, v)
    }

    /// Entries uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::new(rows, cols, data)
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in accumulation");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a · b` for `a: n×k`, `b: k×m`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul {}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols);
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(n, m, out)
}

/// `a · bᵀ` for `a: n×k`, `b: m×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols);
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(n, m, out)
}

/// `aᵀ · b` for `a: k×n`, `b: k×m`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows);
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = &a.data[p * n..(p + 1) * n];
        let brow = &b.data[p * m..(p + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(n, m, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(t);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Copies every tensor whose name also exists in `other` with the same shape.
    pub fn copy_matching(&mut self, other: &ParamSet, prefix_from: &str, prefix_to: &str) -> usize {
        let mut n = 0;
        for (name, t) in other.names.iter().zip(&other.tensors) {
            let Some(rest) = name.strip_prefix(prefix_from) else { continue };
            if let Some(id) = self.id(&format!("{prefix_to}{rest}")) {
                if self.tensors[id.0].shape() == t.shape() {
                    self.tensors[id.0] = t.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

/// Gradients aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn zeros_like(ps: &ParamSet) -> Self {
        Grads(ps.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect())
    }

    pub fn add(mut self, other: &Grads) -> Self {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
        self
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

/// Largest discrepancy between tape gradients and central differences over
/// every parameter scalar, scaled by `max(1, |g|)`.
pub fn gradient_check(ps: &ParamSet, h: f64, loss: impl Fn(&mut Tape, &ParamSet) -> Var) -> f64 {
    let mut t = Tape::new().with_finite_check(false);
    let out = loss(&mut t, ps);
    let g = t.param_grads(out, ps);
    let mut probe = ps.clone();
    let mut worst = 0.0f64;
    for id in ps.ids() {
        for i in 0..ps.get(id).len() {
            let x0 = ps.get(id).data[i];
            probe.get_mut(id).data[i] = x0 + h;
            let mut t1 = Tape::new().with_finite_check(false);
            let v1 = loss(&mut t1, &probe);
            let up = t1.value(v1).item();
            probe.get_mut(id).data[i] = x0 - h;
            let mut t2 = Tape::new().with_finite_check(false);
            let v2 = loss(&mut t2, &probe);
            let down = t2.value(v2).item();
            probe.get_mut(id).data[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let an = g.0[id.0].data[i];
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let mut rng = crate::rng::seeded(0);
        let a = Tensor::uniform(3, 4, 1.0, &mut rng);
        let b = Tensor::uniform(4, 5, 1.0, &mut rng);
        let c = matmul(&a, &b);
        let bt = Tensor::new(5, 4, (0..20).map(|i| b.at(i % 4, i / 4)).collect());
        assert!(c.max_abs_diff(&matmul_nt(&a, &bt)) < 1e-14);
        let at = Tensor::new(4, 3, (0..12).map(|i| a.at(i % 3, i / 3)).collect());
        assert!(c.max_abs_diff(&matmul_tn(&at, &b)) < 1e-14);
    }

    fn ps_with(shapes: &[(&str, usize, usize)], seed: u64) -> ParamSet {
        let mut rng = crate::rng::seeded(seed);
        let mut ps = ParamSet::new();
        for &(n, r, c) in shapes {
            ps.add(n, Tensor::uniform(r, c, 1.0, &mut rng));
        }
        ps
    }

    fn check(shapes: &[(&str, usize, usize)], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        for seed in 0..3 {
            let ps = ps_with(shapes, seed);
            let err = gradient_check(&ps, 1e-4, |t, ps| {
                let vars: Vec<Var> = ps.ids().map(|id| t.param(ps, id)).collect();
                f(t, &vars)
            });
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn fd_matmul_add_sub_mul() {
        check(&[("a", 3, 4), ("b", 4, 2), ("c", 3, 2), ("r", 1, 2)], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let m = t.add(m, v[2]);
            let m = t.mul(m, v[2]);
            let m = t.sub(m, v[2]);
            let m = t.add_row(m, v[3]);
            let m = t.affine(m, 0.7, 0.1);
            let m = t.tanh(m);
            t.sum_all(m)
        });
    }

    #[test]
    fn fd_activations() {
        check(&[("a", 4, 3), ("w", 4, 3)], |t, v| {
            let a = t.elu(v[0]);
            let b = t.leaky_relu(v[0]);
            let c = t.sigmoid(v[0]);
            let d = t.softplus(v[0]);
            let e = t.relu(v[0]);
            let s = t.concat_cols(&[a, b, c, d, e]);
            let w = t.concat_cols(&[v[1], v[1], v[1], v[1], v[1]]);
            let p = t.mul(s, w);
            t.sum_all(p)
        });
    }

    #[test]
    fn fd_layer_norm_and_softmax() {
        check(&[("a", 3, 5), ("w", 3, 5)], |t, v| {
            let n = t.layer_norm(v[0]);
            let s = t.softmax_rows(v[0]);
            let n = t.mul(n, v[1]);
            let s = t.mul(s, v[1]);
            let x = t.add(n, s);
            t.sum_all(x)
        });
    }

    #[test]
    fn fd_gather_scatter_concat() {
        check(&[("a", 4, 2), ("b", 2, 2), ("w", 3, 2)], |t, v| {
            let g = t.gather_rows(v[0], &[3, 0, 0, 2, 1]);
            let s = t.scatter_add_rows(g, &[0, 2, 1, 2, 0], 3);
            let r = t.concat_rows(&[v[1], s]);
            let r = t.gather_rows(r, &[2, 3, 4]);
            let m = t.mul(r, v[2]);
            let c = t.sum_cols(m);
            let c = t.sigmoid(c);
            let sr = t.sum_rows(v[0]);
            let sr = t.softplus(sr);
            let a = t.sum_all(c);
            let b = t.sum_all(sr);
            t.add(a, b)
        });
    }

    #[test]
    fn fd_segment_softmax_and_mul_col() {
        let w = [1.0, 0.5, 0.0, 2.0, 0.3, 0.0];
        check(&[("z", 6, 1), ("x", 6, 3)], |t, v| {
            let g = t.segment_softmax(v[0], &[0, 0, 0, 1, 1, 2], 3, Some(&w));
            let m = t.mul_col(v[1], g);
            let m = t.scatter_add_rows(m, &[0, 0, 0, 1, 1, 2], 3);
            let m = t.tanh(m);
            t.sum_all(m)
        });
    }

    #[test]
    fn fd_bce() {
        check(&[("s", 5, 1)], |t, v| {
            let s = t.affine(v[0], 3.0, 0.0);
            t.bce_with_logits(s, &[1.0, 0.0, 0.0, 1.0, 0.0], &[1.0, 0.25, 0.25, 2.0, 0.0])
        });
    }

    #[test]
    fn segment_softmax_zero_mass_segment_is_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::column(vec![0.3, -1.0, 2.0]));
        let g = t.segment_softmax(z, &[0, 0, 1], 2, Some(&[1.0, 3.0, 0.0]));
        let y = t.value(g);
        assert!((y.data[0] + y.data[1] - 1.0).abs() < 1e-15);
        assert_eq!(y.data[2], 0.0);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-5.0, 0.0, 5.0, 10.0]]));
        let y = t.layer_norm(x);
        for r in 0..2 {
            let row = t.value(y).row(r);
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn fd_gru_and_restrans() {
        let mut rng = crate::rng::seeded(7);
        let mut ps = ParamSet::new();
        let gru = nn::Gru::new(&mut ps, "gru", 3, &mut rng);
        let rt = nn::ResTrans::new(&mut ps, "rt", 3, &mut rng);
        let h = ps.add("h", Tensor::uniform(2, 3, 1.0, &mut rng));
        let x = ps.add("x", Tensor::uniform(2, 3, 1.0, &mut rng));
        let err = gradient_check(&ps, 1e-4, |t, ps| {
            let hv = t.param(ps, h);
            let xv = t.param(ps, x);
            let y = gru.forward(t, ps, hv, xv);
            let y = rt.forward(t, ps, y);
            let y = t.tanh(y);
            t.sum_all(y)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::from_rows(&[vec![3.0, -2.0]]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &ps);
        for _ in 0..2000 {
            let mut t = Tape::new();
            let x = t.param(&ps, id);
            let sq = t.mul(x, x);
            let l = t.sum_all(sq);
            let g = t.param_grads(l, &ps);
            opt.update(&mut ps, &g);
        }
        assert!(ps.get(id).data.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ps = ps_with(&[("a", 2, 3), ("b", 1, 1)], 9);
        let ck = Checkpoint::from_params(&ps, [("stage".to_string(), "x".to_string())].into());
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut ps2 = ps_with(&[("a", 2, 3), ("b", 1, 1)], 10);
        back.load_into(&mut ps2).unwrap();
        assert_eq!(ps, ps2);
        let mut wrong = ps_with(&[("a", 3, 2), ("b", 1, 1)], 10);
        assert!(back.load_into(&mut wrong).is_err());
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn shape_mismatch_panics() {
        matmul(&Tensor::zeros(2, 3), &Tensor::zeros(2, 3));
    }
}
