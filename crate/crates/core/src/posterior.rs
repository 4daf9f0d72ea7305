//! Assembly, normalization, sampling and diagnostics of the factorized
//! posterior `p·q·r`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn2d::Model2D;
use crate::gnn3d::{Context3D, Example3D, Model3D};
use crate::molio::MolGraph;
use crate::sampling::Categorical;
use crate::shred::{MotifKey, Vocabulary};

/// Which factors enter the probability column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    P,
    Q,
    Pq,
    Qr,
    Pqr,
}

impl View {
    pub const ALL: [View; 5] = [View::P, View::Q, View::Pq, View::Qr, View::Pqr];

    pub fn uses_p(self) -> bool {
        matches!(self, View::P | View::Pq | View::Pqr)
    }

    pub fn uses_q(self) -> bool {
        !matches!(self, View::P)
    }

    pub fn uses_r(self) -> bool {
        matches!(self, View::Qr | View::Pqr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::P => "p",
            View::Q => "q",
            View::Pq => "pq",
            View::Qr => "qr",
            View::Pqr => "pqr",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown view '{s}' (expected p, q, pq, qr or pqr)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub key: MotifKey,
    pub smiles: String,
    pub p: f64,
    pub q: f64,
    /// 1 when no 3D model contributes.
    pub r: f64,
    pub q_hat: f64,
    pub r_hat: f64,
    pub prob: f64,
}

/// Rows in vocabulary order; `prob` sums to one over the rows kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub view: View,
    pub rows: Vec<PosteriorRow>,
    pub z2: f64,
    pub z3: f64,
    /// Size of the full vocabulary, the entropy reference.
    pub vocab_size: usize,
}

/// Optional truncation of a view to its most plausible motifs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Filter {
    pub top_n: Option<usize>,
    pub min_pq: Option<f64>,
}

impl Posterior {
    /// Builds a posterior from raw factor columns in vocabulary order.
    pub fn from_factors(vocab: &Vocabulary, q: &[f64], r: Option<&[f64]>, view: View) -> Result<Self> {
        let n = vocab.len();
        if q.len() != n || r.is_some_and(|r| r.len() != n) {
            return Err(Error::Config(format!("factor columns must have {n} entries")));
        }
        if view.uses_r() && r.is_none() {
            return Err(Error::MissingContext(format!("view {view} needs the 3D factor")));
        }
        let p = vocab.probs();
        let ones = vec![1.0; n];
        let r = r.unwrap_or(&ones);
        if q.iter().chain(r).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Degenerate("likelihood factors must be finite and positive".into()));
        }
        let z2: f64 = (0..n).map(|i| p[i] * q[i]).sum();
        let z3: f64 = (0..n).map(|i| p[i] * q[i] * r[i]).sum();
        let weight = |i: usize| {
            let mut w = 1.0;
            if view.uses_p() {
                w *= p[i];
            }
            if view.uses_q() {
                w *= q[i];
            }
            if view.uses_r() {
                w *= r[i];
            }
            w
        };
        let w: Vec<f64> = (0..n).map(weight).collect();
        let total: f64 = w.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Degenerate(format!("view {view} has no mass")));
        }
        let rows = (0..n)
            .map(|i| {
                let e = vocab.entry(i);
                PosteriorRow {
                    key: e.key.clone(),
                    smiles: e.smiles.clone(),
                    p: p[i],
                    q: q[i],
                    r: r[i],
                    q_hat: q[i] / z2,
                    r_hat: z2 / z3 * r[i],
                    prob: w[i] / total,
                }
            })
            .collect();
        Ok(Posterior {
            view,
            rows,
            z2,
            z3,
            vocab_size: n,
        })
    }

    /// Posterior of growth at `atom` of `core`. `ctx` and `m3` are required
    /// for views that include the 3D factor and ignored otherwise.
    pub fn assemble(
        core: &MolGraph,
        atom: usize,
        ctx: Option<&Context3D<'_>>,
        m2: &Model2D,
        m3: Option<&Model3D>,
        view: View,
    ) -> Result<Self> {
        let vocab = m2.vocabulary();
        let q = if view == View::P {
            // Still validates the growth atom.
            m2.growth_vector(core, atom)?;
            vec![1.0; vocab.len()]
        } else {
            m2.q_all(core, atom)?
        };
        let r = match (view.uses_r(), m3, ctx) {
            (false, _, _) => None,
            (true, Some(m3), Some(ctx)) => {
                if m3.vocabulary().fingerprint() != vocab.fingerprint() {
                    return Err(Error::VocabularyMismatch {
                        expected: vocab.fingerprint(),
                        found: m3.vocabulary().fingerprint(),
                    });
                }
                Some(m3.r_all(ctx)?)
            }
            (true, None, _) => return Err(Error::MissingContext(format!("view {view} needs a 3D model"))),
            (true, _, None) => return Err(Error::MissingContext(format!("view {view} needs a 3D environment"))),
        };
        Posterior::from_factors(vocab, &q, r.as_deref(), view)
    }

    pub fn probs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.prob).collect()
    }

    /// Keeps the `top_n` most probable rows and/or rows with `p·q ≥ min_pq`,
    /// then renormalizes.
    pub fn filtered(&self, f: &Filter) -> Result<Self> {
        let mut keep: Vec<usize> = (0..self.rows.len())
            .filter(|&i| f.min_pq.is_none_or(|m| self.rows[i].p * self.rows[i].q >= m))
            .collect();
        if let Some(n) = f.top_n {
            keep.sort_by(|&a, &b| self.rows[b].prob.total_cmp(&self.rows[a].prob).then(a.cmp(&b)));
            keep.truncate(n);
            keep.sort_unstable();
        }
        let total: f64 = keep.iter().map(|&i| self.rows[i].prob).sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("filter removed every motif".into()));
        }
        let mut out = self.clone();
        out.rows = keep
            .into_iter()
            .map(|i| {
                let mut r = self.rows[i].clone();
                r.prob /= total;
                r
            })
            .collect();
        Ok(out)
    }

    /// Inverse-transform draw over the fixed row order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &MotifKey {
        let c = Categorical::new(&self.probs()).expect("normalized posterior");
        &self.rows[c.sample(rng)].key
    }

    /// Normalized Shannon entropy over the full vocabulary.
    pub fn entropy(&self) -> f64 {
        normalized_entropy(&self.probs(), self.vocab_size)
    }

    /// Row indices by descending probability; ties keep vocabulary order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| self.rows[b].prob.total_cmp(&self.rows[a].prob).then(a.cmp(&b)));
        idx
    }

    /// 1-based rank of every key.
    pub fn ranks(&self) -> HashMap<MotifKey, usize> {
        self.ranking()
            .into_iter()
            .enumerate()
            .map(|(r, i)| (self.rows[i].key.clone(), r + 1))
            .collect()
    }

    /// Rows sorted by probability, as JSON.
    pub fn to_json(&self) -> String {
        let mut sorted = self.clone();
        sorted.rows = self.ranking().into_iter().map(|i| self.rows[i].clone()).collect();
        serde_json::to_string_pretty(&sorted).expect("serializable")
    }
}

/// `−Σ p log p / log n`; zero for `n ≤ 1`.
pub fn normalized_entropy(probs: &[f64], n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h / (n as f64).ln()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub h_q: f64,
    pub h_qr: f64,
    pub h_pqr: f64,
}

impl EntropyRow {
    /// `Ĥ_q − Ĥ₀`, `Ĥ_qr − Ĥ_q`, `Ĥ_pqr − Ĥ_qr` with `Ĥ₀ = 1`.
    pub fn deltas(&self) -> [f64; 3] {
        [self.h_q - 1.0, self.h_qr - self.h_q, self.h_pqr - self.h_qr]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for v in values {
            let k = (((v - lo) / (hi - lo)) * bins as f64).floor();
            counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
}

impl Summary {
    fn new(name: &str, v: &[f64], lo: f64, hi: f64) -> Self {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Summary {
            name: name.into(),
            mean,
            std: var.sqrt(),
            histogram: Histogram::new(v.iter().copied(), lo, hi, 20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
    pub summaries: Vec<Summary>,
    /// Steps whose 3D posterior could not be formed and used `Ĥ_qr = Ĥ_q`.
    pub without_3d: usize,
}

impl EntropyReport {
    pub fn mean_delta_qr(&self) -> f64 {
        self.summaries.iter().find(|s| s.name == "dH_qr").map_or(0.0, |s| s.mean)
    }
}

/// Entropies of the Q, QR and PQR posteriors along each step. Without a 3D
/// model, or for steps lacking coordinates, `r = 1`.
pub fn entropy_shift_report(steps: &[Example3D], m2: &Model2D, m3: Option<&Model3D>) -> Result<EntropyReport> {
    let vocab = m2.vocabulary();
    let rows: Vec<(EntropyRow, bool)> = steps
        .par_iter()
        .map(|ex| {
            let s = &ex.step;
            let q = m2.q_all(&s.core, s.growth_atom)?;
            let r = match m3 {
                Some(m3) => match ex.context() {
                    Ok(ctx) => Some(m3.r_all(&ctx)?),
                    Err(Error::MissingContext(_)) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            let h = |v: View| -> Result<f64> {
                let rr = if v.uses_r() { Some(r.as_deref().unwrap_or(&vec![1.0; q.len()]).to_vec()) } else { None };
                Ok(Posterior::from_factors(vocab, &q, rr.as_deref(), v)?.entropy())
            };
            Ok((
                EntropyRow {
                    h_q: h(View::Q)?,
                    h_qr: h(View::Qr)?,
                    h_pqr: h(View::Pqr)?,
                },
                r.is_none(),
            ))
        })
        .collect::<Result<_>>()?;
    let without_3d = rows.iter().filter(|r| r.1).count();
    let rows: Vec<EntropyRow> = rows.into_iter().map(|r| r.0).collect();
    let col = |f: fn(&EntropyRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let summaries = vec![
        Summary::new("H_q", &col(|r| r.h_q), 0.0, 1.0),
        Summary::new("H_qr", &col(|r| r.h_qr), 0.0, 1.0),
        Summary::new("H_pqr", &col(|r| r.h_pqr), 0.0, 1.0),
        Summary::new("dH_q", &col(|r| r.deltas()[0]), -1.0, 1.0),
        Summary::new("dH_qr", &col(|r| r.deltas()[1]), -1.0, 1.0),
        Summary::new("dH_pqr", &col(|r| r.deltas()[2]), -1.0, 1.0),
    ];
    Ok(EntropyReport {
        rows,
        summaries,
        without_3d,
    })
}

/// Floor on per-motif score variance before whitening.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Score cross-correlation `k` and distance `d = 1 − k` over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub keys: Vec<MotifKey>,
    pub k: Vec<Vec<f64>>,
    /// Motifs whose scores did not vary across contexts.
    pub flat: Vec<MotifKey>,
}

impl KernelMatrix {
    pub fn distance(&self) -> Vec<Vec<f64>> {
        self.k.iter().map(|row| row.iter().map(|v| 1.0 - v).collect()).collect()
    }

    /// Dense CSV with a header row of motif keys.
    pub fn write_csv(path: &Path, keys: &[MotifKey], m: &[Vec<f64>]) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<&str> = keys.iter().map(|k| k.0.as_str()).collect();
        writeln!(f, "{}", header.join(","))?;
        for row in m {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(f, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Kernel over per-motif whitened `α₂` scores at `contexts`.
pub fn score_kernel(m2: &Model2D, contexts: &[(&MolGraph, usize)]) -> Result<KernelMatrix> {
    let n = contexts.len();
    if n < 2 {
        return Err(Error::Config("the score kernel needs at least two contexts".into()));
    }
    let vocab = m2.vocabulary();
    // scores[c][i]
    let scores: Vec<Vec<f64>> = contexts
        .par_iter()
        .map(|&(g, a)| Ok(m2.logits_all(g, a)?.into_iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect()))
        .collect::<Result<_>>()?;
    kernel_from_scores(vocab.entries().iter().map(|e| e.key.clone()).collect(), &scores)
}

/// `scores[c][i]`: score of motif `i` in context `c`.
pub fn kernel_from_scores(keys: Vec<MotifKey>, scores: &[Vec<f64>]) -> Result<KernelMatrix> {
    let n = scores.len();
    let m = keys.len();
    if n < 2 {
        return Err(Error::Config("the score kernel needs at least two contexts".into()));
    }
    let mut white = vec![vec![0.0; n]; m];
    let mut flat = Vec::new();
    for i in 0..m {
        let col: Vec<f64> = scores.iter().map(|s| s[i]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        if var < VARIANCE_FLOOR {
            flat.push(keys[i].clone());
        }
        let sd = var.max(VARIANCE_FLOOR).sqrt();
        for (c, x) in col.iter().enumerate() {
            white[i][c] = (x - mean) / sd;
        }
    }
    let k: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (0..m)
                .map(|j| white[i].iter().zip(&white[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    Ok(KernelMatrix { keys, k, flat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn2d::Model2DConfig;
    use crate::molio::parse_smiles;
    use crate::shred::{Motif, MotifCounts, ShredPolicy};

    fn vocab(counts: &[(&str, u64)]) -> Vocabulary {
        let mut c = MotifCounts::new();
        for &(s, n) in counts {
            let m = Motif::from_smiles(s, 0).unwrap();
            c.insert(m.key(), (m, n));
        }
        Vocabulary::from_counts(c).unwrap()
    }

    fn v4() -> Vocabulary {
        vocab(&[("C", 5), ("Cl", 3), ("O", 1), ("N", 1)])
    }

    #[test]
    fn p_view_is_frequency() {
        let v = v4();
        let post = Posterior::from_factors(&v, &[2.0, 0.5, 1.0, 3.0], None, View::P).unwrap();
        for (i, r) in post.rows.iter().enumerate() {
            assert_eq!(r.prob, v.p(i));
        }
    }

    #[test]
    fn neutral_factors_reduce_to_p() {
        let v = v4();
        let ones = vec![1.0; 4];
        let a = Posterior::from_factors(&v, &ones, Some(&ones), View::Pqr).unwrap();
        let b = Posterior::from_factors(&v, &ones, None, View::P).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn normalized_factors_sum_to_one() {
        let v = v4();
        let q = [2.0, 0.5, 1.5, 3.0];
        let r = [0.1, 4.0, 1.0, 0.7];
        let post = Posterior::from_factors(&v, &q, Some(&r), View::Pqr).unwrap();
        let s2: f64 = post.rows.iter().map(|r| r.p * r.q_hat).sum();
        let s3: f64 = post.rows.iter().map(|r| r.p * r.q_hat * r.r_hat).sum();
        assert!((s2 - 1.0).abs() < 1e-12 && (s3 - 1.0).abs() < 1e-12);
        for row in &post.rows {
            assert!((row.prob - row.p * row.q_hat * row.r_hat).abs() < 1e-12);
        }
    }

    #[test]
    fn r_view_without_r_is_an_error() {
        let v = v4();
        assert!(matches!(
            Posterior::from_factors(&v, &[1.0; 4], None, View::Qr),
            Err(Error::MissingContext(_))
        ));
    }

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(normalized_entropy(&[0.25; 4], 4), 1.0);
        assert_eq!(normalized_entropy(&[1.0, 0.0, 0.0, 0.0], 4), 0.0);
        assert!((normalized_entropy(&[0.5, 0.5, 0.0, 0.0], 4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn filters_renormalize() {
        let v = v4();
        let post = Posterior::from_factors(&v, &[1.0, 1.0, 4.0, 1.0], None, View::Pq).unwrap();
        let top = post.filtered(&Filter { top_n: Some(2), min_pq: None }).unwrap();
        assert_eq!(top.rows.len(), 2);
        assert!((top.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(top.rows[0].key, v.entry(0).key);
        let none = post.filtered(&Filter { top_n: None, min_pq: Some(10.0) });
        assert!(none.is_err());
    }

    #[test]
    fn scaling_r_keeps_ranking() {
        let v = v4();
        let q = [2.0, 0.5, 1.5, 3.0];
        let r = [0.1, 4.0, 1.0, 0.7];
        let r2: Vec<f64> = r.iter().map(|x| x * 17.0).collect();
        let a = Posterior::from_factors(&v, &q, Some(&r), View::Pqr).unwrap();
        let b = Posterior::from_factors(&v, &q, Some(&r2), View::Pqr).unwrap();
        assert_eq!(a.ranking(), b.ranking());
    }

    #[test]
    fn kernel_duplicates_and_degenerate_rows() {
        let keys: Vec<MotifKey> = ["a", "b", "c"].iter().map(|s| MotifKey(s.to_string())).collect();
        let scores = vec![vec![0.1, 0.1, 0.5], vec![0.7, 0.7, 0.5], vec![0.3, 0.3, 0.5]];
        let k = kernel_from_scores(keys, &scores).unwrap();
        assert!((k.k[0][0] - 1.0).abs() < 1e-9);
        assert!((k.k[0][1] - 1.0).abs() < 1e-9);
        assert!(k.distance()[0][1].abs() < 1e-9);
        assert_eq!(k.flat, vec![MotifKey("c".into())]);
        assert!(k.k.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn zeroed_model_ranks_by_frequency() {
        let v = v4();
        let mut m = Model2D::new(Model2DConfig { d: 8, init_seed: 1 }, v.clone(), &ShredPolicy::default()).unwrap();
        m.zero_output_layers();
        let g = parse_smiles("c1ccccc1").unwrap();
        let a = Posterior::assemble(&g, 0, None, &m, None, View::Pq).unwrap();
        let b = Posterior::assemble(&g, 0, None, &m, None, View::P).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.prob - y.prob).abs() < 1e-15);
        }
        let contexts = [(&g, 0), (&g, 1), (&g, 2)];
        let k = score_kernel(&m, &contexts).unwrap();
        assert_eq!(k.flat.len(), v.len());
        assert!(k.k.iter().flatten().all(|v| v.is_finite()));
    }
}
