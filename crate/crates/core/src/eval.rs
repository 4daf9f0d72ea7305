//! Baseline-relative ROC analysis, null metrics and structural splits.
//!
//! A model at level `M` is scored against a baseline at level `B` by the
//! density ratio `P_M(v)/P_B(v)`: positives are ground-truth motifs, negatives
//! are drawn from `P_B` with the truth rejected. A model scored against itself
//! gives constant ratios and hence an AUC of exactly one half.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn2d::Model2D;
use crate::gnn3d::{Example3D, Model3D};
use crate::molio::MolGraph;
use crate::posterior::{Posterior, View};
use crate::recon::draw_negatives;
use crate::sampling::Categorical;
use crate::shred::{MotifKey, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub stderr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// `(fpr, tpr)` from `(0,0)` to `(1,1)`.
    pub curve: Vec<(f64, f64)>,
}

impl RocResult {
    /// `|auc − 0.5| ≤ 3·stderr`
    pub fn is_null(&self) -> bool {
        (self.auc - 0.5).abs() <= 3.0 * self.stderr
    }
}

/// Hanley–McNeil standard error of an AUC.
pub fn hanley_mcneil(auc: f64, n_pos: usize, n_neg: usize) -> f64 {
    let (a, n1, n2) = (auc, n_pos as f64, n_neg as f64);
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let v = (a * (1.0 - a) + (n1 - 1.0) * (q1 - a * a) + (n2 - 1.0) * (q2 - a * a)) / (n1 * n2);
    v.max(0.0).sqrt()
}

/// Mann–Whitney AUC with ties counted as one half.
pub fn roc(pos: &[f64], neg: &[f64]) -> Result<RocResult> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Config("ROC needs positives and negatives".into()));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::Degenerate("NaN score".into()));
    }
    // (score, is_positive), descending by score
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n1, n2) = (pos.len() as f64, neg.len() as f64);
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut dtp, mut dfp) = (0.0, 0.0);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                dtp += 1.0;
            } else {
                dfp += 1.0;
            }
            j += 1;
        }
        // a tied block contributes a trapezoid, i.e. one half per tied pair
        area += dfp * (tp + 0.5 * dtp);
        tp += dtp;
        fp += dfp;
        curve.push((fp / n2, tp / n1));
        i = j;
    }
    let auc = area / (n1 * n2);
    Ok(RocResult {
        auc,
        stderr: hanley_mcneil(auc, pos.len(), neg.len()),
        n_pos: pos.len(),
        n_neg: neg.len(),
        curve,
    })
}

/// Context levels of the generative hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "0D")]
    Zero,
    #[serde(rename = "1D")]
    One,
    #[serde(rename = "2D")]
    Two,
    #[serde(rename = "3D")]
    Three,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Zero, Level::One, Level::Two, Level::Three];

    fn idx(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D", self.idx())
    }
}

/// Normalized model densities over the vocabulary at each level for one step.
#[derive(Debug, Clone)]
pub struct Densities {
    pub truth: usize,
    pub d: [Option<Vec<f64>>; 4],
}

impl Densities {
    /// Uniform, `p`, `p·q̂` and, with a 3D model, `p·q̂·r̂`.
    pub fn compute(ex: &Example3D, vocab: &Vocabulary, m2: Option<&Model2D>, m3: Option<&Model3D>) -> Result<Option<Self>> {
        let Some(truth) = vocab.index_of(&ex.step.true_motif) else {
            return Ok(None);
        };
        let n = vocab.len();
        let mut d: [Option<Vec<f64>>; 4] = [Some(vec![1.0 / n as f64; n]), Some(vocab.probs()), None, None];
        if let Some(m2) = m2 {
            let core = &ex.step.core;
            let a = ex.step.growth_atom;
            let pq = Posterior::assemble(core, a, None, m2, None, View::Pq)?;
            d[2] = Some(pq.probs());
            if let Some(m3) = m3 {
                let ctx = ex.context()?;
                let pqr = Posterior::assemble(core, a, Some(&ctx), m2, Some(m3), View::Pqr)?;
                d[3] = Some(pqr.probs());
            }
        }
        Ok(Some(Densities { truth, d }))
    }

    pub fn get(&self, l: Level) -> Option<&[f64]> {
        self.d[l.idx()].as_deref()
    }
}

/// Pooled scores of model `m` against baseline `b`.
pub fn roc_from_densities(dens: &[Densities], m: Level, b: Level, k_neg: usize, seed: u64) -> Result<RocResult> {
    if dens.is_empty() {
        return Err(Error::Config("no evaluation steps".into()));
    }
    if k_neg == 0 {
        return Err(Error::Config("negatives per step must be at least 1".into()));
    }
    let per: Vec<(f64, Vec<f64>)> = dens
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let (dm, db) = match (d.get(m), d.get(b)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::MissingContext(format!("{m} or {b} density unavailable"))),
            };
            let dist = Categorical::new(db).ok_or_else(|| Error::Degenerate("baseline has no mass".into()))?;
            let mut rng = crate::rng::derive(seed, &[0xE7A1, m.idx() as u64, b.idx() as u64, i as u64]);
            let negs = draw_negatives(&dist, Some(d.truth), k_neg, &mut rng)?;
            let score = |j: usize| dm[j] / db[j];
            Ok((score(d.truth), negs.into_iter().map(score).collect()))
        })
        .collect::<Result<_>>()?;
    let pos: Vec<f64> = per.iter().map(|p| p.0).collect();
    let neg: Vec<f64> = per.into_iter().flat_map(|p| p.1).collect();
    roc(&pos, &neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub close_cut: f64,
    pub far_cut: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            close_cut: 3.5,
            far_cut: 4.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub close: Vec<usize>,
    pub far: Vec<usize>,
    pub neither: Vec<usize>,
}

/// Close: a ground-truth motif atom within `close_cut` of a protein atom.
/// Far: none within `far_cut`.
pub fn close_far_split(steps: &[Example3D], spec: &SplitSpec) -> Result<Split> {
    if spec.close_cut >= spec.far_cut {
        return Err(Error::Config("close cutoff must be below far cutoff".into()));
    }
    let mut s = Split::default();
    for (i, ex) in steps.iter().enumerate() {
        let c = ex
            .contact
            .ok_or_else(|| Error::MissingContext(format!("step {i} has no complex pose")))?;
        if c <= spec.close_cut {
            s.close.push(i);
        } else if c > spec.far_cut {
            s.far.push(i);
        } else {
            s.neither.push(i);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullMetrics {
    /// 1D frequency model against the uniform model.
    pub auc_p_vs_uniform: RocResult,
    pub top1_static: f64,
    pub top8_static: f64,
    pub top1_sampled: f64,
    pub top8_sampled: f64,
    pub n_steps: usize,
}

/// Context-free accuracies of the 1D model: ranking by frequency (static)
/// and drawing from `p` (sampled).
pub fn null_metrics(vocab: &Vocabulary, steps: &[Example3D], k_neg: usize, seed: u64) -> Result<NullMetrics> {
    let dens: Vec<Densities> = steps
        .iter()
        .map(|e| Densities::compute(e, vocab, None, None))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if dens.is_empty() {
        return Err(Error::Config("no evaluation steps in the vocabulary".into()));
    }
    let auc = roc_from_densities(&dens, Level::One, Level::Zero, k_neg, seed)?;
    // entries are ordered by descending count, so index = static rank
    let n = dens.len() as f64;
    let top_static = |k: usize| dens.iter().filter(|d| d.truth < k).count() as f64 / n;
    let top_sampled = |k: usize| {
        dens.iter()
            .enumerate()
            .filter(|(i, d)| {
                let mut rng = crate::rng::derive(seed, &[0x7095, k as u64, *i as u64]);
                (0..k).any(|_| vocab.sample_index(&mut rng) == d.truth)
            })
            .count() as f64
            / n
    };
    Ok(NullMetrics {
        auc_p_vs_uniform: auc,
        top1_static: top_static(1),
        top8_static: top_static(8),
        top1_sampled: top_sampled(1),
        top8_sampled: top_sampled(8),
        n_steps: dens.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocEntry {
    pub model: Level,
    pub baseline: Level,
    pub subset: String,
    pub roc: RocResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<RocEntry>,
    pub n_steps: usize,
    pub out_of_vocabulary: usize,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k_neg: usize,
    pub split: SplitSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_neg: 8,
            split: SplitSpec::default(),
        }
    }
}

/// The `{1D,2D,3D} × {0D,1D,2D}` matrix over all steps, plus close and far
/// subsets for every 3D entry when poses are available.
pub fn evaluate(
    steps: &[Example3D],
    m2: &Model2D,
    m3: Option<&Model3D>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let vocab = m2.vocabulary();
    let dens: Vec<(usize, Densities)> = steps
        .par_iter()
        .enumerate()
        .map(|(i, e)| Ok(Densities::compute(e, vocab, Some(m2), m3)?.map(|d| (i, d))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let oov = steps.len() - dens.len();
    let split = if m3.is_some() && steps.iter().all(|e| e.contact.is_some()) {
        Some(close_far_split(steps, &cfg.split)?)
    } else {
        None
    };
    let all: Vec<Densities> = dens.iter().map(|d| d.1.clone()).collect();
    let subset = |idx: &[usize]| -> Vec<Densities> {
        dens.iter()
            .filter(|(i, _)| idx.binary_search(i).is_ok())
            .map(|d| d.1.clone())
            .collect()
    };
    let mut entries = Vec::new();
    let models = if m3.is_some() {
        vec![Level::One, Level::Two, Level::Three]
    } else {
        vec![Level::One, Level::Two]
    };
    for &m in &models {
        for b in [Level::Zero, Level::One, Level::Two] {
            entries.push(RocEntry {
                model: m,
                baseline: b,
                subset: "all".into(),
                roc: roc_from_densities(&all, m, b, cfg.k_neg, seed)?,
            });
        }
    }
    if let Some(s) = &split {
        for (name, idx) in [("close", &s.close), ("far", &s.far)] {
            let d = subset(idx);
            if d.is_empty() {
                log::warn!("{name} subset is empty");
                continue;
            }
            for &m in &models {
                for b in [Level::Zero, Level::One, Level::Two] {
                    entries.push(RocEntry {
                        model: m,
                        baseline: b,
                        subset: name.into(),
                        roc: roc_from_densities(&d, m, b, cfg.k_neg, seed)?,
                    });
                }
            }
        }
    }
    Ok(EvalReport {
        entries,
        n_steps: dens.len(),
        out_of_vocabulary: oov,
        split,
    })
}

impl EvalReport {
    pub fn get(&self, m: Level, b: Level, subset: &str) -> Option<&RocResult> {
        self.entries
            .iter()
            .find(|e| e.model == m && e.baseline == b && e.subset == subset)
            .map(|e| &e.roc)
    }

    /// `report.json`, one curve CSV per entry and a summary table.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        for e in &self.entries {
            let path = dir.join(format!("roc_{}_vs_{}_{}.csv", e.model, e.baseline, e.subset));
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "fpr,tpr")?;
            for (x, y) in &e.roc.curve {
                writeln!(f, "{x},{y}")?;
            }
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<6} {:<9} {:<7} {:>8} {:>8} {:>7} {:>7}\n", "model", "baseline", "subset", "auc", "stderr", "n_pos", "n_neg");
        for e in &self.entries {
            s += &format!(
                "{:<6} {:<9} {:<7} {:>8.4} {:>8.4} {:>7} {:>7}\n",
                e.model.to_string(),
                e.baseline.to_string(),
                e.subset,
                e.roc.auc,
                e.roc.stderr,
                e.roc.n_pos,
                e.roc.n_neg
            );
        }
        s
    }
}

/// Smoothing added to every cell before a KL divergence.
pub const KL_SMOOTHING: f64 = 1e-6;

/// Mean `p·q` posterior over `contexts`, keyed by motif.
pub fn model_marginal(m2: &Model2D, contexts: &[(&MolGraph, usize)]) -> Result<BTreeMap<MotifKey, f64>> {
    if contexts.is_empty() {
        return Err(Error::Config("marginal needs at least one context".into()));
    }
    let vocab = m2.vocabulary();
    let sums = contexts
        .par_iter()
        .map(|&(g, a)| Posterior::assemble(g, a, None, m2, None, View::Pq).map(|p| p.probs()))
        .try_reduce(|| vec![0.0; vocab.len()], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
    let n = contexts.len() as f64;
    Ok(vocab
        .entries()
        .iter()
        .zip(sums)
        .map(|(e, s)| (e.key.clone(), s / n))
        .collect())
}

pub fn frequency_marginal(vocab: &Vocabulary) -> BTreeMap<MotifKey, f64> {
    vocab.entries().iter().enumerate().map(|(i, e)| (e.key.clone(), vocab.p(i))).collect()
}

/// `KL(a ‖ b)` over the union of keys after adding [`KL_SMOOTHING`] and
/// renormalizing.
pub fn kl_divergence(a: &BTreeMap<MotifKey, f64>, b: &BTreeMap<MotifKey, f64>) -> f64 {
    let keys: Vec<&MotifKey> = {
        let mut k: Vec<&MotifKey> = a.keys().chain(b.keys()).collect();
        k.sort();
        k.dedup();
        k
    };
    let smooth = |m: &BTreeMap<MotifKey, f64>| {
        let v: Vec<f64> = keys.iter().map(|k| m.get(*k).copied().unwrap_or(0.0) + KL_SMOOTHING).collect();
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect::<Vec<_>>()
    };
    let (pa, pb) = (smooth(a), smooth(b));
    pa.iter().zip(&pb).map(|(x, y)| x * (x / y).ln()).sum()
}

/// Uniformly drawn `(core, growth atom)` contexts from the steps.
pub fn sample_contexts<'a, R: Rng + ?Sized>(steps: &'a [Example3D], n: usize, rng: &mut R) -> Vec<(&'a MolGraph, usize)> {
    if steps.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let s = &steps[rng.random_range(0..steps.len())].step;
            (&s.core, s.growth_atom)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in pos {
            for n in neg {
                s += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = crate::rng::derive(1, &[]);
        for _ in 0..50 {
            let pos: Vec<f64> = (0..20).map(|_| (rng.random_range(0..6) as f64) / 2.0).collect();
            let neg: Vec<f64> = (0..20).map(|_| (rng.random_range(0..6) as f64) / 3.0).collect();
            let r = roc(&pos, &neg).unwrap();
            assert!((r.auc - brute(&pos, &neg)).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_and_constant_scorers() {
        let r = roc(&[2.0, 3.0], &[0.0, 1.0, 1.5]).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc(&[1.0; 5], &[1.0; 40]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert!(r.is_null() && r.stderr > 0.0);
    }

    #[test]
    fn curve_is_monotone() {
        let r = roc(&[0.3, 0.9, 0.5, 0.5], &[0.1, 0.5, 0.7, 0.2, 0.2]).unwrap();
        assert_eq!(r.curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.curve.last(), Some(&(1.0, 1.0)));
        for w in r.curve.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn hanley_mcneil_reference() {
        // A = 0.5: Q1 = 1/3, Q2 = 1/3
        let se = hanley_mcneil(0.5, 10, 10);
        let v: f64 = (0.25 + 9.0 * (1.0 / 3.0 - 0.25) * 2.0) / 100.0;
        assert!((se - v.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let a: BTreeMap<MotifKey, f64> = [("x", 0.3), ("y", 0.7)].iter().map(|(k, v)| (MotifKey(k.to_string()), *v)).collect();
        assert!(kl_divergence(&a, &a).abs() < 1e-15);
        let b: BTreeMap<MotifKey, f64> = [("x", 0.6), ("z", 0.4)].iter().map(|(k, v)| (MotifKey(k.to_string()), *v)).collect();
        assert!(kl_divergence(&a, &b) > 0.0);
    }
}
