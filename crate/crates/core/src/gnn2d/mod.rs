//! The 2D likelihood factor `q = α₂/(1−α₂)` over topological embeddings.

mod encoder;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use encoder::{AtomEncoder, Ga0, Ga1, GraphBatch, ROUNDS};

use crate::error::{Error, Result};
use crate::molio::MolGraph;
use crate::recon::{Baseline, MotifTable, ReconstructionStep, StepSet};
use crate::shred::{Motif, MotifKey, ShredPolicy, Vocabulary};
use crate::tensor::nn::Linear;
use crate::tensor::{Checkpoint, ParamSet, Tape, Tensor, Var};
use crate::train::{pair_batch, train, ContrastiveModel, Item, NegativeSource, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Model2DConfig {
    /// Hidden dimension.
    pub d: usize,
    pub init_seed: u64,
}

impl Default for Model2DConfig {
    fn default() -> Self {
        Model2DConfig { d: 64, init_seed: 0 }
    }
}

/// Two SoftPlus stacks producing the growth and motif halves `x_{a,0}`, `x_{a,1}`.
#[derive(Debug, Clone)]
pub struct Heads2D {
    stacks: [[Linear; 3]; 2],
}

impl Heads2D {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        let mut stack = |mu: usize| {
            [0, 1, 2].map(|k| Linear::new(ps, &format!("{name}.mu{mu}.l{k}"), d, d, true, rng))
        };
        let s0 = stack(0);
        let s1 = stack(1);
        Heads2D { stacks: [s0, s1] }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> (Var, Var) {
        let mut out = [x, x];
        for (mu, stack) in self.stacks.iter().enumerate() {
            let mut h = x;
            for l in &stack[..2] {
                h = l.forward(t, ps, h);
                h = t.softplus(h);
            }
            out[mu] = stack[2].forward(t, ps, h);
        }
        (out[0], out[1])
    }

    pub fn zero_output_layers(&self, ps: &mut ParamSet) {
        for s in &self.stacks {
            s[2].zero(ps);
        }
    }
}

/// Encoder, heads, the active vocabulary and a lazily built table of motif
/// vectors. The table is dropped whenever parameters may have changed.
#[derive(Debug)]
pub struct Model2D {
    pub cfg: Model2DConfig,
    params: ParamSet,
    encoder: AtomEncoder,
    heads: Heads2D,
    vocab: Vocabulary,
    policy_fingerprint: String,
    stage: String,
    cache: RwLock<Option<Arc<Tensor>>>,
}

impl Clone for Model2D {
    fn clone(&self) -> Self {
        Model2D {
            cfg: self.cfg,
            params: self.params.clone(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
            vocab: self.vocab.clone(),
            policy_fingerprint: self.policy_fingerprint.clone(),
            stage: self.stage.clone(),
            cache: RwLock::new(self.cache.read().expect("cache lock").clone()),
        }
    }
}

pub const ENCODER_PREFIX: &str = "enc.";

impl Model2D {
    pub fn new(cfg: Model2DConfig, vocab: Vocabulary, policy: &ShredPolicy) -> Result<Self> {
        if cfg.d == 0 {
            return Err(Error::Config("hidden dimension must be positive".into()));
        }
        let mut rng = crate::rng::derive(cfg.init_seed, &[0x2D]);
        let mut params = ParamSet::new();
        let encoder = AtomEncoder::new(&mut params, "enc", cfg.d, &mut rng);
        let heads = Heads2D::new(&mut params, "heads", cfg.d, &mut rng);
        Ok(Model2D {
            cfg,
            params,
            encoder,
            heads,
            vocab,
            policy_fingerprint: policy.fingerprint(),
            stage: "init".into(),
            cache: RwLock::new(None),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.invalidate_cache();
        &mut self.params
    }

    pub fn encoder(&self) -> &AtomEncoder {
        &self.encoder
    }

    pub fn heads(&self) -> &Heads2D {
        &self.heads
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn policy_fingerprint(&self) -> &str {
        &self.policy_fingerprint
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    pub fn set_stage(&mut self, s: &str) {
        self.stage = s.into();
    }

    fn invalidate_cache(&self) {
        *self.cache.write().expect("cache lock") = None;
    }

    /// Zeroes the final head layers so every logit is 0 (test fixture).
    pub fn zero_output_layers(&mut self) {
        self.invalidate_cache();
        self.heads.zero_output_layers(&mut self.params);
    }

    /// Replaces the vocabulary the posterior ranges over.
    pub fn set_vocabulary(&mut self, v: Vocabulary) {
        self.invalidate_cache();
        self.vocab = v;
    }

    /// Layer-normalized atom embeddings, `n_atoms × d`.
    pub fn encode_atoms(&self, g: &MolGraph) -> Tensor {
        let b = GraphBatch::new(&[g]);
        let mut t = Tape::new();
        let x = self.encoder.forward(&mut t, &self.params, &b);
        t.value(x).clone()
    }

    fn logit_scale(&self) -> f64 {
        1.0 / (2.0 * (self.cfg.d as f64).sqrt())
    }

    /// Growth vectors `u = x₀ ∥ x₁` and motif vectors `v = x₁ ∥ x₀` for the
    /// given rows of an encoded batch.
    fn uv(&self, t: &mut Tape, ps: &ParamSet, x: Var, rows: &[usize], motif: bool) -> Var {
        let h = t.gather_rows(x, rows);
        let (x0, x1) = self.heads.forward(t, ps, h);
        if motif {
            t.concat_cols(&[x1, x0])
        } else {
            t.concat_cols(&[x0, x1])
        }
    }

    /// Logits `⟨v,u⟩/(2√d)` for `(core, motif)` index pairs as a column.
    pub fn pair_logits(
        &self,
        t: &mut Tape,
        ps: &ParamSet,
        cores: &[(&MolGraph, usize)],
        motifs: &[&Motif],
        pairs: &[(usize, usize)],
    ) -> Var {
        let graphs: Vec<&MolGraph> = cores.iter().map(|c| c.0).chain(motifs.iter().map(|m| &m.graph)).collect();
        let b = GraphBatch::new(&graphs);
        let x = self.encoder.forward(t, ps, &b);
        let nc = cores.len();
        let grow: Vec<usize> = cores.iter().enumerate().map(|(i, c)| b.offsets[i] + c.1).collect();
        let mrow: Vec<usize> = motifs
            .iter()
            .enumerate()
            .map(|(i, m)| b.offsets[nc + i] + m.attachment)
            .collect();
        let u = self.uv(t, ps, x, &grow, false);
        let v = self.uv(t, ps, x, &mrow, true);
        let ci: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mi: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let up = t.gather_rows(u, &ci);
        let vp = t.gather_rows(v, &mi);
        let s = t.row_dot(up, vp);
        t.scale(s, self.logit_scale())
    }

    fn check_growth_atom(g: &MolGraph, atom: usize) -> Result<()> {
        if atom >= g.n_atoms() {
            return Err(Error::InvalidAtom {
                atom,
                reason: format!("molecule has {} atoms", g.n_atoms()),
            });
        }
        if g.atom(atom).n_hydrogens == 0 {
            return Err(Error::InvalidAtom {
                atom,
                reason: "no hydrogen to replace".into(),
            });
        }
        Ok(())
    }

    /// Growth vector `u` of one atom.
    pub fn growth_vector(&self, g: &MolGraph, atom: usize) -> Result<Vec<f64>> {
        Self::check_growth_atom(g, atom)?;
        let b = GraphBatch::new(&[g]);
        let mut t = Tape::new();
        let x = self.encoder.forward(&mut t, &self.params, &b);
        let u = self.uv(&mut t, &self.params, x, &[atom], false);
        Ok(t.value(u).data.clone())
    }

    /// Motif vector `v` evaluated directly, bypassing the table.
    pub fn motif_vector(&self, m: &Motif) -> Vec<f64> {
        let b = GraphBatch::new(&[&m.graph]);
        let mut t = Tape::new();
        let x = self.encoder.forward(&mut t, &self.params, &b);
        let v = self.uv(&mut t, &self.params, x, &[m.attachment], true);
        t.value(v).data.clone()
    }

    /// Motif vectors of the whole vocabulary, `|V| × 2d`, in vocabulary order.
    pub fn motif_table(&self) -> Arc<Tensor> {
        if let Some(c) = self.cache.read().expect("cache lock").as_ref() {
            return c.clone();
        }
        let entries = self.vocab.entries();
        let rows: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            entries
                .par_chunks(32)
                .flat_map_iter(|chunk| {
                    let graphs: Vec<&MolGraph> = chunk.iter().map(|e| &e.motif.graph).collect();
                    let b = GraphBatch::new(&graphs);
                    let mut t = Tape::new();
                    let x = self.encoder.forward(&mut t, &self.params, &b);
                    let rows: Vec<usize> = chunk
                        .iter()
                        .enumerate()
                        .map(|(i, e)| b.offsets[i] + e.motif.attachment)
                        .collect();
                    let v = self.uv(&mut t, &self.params, x, &rows, true);
                    let v = t.value(v);
                    (0..v.rows).map(|r| v.row(r).to_vec()).collect::<Vec<_>>()
                })
                .collect()
        };
        let table = Arc::new(Tensor::from_rows(&rows));
        *self.cache.write().expect("cache lock") = Some(table.clone());
        table
    }

    /// Logits against every vocabulary entry; `q = exp(logit)`.
    pub fn logits_all(&self, g: &MolGraph, atom: usize) -> Result<Vec<f64>> {
        let u = self.growth_vector(g, atom)?;
        let table = self.motif_table();
        let s = self.logit_scale();
        Ok((0..table.rows)
            .map(|i| table.row(i).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() * s)
            .collect())
    }

    /// `q = α₂/(1−α₂)` for every vocabulary entry.
    pub fn q_all(&self, g: &MolGraph, atom: usize) -> Result<Vec<f64>> {
        Ok(self.logits_all(g, atom)?.into_iter().map(f64::exp).collect())
    }

    /// `α₂(v; a)` for one motif, which need not be in the vocabulary.
    pub fn alpha2_motif(&self, m: &Motif, g: &MolGraph, atom: usize) -> Result<f64> {
        Self::check_growth_atom(g, atom)?;
        let mut t = Tape::new();
        let s = self.pair_logits(&mut t, &self.params, &[(g, atom)], &[m], &[(0, 0)]);
        let s = t.sigmoid(s);
        Ok(t.value(s).item())
    }

    pub fn alpha2(&self, key: &MotifKey, g: &MolGraph, atom: usize) -> Result<f64> {
        let e = self.vocab.get(key).ok_or_else(|| Error::UnknownMotif(key.0.clone()))?;
        self.alpha2_motif(&e.motif, g, atom)
    }

    pub fn to_checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut meta = extra.clone();
        meta.insert("model".into(), "2d".into());
        meta.insert("d".into(), self.cfg.d.to_string());
        meta.insert("vocabulary".into(), self.vocab.fingerprint());
        meta.insert("policy".into(), self.policy_fingerprint.clone());
        meta.insert("stage".into(), self.stage.clone());
        Checkpoint::from_params(&self.params, meta)
    }

    /// Rebuilds a model, refusing a vocabulary or policy other than the one
    /// it was trained with.
    pub fn from_checkpoint(ck: &Checkpoint, vocab: Vocabulary, policy: &ShredPolicy) -> Result<Self> {
        if ck.meta("model") != Some("2d") {
            return Err(Error::Checkpoint("not a 2D model checkpoint".into()));
        }
        let d: usize = ck
            .meta("d")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing hidden dimension".into()))?;
        let want = ck.meta("vocabulary").unwrap_or_default();
        if want != vocab.fingerprint() {
            return Err(Error::VocabularyMismatch {
                expected: want.into(),
                found: vocab.fingerprint(),
            });
        }
        let pf = ck.meta("policy").unwrap_or_default();
        if pf != policy.fingerprint() {
            return Err(Error::PolicyMismatch {
                expected: pf.into(),
                found: policy.fingerprint(),
            });
        }
        let mut m = Model2D::new(Model2DConfig { d, init_seed: 0 }, vocab, policy)?;
        ck.load_into(&mut m.params)?;
        m.stage = ck.meta("stage").unwrap_or("init").into();
        Ok(m)
    }
}

impl Baseline for Model2D {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// `p·q` over the vocabulary.
    fn weights(&self, step: &ReconstructionStep) -> Result<Vec<f64>> {
        let q = self.q_all(&step.core, step.growth_atom)?;
        Ok(q.iter().enumerate().map(|(i, q)| self.vocab.p(i) * q).collect())
    }
}

impl ContrastiveModel for Model2D {
    type Example = ReconstructionStep;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        Model2D::params_mut(self)
    }

    fn chunk_loss(
        &self,
        t: &mut Tape,
        ps: &ParamSet,
        motifs: &MotifTable,
        chunk: &[Item<'_, ReconstructionStep>],
    ) -> Result<Var> {
        let cores: Vec<(&MolGraph, usize)> = chunk.iter().map(|it| (&it.example.core, it.example.growth_atom)).collect();
        let pb = pair_batch(chunk, motifs)?;
        let s = self.pair_logits(t, ps, &cores, &pb.motifs, &pb.pairs);
        Ok(t.bce_with_logits(s, &pb.y, &pb.w))
    }

    fn invalidate(&mut self) {
        self.invalidate_cache();
    }
}

/// Trains against the frequency baseline of the model's vocabulary.
pub fn train_2d(
    model: &mut Model2D,
    train_set: &StepSet,
    val_set: &StepSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    let vocab = model.vocab.clone();
    let mut motifs = train_set.motifs.clone();
    motifs.extend(val_set.motifs.iter().map(|(k, m)| (k.clone(), m.clone())));
    for e in vocab.entries() {
        motifs.entry(e.key.clone()).or_insert_with(|| e.motif.clone());
    }
    let p = vocab.probs();
    let tn = NegativeSource::context_free(&vocab, &p, train_set.len())?;
    let vn = NegativeSource::context_free(&vocab, &p, val_set.len())?;
    let r = train(model, &motifs, &train_set.steps, &tn, &val_set.steps, &vn, cfg, seed)?;
    model.set_stage("2d");
    Ok(r)
}

/// Epoch count of the domain-transfer step.
pub const RECALIBRATION_EPOCHS: usize = 10;

/// Continues training on the second corpus for exactly
/// [`RECALIBRATION_EPOCHS`] epochs against the frequency baseline of `vocab2`,
/// then switches the model to `vocab2`.
pub fn recalibrate(
    model: &mut Model2D,
    steps2: &StepSet,
    vocab2: Vocabulary,
    policy: &ShredPolicy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if policy.fingerprint() != model.policy_fingerprint {
        return Err(Error::PolicyMismatch {
            expected: model.policy_fingerprint.clone(),
            found: policy.fingerprint(),
        });
    }
    model.set_vocabulary(vocab2);
    let cfg = TrainConfig {
        max_epochs: RECALIBRATION_EPOCHS,
        patience: None,
        ..cfg.clone()
    };
    let r = train_2d(model, steps2, &StepSet::default(), &cfg, seed)?;
    model.set_stage("recalibrated");
    Ok(r)
}
