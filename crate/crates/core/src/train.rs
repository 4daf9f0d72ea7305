//! Contrastive binary cross-entropy training shared by the 2D and 3D models.
//!
//! Each example contributes its ground-truth motif with label 1 and `k`
//! baseline draws with label 0. Draws equal to the truth are rejected, so
//! the truth's share `b_t` of baseline mass is restored analytically: the
//! `k` draws carry weight `(1 − b_t)/k` each and the truth carries an extra
//! label-0 term of weight `b_t`. The expected negative measure is then the
//! baseline itself and the optimum satisfies `α/(1−α) = p_data / p_baseline`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::{draw_negatives, MotifTable, ReconstructionStep};
use crate::sampling::Categorical;
use crate::shred::{Motif, MotifKey, Vocabulary};
use crate::tensor::{Adam, AdamConfig, Grads, ParamSet, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Early-stopping patience on held-out loss; `None` runs exactly
    /// `max_epochs`. Written as 0 in config files.
    #[serde(with = "patience_field")]
    pub patience: Option<usize>,
    /// Examples per optimizer step; 0 means full batch.
    pub batch_size: usize,
    /// Examples per parallel work unit. Fixed, so results do not depend on
    /// the thread count.
    pub chunk_size: usize,
    pub k_neg: usize,
    pub adam: AdamConfig,
}

mod patience_field {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(p.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let n = usize::deserialize(d)?;
        Ok((n > 0).then_some(n))
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 40,
            patience: Some(5),
            batch_size: 64,
            chunk_size: 8,
            k_neg: 16,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.chunk_size == 0 || self.k_neg == 0 {
            return Err(Error::Config("max_epochs, chunk_size and k_neg must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is not positive", self.adam.lr)));
        }
        Ok(())
    }
}

/// One scored (example, motif) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabel {
    pub motif: MotifKey,
    pub y: f64,
    pub w: f64,
}

pub trait HasStep {
    fn step(&self) -> &ReconstructionStep;
}

impl HasStep for ReconstructionStep {
    fn step(&self) -> &ReconstructionStep {
        self
    }
}

/// A chunk member: the example, its labels, and a per-epoch nonce for
/// stochastic augmentation (`None` for held-out evaluation).
pub struct Item<'a, E> {
    pub example: &'a E,
    pub labels: &'a [PairLabel],
    pub nonce: Option<u64>,
}

pub trait ContrastiveModel: Sync {
    type Example: HasStep + Sync;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Summed weighted BCE of a chunk's labelled pairs, evaluated at `ps`.
    fn chunk_loss(
        &self,
        t: &mut Tape,
        ps: &ParamSet,
        motifs: &MotifTable,
        chunk: &[Item<'_, Self::Example>],
    ) -> Result<Var>;

    /// Called after every parameter change.
    fn invalidate(&mut self) {}
}

/// Labelled pairs of a chunk as `(example, motif)` index pairs over the
/// chunk's distinct motifs, with targets and weights.
pub struct PairBatch<'a> {
    pub motifs: Vec<&'a Motif>,
    pub pairs: Vec<(usize, usize)>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn pair_batch<'a, E>(chunk: &[Item<'_, E>], motifs: &'a MotifTable) -> Result<PairBatch<'a>> {
    let mut local: HashMap<&MotifKey, usize> = HashMap::new();
    let mut out = PairBatch {
        motifs: Vec::new(),
        pairs: Vec::new(),
        y: Vec::new(),
        w: Vec::new(),
    };
    for (ci, it) in chunk.iter().enumerate() {
        for l in it.labels {
            let mi = match motifs.get_key_value(&l.motif) {
                Some((k, m)) => *local.entry(k).or_insert_with(|| {
                    out.motifs.push(m);
                    out.motifs.len() - 1
                }),
                None => return Err(Error::UnknownMotif(l.motif.0.clone())),
            };
            out.pairs.push((ci, mi));
            out.y.push(l.y);
            out.w.push(l.w);
        }
    }
    Ok(out)
}

/// Baseline probabilities over `vocab` for each example, fixed during training.
pub struct NegativeSource<'a> {
    pub vocab: &'a Vocabulary,
    pub dists: Vec<Categorical>,
}

impl<'a> NegativeSource<'a> {
    /// Context-free baseline shared by all examples.
    pub fn context_free(vocab: &'a Vocabulary, weights: &[f64], n_examples: usize) -> Result<Self> {
        let d = Categorical::new(weights).ok_or_else(|| Error::Degenerate("baseline has no mass".into()))?;
        Ok(NegativeSource {
            vocab,
            dists: vec![d; n_examples],
        })
    }

    pub fn per_example(vocab: &'a Vocabulary, weights: Vec<Vec<f64>>) -> Result<Self> {
        let dists = weights
            .iter()
            .map(|w| Categorical::new(w).ok_or_else(|| Error::Degenerate("baseline has no mass".into())))
            .collect::<Result<_>>()?;
        Ok(NegativeSource { vocab, dists })
    }

    /// Labelled pairs for example `i`, or `None` when no negative distinct
    /// from the truth exists.
    pub fn labels(&self, i: usize, truth: &MotifKey, k: usize, rng: &mut crate::rng::Rng) -> Option<Vec<PairLabel>> {
        let dist = &self.dists[i];
        let t_idx = self.vocab.index_of(truth);
        let b_t = t_idx.map_or(0.0, |j| dist.prob(j));
        let negs = match draw_negatives(dist, t_idx, k, rng) {
            Ok(n) => n,
            Err(_) => return None,
        };
        let mut out = Vec::with_capacity(k + 2);
        out.push(PairLabel {
            motif: truth.clone(),
            y: 1.0,
            w: 1.0,
        });
        if b_t > 0.0 {
            out.push(PairLabel {
                motif: truth.clone(),
                y: 0.0,
                w: b_t,
            });
        }
        let w = (1.0 - b_t) / k as f64;
        for j in negs {
            out.push(PairLabel {
                motif: self.vocab.entry(j).key.clone(),
                y: 0.0,
                w,
            });
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Mean per-example loss.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub skipped_examples: usize,
}

fn labelled<E: HasStep>(
    examples: &[E],
    neg: &NegativeSource<'_>,
    k: usize,
    seed: u64,
    stream: u64,
) -> (Vec<(usize, Vec<PairLabel>)>, usize) {
    let mut skipped = 0;
    let mut out = Vec::with_capacity(examples.len());
    for (i, e) in examples.iter().enumerate() {
        let mut rng = crate::rng::derive(seed, &[0x7EA1, stream, i as u64]);
        match neg.labels(i, &e.step().true_motif, k, &mut rng) {
            Some(l) => out.push((i, l)),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

/// Loss and gradient over `items`, summed over fixed-size chunks in order.
fn loss_and_grad<M: ContrastiveModel>(
    model: &M,
    motifs: &MotifTable,
    examples: &[M::Example],
    items: &[&(usize, Vec<PairLabel>)],
    chunk_size: usize,
    nonce: Option<(u64, u64)>,
) -> Result<(f64, Option<Grads>)> {
    let with_grad = nonce.is_some();
    let ps = model.params();
    let parts: Vec<Result<(f64, Option<Grads>)>> = items
        .par_chunks(chunk_size)
        .map(|chunk| {
            let pairs: Vec<Item<'_, M::Example>> = chunk
                .iter()
                .map(|(i, l)| Item {
                    example: &examples[*i],
                    labels: l.as_slice(),
                    nonce: nonce.map(|(seed, epoch)| {
                        use rand::Rng as _;
                        crate::rng::derive(seed, &[0xA06, epoch, *i as u64]).random()
                    }),
                })
                .collect();
            let mut t = Tape::new();
            let out = model.chunk_loss(&mut t, ps, motifs, &pairs)?;
            let l = t.value(out).item();
            let g = with_grad.then(|| t.param_grads(out, ps));
            Ok((l, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<Grads> = None;
    for p in parts {
        let (l, g) = p?;
        total += l;
        if let Some(g) = g {
            grads = Some(match grads {
                Some(acc) => acc.add(&g),
                None => g,
            });
        }
    }
    Ok((total, grads))
}

/// Mean held-out loss with fixed negatives.
pub fn evaluate_loss<M: ContrastiveModel>(
    model: &M,
    motifs: &MotifTable,
    examples: &[M::Example],
    neg: &NegativeSource<'_>,
    k: usize,
    seed: u64,
    chunk_size: usize,
) -> Result<f64> {
    let (items, _) = labelled(examples, neg, k, seed, u64::MAX);
    if items.is_empty() {
        return Ok(f64::NAN);
    }
    let refs: Vec<&(usize, Vec<PairLabel>)> = items.iter().collect();
    let (l, _) = loss_and_grad(model, motifs, examples, &refs, chunk_size, None)?;
    Ok(l / items.len() as f64)
}

/// Adam on the mean per-example loss. With patience set, stops once the
/// held-out loss has not improved for that many epochs and restores the
/// best parameters.
#[allow(clippy::too_many_arguments)]
pub fn train<M: ContrastiveModel>(
    model: &mut M,
    motifs: &MotifTable,
    train_set: &[M::Example],
    train_neg: &NegativeSource<'_>,
    val_set: &[M::Example],
    val_neg: &NegativeSource<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut opt = Adam::new(cfg.adam, model.params());
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, model.params().clone(), 0usize);
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        let (mut items, skipped) = labelled(train_set, train_neg, cfg.k_neg, seed, epoch as u64);
        report.skipped_examples = skipped;
        if items.is_empty() {
            return Err(Error::Degenerate("every example lacks a valid negative".into()));
        }
        items.shuffle(&mut crate::rng::derive(seed, &[0x5F1E, epoch as u64]));
        let bs = if cfg.batch_size == 0 { items.len() } else { cfg.batch_size };
        let mut epoch_loss = 0.0;
        for batch in items.chunks(bs) {
            let refs: Vec<&(usize, Vec<PairLabel>)> = batch.iter().collect();
            let (l, g) = loss_and_grad(model, motifs, train_set, &refs, cfg.chunk_size, Some((seed, epoch as u64)))?;
            let mut g = g.expect("gradients requested");
            if !l.is_finite() || !g.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            g.scale(1.0 / batch.len() as f64);
            opt.update(model.params_mut(), &g);
            model.invalidate();
            epoch_loss += l;
        }
        report.train_loss.push(epoch_loss / items.len() as f64);
        report.epochs_run = epoch + 1;
        let val = if val_set.is_empty() {
            report.train_loss[epoch]
        } else {
            evaluate_loss(model, motifs, val_set, val_neg, cfg.k_neg, seed, cfg.chunk_size)?
        };
        report.val_loss.push(val);
        log::info!("epoch {epoch}: train {:.5} held-out {val:.5}", report.train_loss[epoch]);
        if let Some(patience) = cfg.patience {
            if val < best.0 {
                best = (val, model.params().clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    if cfg.patience.is_some() && best.0.is_finite() {
        *model.params_mut() = best.1;
        model.invalidate();
        report.best_epoch = best.2;
    } else {
        report.best_epoch = report.epochs_run - 1;
    }
    Ok(report)
}
