//! Reconstruction pathways over shredded molecules and per-step examples.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molio::{BondOrder, MolGraph, Role};
use crate::sampling::Categorical;
use crate::shred::{shred_with_rng, Motif, MotifKey, ShredPolicy, Shredding, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub part: usize,
    /// Source atom already on the core.
    pub core_atom: usize,
    /// Source atom of the added part bonded to `core_atom`.
    pub motif_atom: usize,
    pub order: BondOrder,
    pub motif: MotifKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pathway {
    pub seed_part: usize,
    /// Source atom carrying the seed's attachment; `None` for a lone part
    /// without any hydrogen.
    pub seed_attachment: Option<usize>,
    pub seed_motif: Option<MotifKey>,
    pub steps: Vec<PathStep>,
}

/// Seed uniform over parts; each step attaches a part chosen uniformly among
/// those bonded to the current core.
pub fn sample_pathway<R: Rng + ?Sized>(g: &MolGraph, sh: &Shredding, rng: &mut R) -> Result<Pathway> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = sh.n_parts();
    let seed_part = rng.random_range(0..n);
    let mut placed = vec![false; n];
    placed[seed_part] = true;
    let mut steps = Vec::with_capacity(n - 1);
    loop {
        let frontier: Vec<(usize, usize, usize, BondOrder)> = sh
            .edges
            .iter()
            .filter_map(|e| match (placed[e.parts.0], placed[e.parts.1]) {
                (true, false) => Some((e.parts.1, e.atoms.0, e.atoms.1, e.order)),
                (false, true) => Some((e.parts.0, e.atoms.1, e.atoms.0, e.order)),
                _ => None,
            })
            .collect();
        if frontier.is_empty() {
            break;
        }
        let (part, core_atom, motif_atom, order) = frontier[rng.random_range(0..frontier.len())];
        placed[part] = true;
        let motif = sh.motif(g, part, motif_atom)?.key();
        steps.push(PathStep {
            part,
            core_atom,
            motif_atom,
            order,
            motif,
        });
    }
    let seed_attachment = match steps.first() {
        Some(s) => Some(s.core_atom),
        None => {
            let open: Vec<usize> = sh.parts[seed_part]
                .iter()
                .copied()
                .filter(|&i| g.atom(i).n_hydrogens > 0)
                .collect();
            (!open.is_empty()).then(|| open[rng.random_range(0..open.len())])
        }
    };
    let seed_motif = match seed_attachment {
        Some(a) => Some(sh.motif(g, seed_part, a)?.key()),
        None => None,
    };
    Ok(Pathway {
        seed_part,
        seed_attachment,
        seed_motif,
        steps,
    })
}

/// Rebuilds the molecule by attaching parts in pathway order.
pub fn replay(p: &Pathway, sh: &Shredding, g: &MolGraph) -> Result<MolGraph> {
    let mut local = vec![usize::MAX; g.n_atoms()];
    let seed_atoms = &sh.parts[p.seed_part];
    for (k, &a) in seed_atoms.iter().enumerate() {
        local[a] = k;
    }
    let mut core = sh.part_graph(g, p.seed_part)?;
    for s in &p.steps {
        let part = sh.part_graph(g, s.part)?;
        let off = core.n_atoms();
        let m_local = sh.parts[s.part].binary_search(&s.motif_atom).expect("motif atom in part");
        core = core.attach(local[s.core_atom], &part, m_local, s.order)?;
        for (k, &a) in sh.parts[s.part].iter().enumerate() {
            local[a] = off + k;
        }
    }
    Ok(core.with_role(Role::Ligand))
}

/// One elaboration example: grow `core` at `growth_atom` by `true_motif`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionStep {
    pub core: MolGraph,
    /// Source atom index of each core atom.
    pub core_atoms: Vec<usize>,
    pub growth_atom: usize,
    pub true_motif: MotifKey,
    /// Source atoms of the ground-truth motif (for pose-based splits).
    pub true_motif_atoms: Vec<usize>,
    pub true_bond_order: BondOrder,
    pub negatives: Vec<MotifKey>,
    pub complex_ref: Option<String>,
}

/// One step per added part; cores are induced subgraphs of the source and
/// keep its coordinates.
pub fn steps_from_pathway(
    p: &Pathway,
    sh: &Shredding,
    g: &MolGraph,
    complex_ref: Option<&str>,
) -> Result<Vec<ReconstructionStep>> {
    let mut core_atoms: Vec<usize> = sh.parts[p.seed_part].clone();
    let mut out = Vec::with_capacity(p.steps.len());
    for s in &p.steps {
        let core = g.induced_subgraph(&core_atoms, Role::Ligand)?;
        let growth_atom = core_atoms.iter().position(|&a| a == s.core_atom).expect("core atom placed");
        out.push(ReconstructionStep {
            core,
            core_atoms: core_atoms.clone(),
            growth_atom,
            true_motif: s.motif.clone(),
            true_motif_atoms: sh.parts[s.part].clone(),
            true_bond_order: s.order,
            negatives: Vec::new(),
            complex_ref: complex_ref.map(str::to_string),
        });
        core_atoms.extend_from_slice(&sh.parts[s.part]);
    }
    Ok(out)
}

/// Motif graphs by key, covering every key a set of steps refers to.
pub type MotifTable = BTreeMap<MotifKey, Motif>;

/// Training or evaluation examples together with the motifs they mention.
#[derive(Debug, Clone, Default)]
pub struct StepSet {
    pub steps: Vec<ReconstructionStep>,
    pub motifs: MotifTable,
}

impl StepSet {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Adds every vocabulary motif to the table.
    pub fn register_vocabulary(&mut self, v: &Vocabulary) {
        for e in v.entries() {
            self.motifs.entry(e.key.clone()).or_insert_with(|| e.motif.clone());
        }
    }

    pub fn motif(&self, key: &MotifKey) -> Result<&Motif> {
        self.motifs.get(key).ok_or_else(|| Error::UnknownMotif(key.0.clone()))
    }
}

/// Shreds each molecule `n_paths` times and collects the steps of one
/// sampled pathway per shredding. Molecules that fail are skipped with a
/// warning. `refs[i]` becomes the `complex_ref` of molecule `i`'s steps.
pub fn corpus_steps(
    corpus: &[MolGraph],
    refs: Option<&[String]>,
    policy: &ShredPolicy,
    n_paths: usize,
    seed: u64,
) -> Result<StepSet> {
    policy.validate()?;
    if let Some(r) = refs {
        assert_eq!(r.len(), corpus.len(), "one reference per molecule");
    }
    let per_mol: Vec<(Vec<ReconstructionStep>, Vec<Motif>)> = corpus
        .par_iter()
        .enumerate()
        .map(|(mi, g)| {
            let mut steps = Vec::new();
            let mut motifs = Vec::new();
            for pass in 0..n_paths {
                let mut rng = crate::rng::derive(seed, &[0x57E9, mi as u64, pass as u64]);
                let res = shred_with_rng(g, policy, &mut rng).and_then(|sh| {
                    let p = sample_pathway(g, &sh, &mut rng)?;
                    let st = steps_from_pathway(&p, &sh, g, refs.map(|r| r[mi].as_str()))?;
                    let ms = p
                        .steps
                        .iter()
                        .map(|s| sh.motif(g, s.part, s.motif_atom))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((st, ms))
                });
                match res {
                    Ok((st, ms)) => {
                        steps.extend(st);
                        motifs.extend(ms);
                    }
                    Err(e) => {
                        log::warn!("molecule {mi} skipped: {e}");
                        break;
                    }
                }
            }
            (steps, motifs)
        })
        .collect();
    let mut out = StepSet::default();
    for (st, ms) in per_mol {
        out.steps.extend(st);
        for m in ms {
            out.motifs.entry(m.key()).or_insert_with(|| m.canonical());
        }
    }
    Ok(out)
}

pub const MAX_REJECTIONS: usize = 100;

/// Draws `k` indices from `dist`, rejecting `truth`. Each draw gets at most
/// [`MAX_REJECTIONS`] attempts.
pub fn draw_negatives<R: Rng + ?Sized>(
    dist: &Categorical,
    truth: Option<usize>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut got = None;
        for _ in 0..MAX_REJECTIONS {
            let i = dist.sample(rng);
            if Some(i) != truth {
                got = Some(i);
                break;
            }
        }
        match got {
            Some(i) => out.push(i),
            None => {
                return Err(Error::Degenerate(format!(
                    "no negative distinct from the truth after {MAX_REJECTIONS} draws"
                )))
            }
        }
    }
    Ok(out)
}

/// A generative model over a vocabulary that can serve as a contrastive baseline.
pub trait Baseline {
    fn vocabulary(&self) -> &Vocabulary;
    /// Unnormalized weights over vocabulary entries for this step's context.
    fn weights(&self, step: &ReconstructionStep) -> Result<Vec<f64>>;
}

/// The context-free frequency model.
pub struct FrequencyBaseline<'a>(pub &'a Vocabulary);

impl Baseline for FrequencyBaseline<'_> {
    fn vocabulary(&self) -> &Vocabulary {
        self.0
    }

    fn weights(&self, _step: &ReconstructionStep) -> Result<Vec<f64>> {
        Ok(self.0.probs())
    }
}

/// The uniform model over the vocabulary.
pub struct UniformBaseline<'a>(pub &'a Vocabulary);

impl Baseline for UniformBaseline<'_> {
    fn vocabulary(&self) -> &Vocabulary {
        self.0
    }

    fn weights(&self, _step: &ReconstructionStep) -> Result<Vec<f64>> {
        Ok(vec![1.0; self.0.len()])
    }
}

pub fn sample_negatives<R: Rng + ?Sized>(
    step: &ReconstructionStep,
    baseline: &dyn Baseline,
    vocab: &Vocabulary,
    k: usize,
    rng: &mut R,
) -> Result<Vec<MotifKey>> {
    if baseline.vocabulary().fingerprint() != vocab.fingerprint() {
        return Err(Error::VocabularyMismatch {
            expected: vocab.fingerprint(),
            found: baseline.vocabulary().fingerprint(),
        });
    }
    if k == 0 {
        return Err(Error::Config("negatives per positive must be at least 1".into()));
    }
    let w = baseline.weights(step)?;
    let dist = Categorical::new(&w).ok_or_else(|| Error::Degenerate("baseline has no mass".into()))?;
    let truth = vocab.index_of(&step.true_motif);
    Ok(draw_negatives(&dist, truth, k, rng)?
        .into_iter()
        .map(|i| vocab.entry(i).key.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molio::{is_isomorphic, parse_smiles};
    use crate::shred::{shred, ShredPolicy};

    #[test]
    fn single_motif_has_no_steps() {
        let g = parse_smiles("c1ccccc1").unwrap();
        let sh = shred(&g, &ShredPolicy::default()).unwrap();
        let p = sample_pathway(&g, &sh, &mut crate::rng::seeded(0)).unwrap();
        assert!(p.steps.is_empty());
        assert!(p.seed_motif.is_some());
        assert!(steps_from_pathway(&p, &sh, &g, None).unwrap().is_empty());
    }

    #[test]
    fn toluene_from_ring_seed() {
        let g = parse_smiles("Cc1ccccc1").unwrap();
        let sh = shred(&g, &ShredPolicy::default()).unwrap();
        let mut rng = crate::rng::seeded(0);
        let p = loop {
            let p = sample_pathway(&g, &sh, &mut rng).unwrap();
            if p.seed_part == 0 {
                break p;
            }
        };
        let steps = steps_from_pathway(&p, &sh, &g, None).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].core.n_atoms(), 6);
        assert_eq!(steps[0].true_motif_atoms, vec![0]);
        assert!(is_isomorphic(&replay(&p, &sh, &g).unwrap(), &g));
    }

    #[test]
    fn rejection_gives_up_on_point_mass() {
        let d = Categorical::new(&[1.0, 0.0]).unwrap();
        let mut rng = crate::rng::seeded(0);
        assert!(matches!(draw_negatives(&d, Some(0), 3, &mut rng), Err(Error::Degenerate(_))));
        let d = Categorical::new(&[1.0, 1.0, 1.0]).unwrap();
        let neg = draw_negatives(&d, Some(1), 16, &mut rng).unwrap();
        assert_eq!(neg.len(), 16);
        assert!(neg.iter().all(|&i| i != 1));
    }
}
