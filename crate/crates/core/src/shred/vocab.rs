use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{shred_with_rng, Motif, MotifKey, ShredPolicy};
use crate::error::{Error, Result};
use crate::molio::MolGraph;
use crate::recon::sample_pathway;
use crate::sampling::Categorical;

#[derive(Debug, Clone, PartialEq)]
pub struct VocabEntry {
    pub key: MotifKey,
    pub motif: Motif,
    pub smiles: String,
    pub count: u64,
}

/// Motif frequency table. Entries are ordered by descending count, then key;
/// that order is the fixed ordering used for sampling.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<MotifKey, usize>,
    total: u64,
    sampler: Categorical,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    total: u64,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    key: String,
    smiles: String,
    attachment: usize,
    count: u64,
}

/// Counts keyed by motif, with one canonical exemplar each.
pub type MotifCounts = BTreeMap<MotifKey, (Motif, u64)>;

impl Vocabulary {
    pub fn from_counts(counts: MotifCounts) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut entries = Vec::with_capacity(counts.len());
        for (key, (motif, count)) in counts {
            if count == 0 {
                continue;
            }
            let canon = motif.canonical();
            let (smiles, att) = canon.to_smiles()?;
            let exemplar = Motif::from_smiles(&smiles, att)?;
            debug_assert_eq!(exemplar.key(), key);
            entries.push(VocabEntry {
                key,
                motif: exemplar,
                smiles,
                count,
            });
        }
        Self::from_entries(entries)
    }

    fn from_entries(mut entries: Vec<VocabEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
        let index = entries.iter().enumerate().map(|(i, e)| (e.key.clone(), i)).collect();
        let total = entries.iter().map(|e| e.count).sum();
        let weights: Vec<f64> = entries.iter().map(|e| e.count as f64).collect();
        let sampler = Categorical::new(&weights).expect("positive counts");
        let mut v = Vocabulary {
            entries,
            index,
            total,
            sampler,
            fingerprint: String::new(),
        };
        let mut h = Sha256::new();
        h.update(v.to_json().as_bytes());
        v.fingerprint = hex::encode(&h.finalize()[..16]);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &VocabEntry {
        &self.entries[i]
    }

    pub fn index_of(&self, key: &MotifKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn get(&self, key: &MotifKey) -> Option<&VocabEntry> {
        self.index_of(key).map(|i| &self.entries[i])
    }

    /// p(v) = f(v) / Σf
    pub fn p(&self, i: usize) -> f64 {
        self.entries[i].count as f64 / self.total as f64
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.p(i)).collect()
    }

    pub fn p_of(&self, key: &MotifKey) -> f64 {
        self.index_of(key).map_or(0.0, |i| self.p(i))
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    pub fn sample_1d<R: Rng + ?Sized>(&self, rng: &mut R) -> &MotifKey {
        &self.entries[self.sample_index(rng)].key
    }

    /// Fraction of total count carried by the `k` most frequent motifs.
    pub fn top_k_mass(&self, k: usize) -> f64 {
        self.entries.iter().take(k).map(|e| e.count).sum::<u64>() as f64 / self.total as f64
    }

    /// Content hash of the serialized table.
    pub fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    pub fn to_json(&self) -> String {
        let f = VocabFile {
            total: self.total,
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    key: e.key.0.clone(),
                    smiles: e.smiles.clone(),
                    attachment: e.motif.attachment,
                    count: e.count,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&f).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(s)?;
        let mut entries = Vec::with_capacity(f.entries.len());
        for e in f.entries {
            let motif = Motif::from_smiles(&e.smiles, e.attachment)?;
            let key = motif.key();
            if key.0 != e.key {
                return Err(Error::Fingerprint(format!(
                    "entry {} re-keys to {key} from its SMILES",
                    e.key
                )));
            }
            if e.count == 0 {
                return Err(Error::Config(format!("entry {} has zero count", e.key)));
            }
            entries.push(VocabEntry {
                key,
                motif,
                smiles: e.smiles,
                count: e.count,
            });
        }
        let v = Self::from_entries(entries)?;
        if v.total != f.total {
            return Err(Error::Config(format!("total {} != sum of counts {}", f.total, v.total)));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Vocabulary over the union of keys with `other` counts added.
    pub fn merged_counts(&self) -> MotifCounts {
        self.entries
            .iter()
            .map(|e| (e.key.clone(), (e.motif.clone(), e.count)))
            .collect()
    }
}

fn merge(mut a: MotifCounts, b: MotifCounts) -> MotifCounts {
    for (k, (m, c)) in b {
        a.entry(k).and_modify(|e| e.1 += c).or_insert((m, c));
    }
    a
}

/// Counts the seed motif and every added motif of one sampled pathway per
/// pass. Molecules that cannot be shredded are skipped with a warning.
/// Each (molecule, pass) draws from its own stream, so the result does not
/// depend on the worker count.
pub fn count_motifs(corpus: &[MolGraph], policy: &ShredPolicy, n_shreds_per_mol: usize) -> Result<MotifCounts> {
    policy.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counts = corpus
        .par_iter()
        .enumerate()
        .map(|(mi, g)| {
            let mut local = MotifCounts::new();
            for pass in 0..n_shreds_per_mol {
                let mut rng = crate::rng::derive(policy.rng_seed, &[0x5EED, mi as u64, pass as u64]);
                let res = shred_with_rng(g, policy, &mut rng).and_then(|sh| {
                    let p = sample_pathway(g, &sh, &mut rng)?;
                    let mut found = Vec::new();
                    if let Some(a) = p.seed_attachment {
                        found.push(sh.motif(g, p.seed_part, a)?);
                    }
                    for s in &p.steps {
                        found.push(sh.motif(g, s.part, s.motif_atom)?);
                    }
                    Ok(found)
                });
                match res {
                    Ok(found) => {
                        for m in found {
                            local.entry(m.key()).and_modify(|e| e.1 += 1).or_insert((m, 1));
                        }
                    }
                    Err(e) => {
                        log::warn!("molecule {mi} skipped: {e}");
                        break;
                    }
                }
            }
            local
        })
        .reduce(MotifCounts::new, merge);
    // exemplars may differ by atom order between shards; canonicalize
    Ok(counts.into_iter().map(|(k, (m, c))| (k, (m.canonical(), c))).collect())
}

pub fn build_vocabulary(corpus: &[MolGraph], policy: &ShredPolicy, n_shreds_per_mol: usize) -> Result<Vocabulary> {
    Vocabulary::from_counts(count_motifs(corpus, policy, n_shreds_per_mol)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub key: MotifKey,
    pub p_a: f64,
    pub p_b: f64,
    /// p_a / p_b; infinite when the key is absent from `b`, zero when absent from `a`.
    pub ratio: f64,
}

/// Rows for the union of keys, ordered by key.
pub fn vocabulary_shift(va: &Vocabulary, vb: &Vocabulary) -> Vec<ShiftRow> {
    let mut keys: Vec<&MotifKey> = va.entries.iter().chain(vb.entries.iter()).map(|e| &e.key).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let p_a = va.p_of(k);
            let p_b = vb.p_of(k);
            let ratio = if p_b == 0.0 { f64::INFINITY } else { p_a / p_b };
            ShiftRow {
                key: k.clone(),
                p_a,
                p_b,
                ratio,
            }
        })
        .collect()
}

/// Frequent motifs whose probability shifts by more than a factor of two.
pub fn shift_filter(row: &ShiftRow) -> bool {
    row.p_a.max(row.p_b) > 0.002 && (row.ratio > 2.0 || row.ratio < 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molio::parse_smiles;

    fn vocab(smiles: &[&str]) -> Vocabulary {
        let corpus: Vec<MolGraph> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
        build_vocabulary(&corpus, &ShredPolicy::default(), 1).unwrap()
    }

    #[test]
    fn methane_vocabulary() {
        let v = vocab(&["C"]);
        assert_eq!(v.len(), 1);
        assert_eq!(v.p(0), 1.0);
    }

    #[test]
    fn toluene_vocabulary() {
        let v = vocab(&["Cc1ccccc1"]);
        assert_eq!(v.len(), 2);
        assert_eq!(v.probs(), vec![0.5, 0.5]);
    }

    #[test]
    fn json_round_trip() {
        let v = vocab(&["CCOc1ccccc1", "OC(=O)c1ccncc1", "CCN(CC)CC"]);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back.entries(), v.entries());
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            build_vocabulary(&[], &ShredPolicy::default(), 1),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn self_shift_is_unity() {
        let v = vocab(&["CCOc1ccccc1", "CCN(CC)CC"]);
        for r in vocabulary_shift(&v, &v) {
            assert_eq!(r.ratio, 1.0);
        }
        let w = vocab(&["c1ccncc1"]);
        for r in vocabulary_shift(&v, &w) {
            assert!(r.ratio == 0.0 || r.ratio.is_infinite());
        }
    }
}
