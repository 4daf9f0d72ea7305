//! Stochastic shredding into ring-system and chain motifs, canonical motif
//! keys and the frequency vocabulary.

mod canon;
mod vocab;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use canon::{canonical_hash, canonical_labels};
pub use vocab::{
    build_vocabulary, count_motifs, shift_filter, vocabulary_shift, MotifCounts, ShiftRow, VocabEntry, Vocabulary,
};

use crate::error::{Error, Result};
use crate::molio::{find_isomorphism, parse_smiles, write_smiles, BondOrder, Element, MolGraph, Role};
use crate::sampling::Categorical;

pub const MAX_MOTIF_ATOMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShredPolicy {
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_radius")]
    pub max_radius: u32,
    #[serde(default = "default_directional")]
    pub directional_prob: f64,
}

fn default_radius() -> u32 {
    2
}

fn default_directional() -> f64 {
    0.5
}

impl Default for ShredPolicy {
    fn default() -> Self {
        ShredPolicy {
            rng_seed: 0,
            max_radius: default_radius(),
            directional_prob: default_directional(),
        }
    }
}

impl ShredPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.directional_prob) {
            return Err(Error::Config(format!(
                "directional_prob {} outside [0, 1]",
                self.directional_prob
            )));
        }
        Ok(())
    }

    /// Identity of the shredding rules, independent of the seed.
    pub fn fingerprint(&self) -> String {
        format!(
            "shred:r{}:d{}:cap{}:exo=O",
            self.max_radius, self.directional_prob, MAX_MOTIF_ATOMS
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotifKey(pub String);

impl fmt::Display for MotifKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A fragment with its designated attachment atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Motif {
    pub graph: MolGraph,
    pub attachment: usize,
}

impl Motif {
    pub fn new(graph: MolGraph, attachment: usize) -> Result<Self> {
        if attachment >= graph.n_atoms() {
            return Err(crate::molio::MolError::IndexOutOfRange {
                index: attachment,
                len: graph.n_atoms(),
            }
            .into());
        }
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        if graph.open_valence(attachment) == 0 {
            return Err(crate::molio::MolError::NoOpenValence { atom: attachment }.into());
        }
        Ok(Motif {
            graph: graph.with_role(Role::Motif).without_coords(),
            attachment,
        })
    }

    pub fn key(&self) -> MotifKey {
        MotifKey(canonical_hash(&self.graph, Some(self.attachment)))
    }

    /// The isomorphic motif with atoms in canonical order.
    pub fn canonical(&self) -> Motif {
        let labels = canonical_labels(&self.graph, Some(self.attachment));
        let mut perm = vec![0; labels.len()];
        for (old, &new) in labels.iter().enumerate() {
            perm[new] = old;
        }
        Motif {
            graph: self.graph.permuted(&perm),
            attachment: labels[self.attachment],
        }
    }

    /// SMILES plus the attachment index in the SMILES atom order.
    pub fn to_smiles(&self) -> Result<(String, usize)> {
        let s = write_smiles(&self.graph)?;
        let back = parse_smiles(&s)?.with_role(Role::Motif);
        let m = find_isomorphism(&self.graph, &back, None)
            .ok_or_else(|| Error::Fingerprint(format!("motif SMILES {s} does not round-trip")))?;
        Ok((s, m[self.attachment]))
    }

    pub fn from_smiles(smiles: &str, attachment: usize) -> Result<Self> {
        Motif::new(parse_smiles(smiles)?, attachment)
    }

    pub fn n_atoms(&self) -> usize {
        self.graph.n_atoms()
    }
}

/// A covalent link between two shredded parts of the source molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifEdge {
    pub parts: (usize, usize),
    /// Source-molecule atoms, `atoms.0` in `parts.0`.
    pub atoms: (usize, usize),
    pub order: BondOrder,
    pub bond: usize,
}

/// Partition of a molecule's heavy atoms into motifs plus the cut bonds.
#[derive(Debug, Clone, PartialEq)]
pub struct Shredding {
    /// Sorted source-atom indices per part; ring systems come first.
    pub parts: Vec<Vec<usize>>,
    pub is_ring: Vec<bool>,
    pub atom_part: Vec<usize>,
    pub edges: Vec<MotifEdge>,
}

impl Shredding {
    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    /// `m[i][j]` is the index of the edge linking parts `i` and `j`.
    pub fn adjacency_matrix(&self) -> Vec<Vec<Option<usize>>> {
        let n = self.parts.len();
        let mut m = vec![vec![None; n]; n];
        for (k, e) in self.edges.iter().enumerate() {
            m[e.parts.0][e.parts.1] = Some(k);
            m[e.parts.1][e.parts.0] = Some(k);
        }
        m
    }

    /// Graph of one part with cut bonds capped by hydrogens.
    pub fn part_graph(&self, g: &MolGraph, part: usize) -> Result<MolGraph> {
        Ok(g.induced_subgraph(&self.parts[part], Role::Motif)?)
    }

    /// The part as a motif attached through source atom `atom`.
    pub fn motif(&self, g: &MolGraph, part: usize, atom: usize) -> Result<Motif> {
        let local = self.parts[part]
            .binary_search(&atom)
            .map_err(|_| Error::InvalidAtom {
                atom,
                reason: format!("not in part {part}"),
            })?;
        Motif::new(self.part_graph(g, part)?, local)
    }
}

/// Shreds with a stream seeded from the policy.
pub fn shred(g: &MolGraph, policy: &ShredPolicy) -> Result<Shredding> {
    let mut rng = crate::rng::seeded(policy.rng_seed);
    shred_with_rng(g, policy, &mut rng)
}

pub fn shred_with_rng<R: Rng + ?Sized>(g: &MolGraph, policy: &ShredPolicy, rng: &mut R) -> Result<Shredding> {
    let n = g.n_atoms();
    let mut atom_part = vec![usize::MAX; n];
    let mut parts: Vec<Vec<usize>> = Vec::new();
    let mut is_ring = Vec::new();

    // ring systems: components over in-ring bonds
    let in_ring_atom: Vec<bool> = (0..n)
        .map(|i| g.neighbors(i).iter().any(|&(_, bi)| g.bonds()[bi].in_ring))
        .collect();
    for s in 0..n {
        if !in_ring_atom[s] || atom_part[s] != usize::MAX {
            continue;
        }
        let id = parts.len();
        let mut members = vec![s];
        atom_part[s] = id;
        let mut k = 0;
        while k < members.len() {
            let u = members[k];
            k += 1;
            for &(v, bi) in g.neighbors(u) {
                if g.bonds()[bi].in_ring && atom_part[v] == usize::MAX {
                    atom_part[v] = id;
                    members.push(v);
                }
            }
        }
        parts.push(members);
        is_ring.push(true);
    }
    // exocyclic =O stays on its ring
    for b in g.bonds() {
        if b.in_ring || b.order != BondOrder::Double {
            continue;
        }
        for (o, r) in [(b.a, b.b), (b.b, b.a)] {
            if g.atom(o).element == Element::O && g.degree(o) == 1 && in_ring_atom[r] {
                atom_part[o] = atom_part[r];
                parts[atom_part[r]].push(o);
            }
        }
    }

    // chains
    let chain = |i: usize, atom_part: &[usize]| atom_part[i] == usize::MAX;
    loop {
        let eligible: Vec<usize> = (0..n).filter(|&i| chain(i, &atom_part)).collect();
        if eligible.is_empty() {
            break;
        }
        let weights: Vec<f64> = eligible
            .iter()
            .map(|&i| (g.degree(i) as u32 + g.explicit_valence(i)) as f64)
            .collect();
        let sampler = Categorical::new(&weights).unwrap_or_else(|| Categorical::new(&vec![1.0; eligible.len()]).unwrap());
        let seed = eligible[sampler.sample(rng)];
        let radius = rng.random_range(0..=policy.max_radius);
        let directional = rng.random::<f64>() < policy.directional_prob;

        let id = parts.len();
        let mut members = vec![seed];
        atom_part[seed] = id;
        let open = |u: usize, atom_part: &[usize]| -> Vec<usize> {
            let mut v: Vec<usize> = g
                .neighbors(u)
                .iter()
                .map(|&(v, _)| v)
                .filter(|&v| chain(v, atom_part))
                .collect();
            v.sort_unstable();
            v
        };
        let mut frontier = vec![seed];
        for shell in 0..radius {
            let next: Vec<usize> = if directional && shell == 0 {
                let cands = open(seed, &atom_part);
                if cands.is_empty() {
                    Vec::new()
                } else {
                    vec![cands[rng.random_range(0..cands.len())]]
                }
            } else {
                let mut nx = Vec::new();
                for &u in &frontier {
                    for v in open(u, &atom_part) {
                        if !nx.contains(&v) {
                            nx.push(v);
                        }
                    }
                }
                nx
            };
            if next.is_empty() {
                break;
            }
            for &v in &next {
                atom_part[v] = id;
                members.push(v);
            }
            frontier = next;
        }
        parts.push(members);
        is_ring.push(false);
    }

    for p in parts.iter_mut() {
        p.sort_unstable();
        if p.len() > MAX_MOTIF_ATOMS {
            return Err(Error::MotifTooLarge {
                size: p.len(),
                cap: MAX_MOTIF_ATOMS,
            });
        }
    }
    let edges = g
        .bonds()
        .iter()
        .enumerate()
        .filter(|(_, b)| atom_part[b.a] != atom_part[b.b])
        .map(|(bi, b)| MotifEdge {
            parts: (atom_part[b.a], atom_part[b.b]),
            atoms: (b.a, b.b),
            order: b.order,
            bond: bi,
        })
        .collect();
    Ok(Shredding {
        parts,
        is_ring,
        atom_part,
        edges,
    })
}
