//! Synthetic corpora and complexes with known construction, used by the
//! pipeline smoke run and by tests that need a planted signal.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gnn3d::{Example3D, Pocket};
use crate::molio::{
    add, cross, dot, embed_3d, norm, parse_smiles, random_rotation, rigid_transform, scale, sub, write_smiles, axis_angle,
    mat_vec, BondOrder, Complex, Element, MolGraph, Role, Vec3,
};
use crate::recon::{MotifTable, ReconstructionStep, StepSet};
use crate::sampling::Categorical;
use crate::shred::{canonical_hash, Motif, MotifCounts, MotifKey, Vocabulary};

/// Ring systems that seed a molecule; the name is the family tag.
pub const SCAFFOLDS: &[(&str, &str)] = &[
    ("benzene", "c1ccccc1"),
    ("pyridine", "c1ccncc1"),
    ("thiophene", "c1ccsc1"),
    ("furan", "c1ccoc1"),
    ("pyrimidine", "c1cncnc1"),
    ("naphthalene", "c1ccc2ccccc2c1"),
    ("indole", "c1ccc2[nH]ccc2c1"),
    ("cyclohexane", "C1CCCCC1"),
    ("piperidine", "C1CCNCC1"),
    ("morpholine", "C1COCCN1"),
    ("pyrrolidine", "C1CCNC1"),
    ("cyclopentane", "C1CCCC1"),
];

/// Substituents attached through their first atom, with relative weights.
pub const SUBSTITUENTS: &[(&str, f64)] = &[
    ("C", 10.0),
    ("CC", 4.0),
    ("F", 5.0),
    ("Cl", 4.0),
    ("Br", 1.0),
    ("O", 5.0),
    ("OC", 4.0),
    ("N", 4.0),
    ("C(=O)O", 3.0),
    ("C(=O)N", 3.0),
    ("C#N", 2.0),
    ("C(F)(F)F", 2.0),
    ("NC(C)=O", 2.0),
    ("CO", 2.0),
    ("S(C)(=O)=O", 1.0),
];

/// Linked ring groups attached through their first atom.
pub const RING_GROUPS: &[(&str, f64)] = &[
    ("c1ccccc1", 3.0),
    ("Cc1ccccc1", 3.0),
    ("Oc1ccccc1", 2.0),
    ("C(=O)Nc1ccccc1", 2.0),
    ("c1ccncc1", 2.0),
    ("CN1CCOCC1", 2.0),
    ("C1CC1", 2.0),
    ("N1CCCC1", 1.0),
    ("c1ccsc1", 1.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub graph: MolGraph,
    pub smiles: String,
    pub family: String,
}

/// Generator of drug-like molecules from scaffolds and substituents.
#[derive(Debug, Clone)]
pub struct MoleculeGenerator {
    scaffolds: Vec<(String, MolGraph)>,
    subs: Vec<(String, MolGraph)>,
    sub_dist: Categorical,
    rings: Vec<MolGraph>,
    ring_dist: Categorical,
}

fn parse_all(items: &[(&str, f64)]) -> Result<(Vec<(String, MolGraph)>, Vec<f64>)> {
    let mut g = Vec::new();
    let mut w = Vec::new();
    for &(s, wt) in items {
        g.push((s.to_string(), parse_smiles(s)?));
        w.push(wt);
    }
    Ok((g, w))
}

impl MoleculeGenerator {
    pub fn new() -> Result<Self> {
        Self::with_boost(None)
    }

    /// Multiplies the weight of one substituent by `factor`.
    pub fn with_boost(boost: Option<(&str, f64)>) -> Result<Self> {
        let scaffolds = SCAFFOLDS
            .iter()
            .map(|&(n, s)| Ok((n.to_string(), parse_smiles(s)?)))
            .collect::<Result<Vec<_>>>()?;
        let (subs, mut w) = parse_all(SUBSTITUENTS)?;
        if let Some((name, f)) = boost {
            let i = subs
                .iter()
                .position(|(s, _)| s == name)
                .ok_or_else(|| Error::Config(format!("unknown substituent {name}")))?;
            w[i] *= f;
        }
        let (rings, rw) = parse_all(RING_GROUPS)?;
        Ok(MoleculeGenerator {
            scaffolds,
            subs,
            sub_dist: Categorical::new(&w).expect("positive weights"),
            rings: rings.into_iter().map(|r| r.1).collect(),
            ring_dist: Categorical::new(&rw).expect("positive weights"),
        })
    }

    fn attach_random<R: Rng + ?Sized>(g: &MolGraph, frag: &MolGraph, rng: &mut R) -> Option<MolGraph> {
        let open: Vec<usize> = (0..g.n_atoms()).filter(|&i| g.atom(i).n_hydrogens > 0).collect();
        if open.is_empty() {
            return None;
        }
        let a = open[rng.random_range(0..open.len())];
        g.attach(a, frag, 0, BondOrder::Single).ok()
    }

    /// One molecule grown from a random scaffold by 1 to 4 additions.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CorpusEntry> {
        let (family, mut g) = self.scaffolds[rng.random_range(0..self.scaffolds.len())].clone();
        let n_add = rng.random_range(1..=4);
        let mut extra_ring = false;
        for _ in 0..n_add {
            let frag = if !extra_ring && rng.random::<f64>() < 0.3 {
                extra_ring = true;
                &self.rings[self.ring_dist.sample(rng)]
            } else {
                &self.subs[self.sub_dist.sample(rng)].1
            };
            if let Some(next) = Self::attach_random(&g, frag, rng) {
                g = next;
            }
        }
        let smiles = write_smiles(&g)?;
        Ok(CorpusEntry { graph: g, smiles, family })
    }

    /// `n` distinct molecules.
    pub fn corpus<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<CorpusEntry>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(n);
        let mut tries = 0;
        while out.len() < n {
            tries += 1;
            if tries > 100 * n.max(10) {
                return Err(Error::Degenerate("generator cannot produce enough distinct molecules".into()));
            }
            let e = self.sample(rng)?;
            if seen.insert(canonical_hash(&e.graph, None)) {
                out.push(e);
            }
        }
        Ok(out)
    }
}

/// `SMILES family` per line.
pub fn write_corpus(path: &Path, corpus: &[CorpusEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in corpus {
        writeln!(f, "{} {}", e.smiles, e.family)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `SMILES [family]` lines; blank and `#` lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        let smiles = it.next().unwrap_or_default().to_string();
        let graph = parse_smiles(&smiles).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let family = it.next().unwrap_or("none").to_string();
        out.push(CorpusEntry { graph, smiles, family });
    }
    Ok(out)
}

/// Two corpora from the same generator except that `motif` is drawn
/// `factor` times as often in the second.
pub fn planted_shift_corpora(
    n: usize,
    motif: &str,
    factor: f64,
    seed: u64,
) -> Result<(Vec<CorpusEntry>, Vec<CorpusEntry>)> {
    let a = MoleculeGenerator::new()?.corpus(n, &mut crate::rng::derive(seed, &[0xA]))?;
    let b = MoleculeGenerator::with_boost(Some((motif, factor)))?.corpus(n, &mut crate::rng::derive(seed, &[0xB]))?;
    Ok((a, b))
}

/// Side-chain SMILES by residue, polar residues first.
const POLAR_RESIDUES: &[&str] = &["CO", "C(C)O", "CC(=O)O", "CCCCN", "CC(=O)N"];
const APOLAR_RESIDUES: &[&str] = &["C", "CC(C)C", "Cc1ccccc1", "C(C)CC"];
const FILLER_RESIDUES: &[&str] = &["", "C", "CO"];

/// A short strand: the contact residue followed by filler residues. Returns
/// the graph and the index of the contact residue's last side-chain atom.
fn strand<R: Rng + ?Sized>(contact_side: &str, rng: &mut R) -> Result<(MolGraph, usize)> {
    let side_atoms = if contact_side.is_empty() {
        0
    } else {
        parse_smiles(contact_side)?.n_atoms()
    };
    let mut s = format!("NC({contact_side})C(=O)");
    for _ in 0..rng.random_range(1..=2) {
        let f = FILLER_RESIDUES[rng.random_range(0..FILLER_RESIDUES.len())];
        if f.is_empty() {
            s += "NCC(=O)";
        } else {
            s += &format!("NC({f})C(=O)");
        }
    }
    s += "O";
    let g = parse_smiles(&s)?.with_role(Role::Protein);
    Ok((g, 1 + side_atoms))
}

fn unit(v: Vec3) -> Vec3 {
    scale(v, 1.0 / norm(v).max(1e-12))
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ]
}

/// Rotation taking unit vector `a` onto unit vector `b`.
fn align(a: Vec3, b: Vec3) -> crate::molio::Mat3 {
    let c = dot(a, b).clamp(-1.0, 1.0);
    let axis = cross(a, b);
    if norm(axis) < 1e-9 {
        if c > 0.0 {
            return axis_angle([1.0, 0.0, 0.0], 0.0);
        }
        let perp = if a[0].abs() < 0.9 { cross(a, [1.0, 0.0, 0.0]) } else { cross(a, [0.0, 1.0, 0.0]) };
        return axis_angle(unit(perp), std::f64::consts::PI);
    }
    axis_angle(unit(axis), c.acos())
}

fn min_dist(points: &[Vec3], others: &[Vec3]) -> f64 {
    points
        .iter()
        .flat_map(|p| others.iter().map(move |q| norm(sub(*p, *q))))
        .fold(f64::INFINITY, f64::min)
}

/// Pocket strands around a posed ligand. Polar ligand atoms attract polar
/// side chains and apolar atoms apolar ones, so the pocket carries a
/// structural signal about the ligand.
fn build_pocket<R: Rng + ?Sized>(lig: &MolGraph, lx: &[Vec3], n_strands: usize, rng: &mut R) -> Result<(MolGraph, Vec<usize>)> {
    let centroid = scale(lx.iter().fold([0.0; 3], |a, b| add(a, *b)), 1.0 / lx.len() as f64);
    let mut protein: Option<MolGraph> = None;
    let mut px: Vec<Vec3> = Vec::new();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < n_strands && attempts < 40 * n_strands {
        attempts += 1;
        let li = rng.random_range(0..lx.len());
        let polar = matches!(lig.atom(li).element, Element::N | Element::O);
        let pool = if polar { POLAR_RESIDUES } else { APOLAR_RESIDUES };
        let side = pool[rng.random_range(0..pool.len())];
        let (g, contact) = strand(side, rng)?;
        let sx = embed_3d(&g, rng.random());
        let out_dir = unit(add(unit(sub(lx[li], centroid)), scale(gaussian3(rng), 0.35)));
        let target = add(lx[li], scale(out_dir, rng.random_range(3.3..4.2)));
        let s_centroid = scale(sx.iter().fold([0.0; 3], |a, b| add(a, *b)), 1.0 / sx.len() as f64);
        let rot = align(unit(sub(s_centroid, sx[contact])), out_dir);
        let spun = axis_angle(out_dir, rng.random_range(0.0..std::f64::consts::TAU));
        let moved: Vec<Vec3> = sx
            .iter()
            .map(|p| add(mat_vec(&spun, mat_vec(&rot, sub(*p, sx[contact]))), target))
            .collect();
        if min_dist(&moved, lx) < 3.0 || min_dist(&moved, &px) < 3.0 {
            continue;
        }
        let g = g.with_coords(&moved);
        protein = Some(match protein {
            None => g,
            Some(p) => p.disjoint_union(&g),
        });
        px.extend(moved);
        placed += 1;
    }
    let protein = protein.ok_or_else(|| Error::Degenerate("no pocket strand could be placed".into()))?;
    let rotatable = (0..protein.n_bonds())
        .filter(|&bi| {
            let b = &protein.bonds()[bi];
            !b.in_ring && b.order == BondOrder::Single && protein.degree(b.a) > 1 && protein.degree(b.b) > 1
        })
        .collect();
    Ok((protein, rotatable))
}

/// Synthetic complexes: generated ligands with embedded poses inside
/// strands of pseudo-residues. Family tags cycle over `n_families`.
pub fn synthetic_complexes(n: usize, n_families: usize, seed: u64) -> Result<Vec<Complex>> {
    let gen = MoleculeGenerator::new()?;
    let mut rng = crate::rng::derive(seed, &[0xC0]);
    let ligands = gen.corpus(n, &mut rng)?;
    ligands
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = crate::rng::derive(seed, &[0xC1, i as u64]);
            let lx = embed_3d(&e.graph, rng.random());
            let rot = random_rotation(&mut rng);
            let lx = rigid_transform(&lx, &rot, [0.0; 3]);
            let ligand = e.graph.clone().with_coords(&lx).with_role(Role::Ligand);
            let n_strands = 6 + (e.graph.n_atoms() / 6).min(4);
            let (protein, rotatable) = build_pocket(&ligand, &lx, n_strands, &mut rng)?;
            Ok(Complex {
                id: format!("cx{i:03}"),
                family_tag: format!("fam{}", i % n_families.max(1)),
                ligand,
                protein,
                rotatable,
            })
        })
        .collect()
}

/// Three motifs with equal counts, so the frequency baseline is uniform,
/// and steps on one fixed context whose truths follow `counts`.
pub fn context_free_toy(counts: [usize; 3]) -> Result<(Vocabulary, StepSet)> {
    let motifs: Vec<Motif> = ["C", "Cl", "O"]
        .iter()
        .map(|s| Motif::from_smiles(s, 0))
        .collect::<Result<_>>()?;
    let mut c = MotifCounts::new();
    for m in &motifs {
        c.insert(m.key(), (m.clone(), 1));
    }
    let vocab = Vocabulary::from_counts(c)?;
    let core = parse_smiles("c1ccccc1")?;
    let mut set = StepSet::default();
    set.register_vocabulary(&vocab);
    for (m, &n) in motifs.iter().zip(&counts) {
        for _ in 0..n {
            set.steps.push(bare_step(&core, 0, m.key()));
        }
    }
    Ok((vocab, set))
}

fn bare_step(core: &MolGraph, atom: usize, truth: MotifKey) -> ReconstructionStep {
    ReconstructionStep {
        core: core.clone(),
        core_atoms: (0..core.n_atoms()).collect(),
        growth_atom: atom,
        true_motif: truth,
        true_motif_atoms: Vec::new(),
        true_bond_order: BondOrder::Single,
        negatives: Vec::new(),
        complex_ref: None,
    }
}

/// Steps where only a 3D marker tells two motifs apart.
#[derive(Debug, Clone)]
pub struct Planted3D {
    pub vocab: Vocabulary,
    pub motifs: MotifTable,
    pub examples: Vec<Example3D>,
    /// Whether the marker is close, i.e. motif `a` is the truth.
    pub marker_close: Vec<bool>,
    pub a: MotifKey,
    pub b: MotifKey,
}

pub const PLANTED_CORES: &[&str] = &["c1ccccc1", "Cc1ccccc1", "c1ccncc1", "Clc1ccccc1", "Oc1ccccc1"];

/// Growth on aromatic cores with a methyl (`a`) or chlorine (`b`) truth in
/// equal proportion. An N marker sits 3.0–3.8 Å from the growth atom when
/// the truth is `a` and 5–7 Å when it is `b`; carbon decoys fill the rest.
pub fn planted_3d(n: usize, seed: u64) -> Result<Planted3D> {
    let ma = Motif::from_smiles("C", 0)?;
    let mb = Motif::from_smiles("Cl", 0)?;
    let (a, b) = (ma.key(), mb.key());
    let mut c = MotifCounts::new();
    c.insert(a.clone(), (ma.clone(), 1));
    c.insert(b.clone(), (mb.clone(), 1));
    let vocab = Vocabulary::from_counts(c)?;
    let motifs: MotifTable = [(a.clone(), ma), (b.clone(), mb)].into_iter().collect();
    let cores = PLANTED_CORES.iter().map(|s| parse_smiles(s)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut examples = Vec::with_capacity(n);
    let mut marker_close = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = crate::rng::derive(seed, &[0x3D3D, i as u64]);
        let core = &cores[rng.random_range(0..cores.len())];
        let x = embed_3d(core, 7);
        let rot = random_rotation(&mut rng);
        let t = scale(gaussian3(&mut rng), 5.0);
        let x = rigid_transform(&x, &rot, t);
        let ring: Vec<usize> = (0..core.n_atoms())
            .filter(|&j| core.atom(j).aromatic && core.atom(j).element == Element::C && core.atom(j).n_hydrogens > 0)
            .collect();
        let ga = ring[rng.random_range(0..ring.len())];
        let rc = scale(ring.iter().fold([0.0; 3], |s, &j| add(s, x[j])), 1.0 / ring.len() as f64);
        let out = unit(sub(x[ga], rc));
        let close = i % 2 == 0;
        let mut pts: Vec<Vec3> = Vec::new();
        // marker
        loop {
            let dir = unit(add(out, scale(gaussian3(&mut rng), 0.4)));
            let r = if close { rng.random_range(3.0..3.8) } else { rng.random_range(5.0..7.0) };
            let p = add(x[ga], scale(dir, r));
            let others: Vec<Vec3> = (0..x.len()).filter(|&j| j != ga).map(|j| x[j]).collect();
            if min_dist(&[p], &others) >= 2.8 {
                pts.push(p);
                break;
            }
        }
        // decoys
        while pts.len() < 5 {
            let dir = unit(gaussian3(&mut rng));
            let p = add(x[ga], scale(dir, rng.random_range(4.0..7.0)));
            if min_dist(&[p], &x) >= 3.0 && min_dist(&[p], &pts) >= 2.5 {
                pts.push(p);
            }
        }
        let pocket_graph = parse_smiles("N.C.C.C.C")?.with_role(Role::Protein).with_coords(&pts);
        let truth = if close { a.clone() } else { b.clone() };
        let step = ReconstructionStep {
            complex_ref: Some(format!("planted{i}")),
            ..bare_step(&core.clone().with_coords(&x), ga, truth)
        };
        let motif_pos = add(x[ga], scale(out, 1.5));
        examples.push(Example3D {
            step,
            pocket: Some(Pocket {
                graph: pocket_graph,
                rotatable: Vec::new(),
            }),
            motif_xyz: vec![motif_pos],
            contact: Some(min_dist(&[motif_pos], &pts)),
        });
        marker_close.push(close);
    }
    Ok(Planted3D {
        vocab,
        motifs,
        examples,
        marker_close,
        a,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let g = MoleculeGenerator::new().unwrap();
        let a = g.corpus(30, &mut crate::rng::derive(3, &[])).unwrap();
        let b = g.corpus(30, &mut crate::rng::derive(3, &[])).unwrap();
        assert_eq!(a, b);
        for e in &a {
            let back = parse_smiles(&e.smiles).unwrap();
            assert!(crate::molio::is_isomorphic(&back, &e.graph));
        }
    }

    #[test]
    fn complexes_round_trip_and_have_families() {
        let cx = synthetic_complexes(6, 2, 1).unwrap();
        let fams: BTreeSet<&str> = cx.iter().map(|c| c.family_tag.as_str()).collect();
        assert_eq!(fams.len(), 2);
        for c in &cx {
            let lx = c.ligand.coords().unwrap();
            let px = c.protein.coords().unwrap();
            assert!(min_dist(&lx, &px) >= 3.0 - 1e-9);
            assert!(min_dist(&lx, &px) < 4.5);
            let rec = crate::molio::ComplexRecord::from_complex(c).unwrap();
            let back = rec.to_complex().unwrap();
            assert_eq!(back.rotatable, c.rotatable);
        }
    }

    #[test]
    fn planted_markers_follow_construction() {
        let p = planted_3d(40, 2).unwrap();
        for (ex, &close) in p.examples.iter().zip(&p.marker_close) {
            let ga = ex.step.core.coords().unwrap()[ex.step.growth_atom];
            let m = ex.pocket.as_ref().unwrap().graph.coords().unwrap()[0];
            let r = norm(sub(m, ga));
            if close {
                assert!((3.0..3.8).contains(&r));
                assert_eq!(ex.step.true_motif, p.a);
            } else {
                assert!((5.0..7.0).contains(&r));
                assert_eq!(ex.step.true_motif, p.b);
            }
        }
        assert_eq!(p.vocab.p(0), 0.5);
    }

    #[test]
    fn toy_baseline_is_uniform() {
        let (v, s) = context_free_toy([6, 3, 1]).unwrap();
        assert_eq!(v.probs(), vec![1.0 / 3.0; 3]);
        assert_eq!(s.len(), 10);
    }
}
