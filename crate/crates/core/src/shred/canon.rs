//! Canonical labelling by colour refinement plus individualization.

use sha2::{Digest, Sha256};

use crate::molio::MolGraph;

type Invariant = (u8, i8, u8, bool, u8, u8, bool);

fn atom_invariant(g: &MolGraph, i: usize, attachment: Option<usize>) -> Invariant {
    let a = g.atom(i);
    (
        a.element.atomic_number(),
        a.formal_charge,
        a.n_radical,
        a.aromatic,
        a.n_hydrogens,
        a.chirality as u8,
        attachment == Some(i),
    )
}

/// Replaces colours with the rank of (colour, sorted neighbour signature)
/// until the partition stops splitting.
fn refine(g: &MolGraph, colours: &mut [usize]) {
    let n = colours.len();
    let mut classes = count_classes(colours);
    loop {
        let sigs: Vec<(usize, Vec<(u8, usize)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u8, usize)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(j, bi)| (g.bonds()[bi].order as u8, colours[j]))
                    .collect();
                nb.sort_unstable();
                (colours[i], nb)
            })
            .collect();
        let ranked = rank(&sigs);
        colours.copy_from_slice(&ranked);
        let next = count_classes(colours);
        if next == classes {
            return;
        }
        classes = next;
    }
}

fn rank<T: Ord>(items: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| items[a].cmp(&items[b]));
    let mut out = vec![0; items.len()];
    let mut r = 0;
    for k in 0..idx.len() {
        if k > 0 && items[idx[k]] != items[idx[k - 1]] {
            r = k;
        }
        out[idx[k]] = r;
    }
    out
}

fn count_classes(colours: &[usize]) -> usize {
    let mut c = colours.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

type Serial = (Vec<Invariant>, Vec<(usize, usize, u8)>);

fn serialize(g: &MolGraph, labels: &[usize], inv: &[Invariant]) -> Serial {
    let n = labels.len();
    let mut atoms = vec![inv[0]; n];
    for i in 0..n {
        atoms[labels[i]] = inv[i];
    }
    let mut edges: Vec<(usize, usize, u8)> = g
        .bonds()
        .iter()
        .map(|b| {
            let (x, y) = (labels[b.a], labels[b.b]);
            (x.min(y), x.max(y), b.order as u8)
        })
        .collect();
    edges.sort_unstable();
    (atoms, edges)
}

fn search(g: &MolGraph, colours: Vec<usize>, inv: &[Invariant], best: &mut Option<(Serial, Vec<usize>)>) {
    let n = colours.len();
    if count_classes(&colours) == n {
        let s = serialize(g, &colours, inv);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            *best = Some((s, colours));
        }
        return;
    }
    // first non-singleton cell, chosen by colour value
    let mut sizes = vec![0usize; n];
    for &c in &colours {
        sizes[c] += 1;
    }
    let target = (0..n).find(|&c| sizes[c] > 1).unwrap();
    for i in (0..n).filter(|&i| colours[i] == target) {
        // individualize i: it keeps `target`, its cell-mates move up by one
        let mut c2: Vec<usize> = colours.iter().map(|&c| if c >= target { c * 2 + 1 } else { c * 2 }).collect();
        c2[i] = target * 2;
        let mut c2 = rank(&c2);
        refine(g, &mut c2);
        search(g, c2, inv, best);
    }
}

/// Canonical labelling: `labels[i]` is the canonical position of atom `i`.
/// Isomorphic (graph, attachment) pairs yield identical serializations.
pub fn canonical_labels(g: &MolGraph, attachment: Option<usize>) -> Vec<usize> {
    let n = g.n_atoms();
    if n == 0 {
        return Vec::new();
    }
    let inv: Vec<Invariant> = (0..n).map(|i| atom_invariant(g, i, attachment)).collect();
    let mut colours = rank(&inv);
    refine(g, &mut colours);
    let mut best = None;
    search(g, colours, &inv, &mut best);
    best.unwrap().1
}

/// 32-hex-character digest of the canonical serialization.
pub fn canonical_hash(g: &MolGraph, attachment: Option<usize>) -> String {
    let n = g.n_atoms();
    let labels = canonical_labels(g, attachment);
    let inv: Vec<Invariant> = (0..n).map(|i| atom_invariant(g, i, attachment)).collect();
    let (atoms, edges) = serialize_or_empty(g, &labels, &inv);
    let mut h = Sha256::new();
    for a in &atoms {
        h.update(format!("{a:?};").as_bytes());
    }
    h.update(b"|");
    for e in &edges {
        h.update(format!("{e:?};").as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

fn serialize_or_empty(g: &MolGraph, labels: &[usize], inv: &[Invariant]) -> Serial {
    if labels.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        serialize(g, labels, inv)
    }
}
