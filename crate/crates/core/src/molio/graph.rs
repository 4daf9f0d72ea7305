use serde::{Deserialize, Serialize};

use super::element::Element;
use super::MolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Valence consumed on each endpoint. Aromatic bonds count one; the
    /// extra pi electron is booked on the aromatic atom itself.
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }

    pub fn parse(s: &str) -> Result<Self, MolError> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "1" | "-" => Ok(BondOrder::Single),
            "double" | "2" | "=" => Ok(BondOrder::Double),
            "triple" | "3" | "#" => Ok(BondOrder::Triple),
            "aromatic" | "ar" | "1.5" | ":" => Ok(BondOrder::Aromatic),
            other => Err(MolError::Invalid(format!("unknown bond order '{other}'"))),
        }
    }

    fn is_multiple(self) -> bool {
        !matches!(self, BondOrder::Single)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hybridization {
    S,
    Sp,
    Sp2,
    Sp3,
    Sp3d,
    Sp3d2,
    Other,
}

impl Hybridization {
    pub fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Chirality {
    #[default]
    None,
    R,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Ligand,
    Protein,
    Motif,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub n_radical: u8,
    pub hybridization: Hybridization,
    pub aromatic: bool,
    /// Explicit plus implicit hydrogens.
    pub n_hydrogens: u8,
    pub chirality: Chirality,
    pub coords: Option<[f64; 3]>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            formal_charge: 0,
            n_radical: 0,
            hybridization: Hybridization::Other,
            aromatic: false,
            n_hydrogens: 0,
            chirality: Chirality::None,
            coords: None,
        }
    }

    /// Attributes that take part in graph isomorphism (everything except coordinates).
    pub fn label(&self) -> (Element, i8, u8, bool, u8, Chirality) {
        (
            self.element,
            self.formal_charge,
            self.n_radical,
            self.aromatic,
            self.n_hydrogens,
            self.chirality,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub conjugated: bool,
    pub in_ring: bool,
}

impl Bond {
    pub fn other(&self, i: usize) -> usize {
        if self.a == i {
            self.b
        } else {
            self.a
        }
    }
}

/// Attributed molecular graph. Ring membership, conjugation and hybridization
/// are derived on construction and always consistent with the topology.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    role: Role,
    adj: Vec<Vec<(usize, usize)>>,
}

impl MolGraph {
    /// Builds a graph from atoms and `(a, b, order)` triples, deriving ring
    /// flags, conjugation and hybridization, and validating valences.
    pub fn new(
        atoms: Vec<Atom>,
        bonds: impl IntoIterator<Item = (usize, usize, BondOrder)>,
        role: Role,
    ) -> Result<Self, MolError> {
        let g = Self::new_unchecked(atoms, bonds, role)?;
        g.check_valence()?;
        Ok(g)
    }

    /// Like [`MolGraph::new`] but skips the valence check. Topology errors
    /// (self loops, duplicate bonds, out-of-range indices) are still reported.
    pub fn new_unchecked(
        atoms: Vec<Atom>,
        bonds: impl IntoIterator<Item = (usize, usize, BondOrder)>,
        role: Role,
    ) -> Result<Self, MolError> {
        let n = atoms.len();
        let mut adj = vec![Vec::new(); n];
        let mut out = Vec::new();
        for (a, b, order) in bonds {
            if a >= n || b >= n {
                return Err(MolError::IndexOutOfRange { index: a.max(b), len: n });
            }
            if a == b {
                return Err(MolError::Invalid(format!("self-bond on atom {a}")));
            }
            if adj[a].iter().any(|&(nb, _)| nb == b) {
                return Err(MolError::Invalid(format!("duplicate bond {a}-{b}")));
            }
            let idx = out.len();
            adj[a].push((b, idx));
            adj[b].push((a, idx));
            out.push(Bond {
                a,
                b,
                order,
                conjugated: false,
                in_ring: false,
            });
        }
        let mut g = MolGraph {
            atoms,
            bonds: out,
            role,
            adj,
        };
        g.perceive_rings();
        g.assign_conjugation();
        g.assign_hybridization();
        Ok(g)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbour, bond index)` pairs of atom `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adj[a]
            .iter()
            .find(|&&(nb, _)| nb == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    pub fn has_coords(&self) -> bool {
        !self.atoms.is_empty() && self.atoms.iter().all(|a| a.coords.is_some())
    }

    pub fn coords(&self) -> Option<Vec<[f64; 3]>> {
        self.atoms.iter().map(|a| a.coords).collect()
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Replaces all coordinates. Panics if the length differs from the atom count.
    pub fn with_coords(mut self, coords: &[[f64; 3]]) -> Self {
        assert_eq!(coords.len(), self.atoms.len(), "coordinate count mismatch");
        for (a, c) in self.atoms.iter_mut().zip(coords) {
            a.coords = Some(*c);
        }
        self
    }

    pub fn without_coords(mut self) -> Self {
        for a in &mut self.atoms {
            a.coords = None;
        }
        self
    }

    /// Sum of bond valences on atom `i` (aromatic bonds count one).
    pub fn bond_valence(&self, i: usize) -> u32 {
        self.adj[i]
            .iter()
            .map(|&(_, bi)| self.bonds[bi].order.valence())
            .sum()
    }

    /// Sum of bond orders to heavy atoms, with aromatic bonds counted 1.5 and
    /// rounded down. Used as the explicit valence in shredding seed weights.
    pub fn explicit_valence(&self, i: usize) -> u32 {
        let twice: u32 = self.adj[i]
            .iter()
            .map(|&(_, bi)| match self.bonds[bi].order {
                BondOrder::Single => 2,
                BondOrder::Double => 4,
                BondOrder::Triple => 6,
                BondOrder::Aromatic => 3,
            })
            .sum();
        twice / 2
    }

    /// Total valence used by atom `i` under the aromatic bookkeeping rules.
    pub fn used_valence(&self, i: usize) -> u32 {
        let a = &self.atoms[i];
        self.bond_valence(i) + a.n_hydrogens as u32 + u32::from(self.reserves_pi(i))
    }

    /// Aromatic carbons without an exocyclic double bond book one valence
    /// unit for their pi electron.
    pub fn reserves_pi(&self, i: usize) -> bool {
        let a = &self.atoms[i];
        a.aromatic
            && a.element == Element::C
            && !self.adj[i]
                .iter()
                .any(|&(_, bi)| self.bonds[bi].order == BondOrder::Double)
    }

    /// Valence the element can still accept without exceeding its maximum.
    pub fn allowed_valence(&self, i: usize) -> u32 {
        let a = &self.atoms[i];
        a.element.max_valence() + a.formal_charge.unsigned_abs() as u32
    }

    /// Number of additional single bonds atom `i` can accept by replacing hydrogens.
    pub fn open_valence(&self, i: usize) -> u32 {
        self.atoms[i].n_hydrogens as u32
    }

    pub fn check_valence(&self) -> Result<(), MolError> {
        for i in 0..self.atoms.len() {
            let used = self.used_valence(i);
            let allowed = self.allowed_valence(i);
            if used > allowed {
                return Err(MolError::Valence {
                    atom: i,
                    element: self.atoms[i].element,
                    used,
                    allowed,
                });
            }
        }
        Ok(())
    }

    /// Connected components as lists of atom indices, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut k = 0;
            while k < comp.len() {
                let u = comp[k];
                k += 1;
                for &(v, _) in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Induced subgraph on `keep` (in the given order). Hydrogens are added to
    /// atoms that lose bonds so the fragment stays valence-consistent.
    pub fn induced_subgraph(&self, keep: &[usize], role: Role) -> Result<MolGraph, MolError> {
        let mut map = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut atoms: Vec<Atom> = keep.iter().map(|&i| self.atoms[i].clone()).collect();
        let mut bonds = Vec::new();
        for b in &self.bonds {
            let (na, nb) = (map[b.a], map[b.b]);
            match (na != usize::MAX, nb != usize::MAX) {
                (true, true) => bonds.push((na, nb, b.order)),
                (true, false) => cap(&mut atoms[na], b.order),
                (false, true) => cap(&mut atoms[nb], b.order),
                (false, false) => {}
            }
        }
        MolGraph::new(atoms, bonds, role)
    }

    /// Disjoint union; atoms of `other` are renumbered after those of `self`.
    pub fn disjoint_union(&self, other: &MolGraph) -> MolGraph {
        let off = self.atoms.len();
        let atoms: Vec<Atom> = self.atoms.iter().chain(other.atoms.iter()).cloned().collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| (b.a, b.b, b.order))
            .chain(other.bonds.iter().map(|b| (b.a + off, b.b + off, b.order)));
        MolGraph::new_unchecked(atoms, bonds, self.role).expect("union of valid graphs is valid")
    }

    /// Joins atom `a` of `self` with atom `b` of `other` by a bond of the given
    /// order, consuming hydrogens on both ends. Returns the joined graph; atoms
    /// of `other` start at `self.n_atoms()`.
    pub fn attach(&self, a: usize, other: &MolGraph, b: usize, order: BondOrder) -> Result<MolGraph, MolError> {
        let need = order.valence() as u8;
        if self.atoms[a].n_hydrogens < need {
            return Err(MolError::NoOpenValence { atom: a });
        }
        if other.atoms[b].n_hydrogens < need {
            return Err(MolError::NoOpenValence { atom: b });
        }
        let off = self.atoms.len();
        let mut atoms: Vec<Atom> = self.atoms.iter().chain(other.atoms.iter()).cloned().collect();
        atoms[a].n_hydrogens -= need;
        atoms[off + b].n_hydrogens -= need;
        let bonds = self
            .bonds
            .iter()
            .map(|x| (x.a, x.b, x.order))
            .chain(other.bonds.iter().map(|x| (x.a + off, x.b + off, x.order)))
            .chain(std::iter::once((a, off + b, order)));
        MolGraph::new(atoms, bonds, self.role)
    }

    /// Returns a copy with atoms reordered so that new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let atoms = perm.iter().map(|&o| self.atoms[o].clone()).collect();
        let bonds = self.bonds.iter().map(|b| (inv[b.a], inv[b.b], b.order));
        MolGraph::new_unchecked(atoms, bonds, self.role).expect("permutation preserves validity")
    }

    fn perceive_rings(&mut self) {
        // A bond lies on a cycle iff it is not a bridge.
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut timer = 0;
        let mut is_bridge = vec![false; self.bonds.len()];
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // (vertex, parent bond, next neighbour cursor)
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (u, pb, ref mut cur)) = stack.last_mut() {
                if *cur < self.adj[u].len() {
                    let (v, bi) = self.adj[u][*cur];
                    *cur += 1;
                    if bi == pb {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, bi, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_bridge[pb] = true;
                        }
                    }
                }
            }
        }
        for (b, bridge) in self.bonds.iter_mut().zip(is_bridge) {
            b.in_ring = !bridge;
        }
    }

    fn assign_conjugation(&mut self) {
        let n = self.atoms.len();
        let unsaturated: Vec<bool> = (0..n)
            .map(|i| {
                self.atoms[i].aromatic || self.adj[i].iter().any(|&(_, bi)| self.bonds[bi].order.is_multiple())
            })
            .collect();
        let flags: Vec<bool> = self
            .bonds
            .iter()
            .enumerate()
            .map(|(bi, b)| {
                if b.order == BondOrder::Aromatic {
                    return true;
                }
                if b.order.is_multiple() {
                    // A multiple bond next to another unsaturated centre.
                    [b.a, b.b].iter().any(|&end| {
                        self.adj[end]
                            .iter()
                            .any(|&(nb, obi)| obi != bi && unsaturated[nb])
                    })
                } else {
                    unsaturated[b.a] && unsaturated[b.b]
                }
            })
            .collect();
        for (b, f) in self.bonds.iter_mut().zip(flags) {
            b.conjugated = f;
        }
    }

    fn assign_hybridization(&mut self) {
        for i in 0..self.atoms.len() {
            let mut doubles = 0;
            let mut triples = 0;
            for &(_, bi) in &self.adj[i] {
                match self.bonds[bi].order {
                    BondOrder::Double => doubles += 1,
                    BondOrder::Triple => triples += 1,
                    _ => {}
                }
            }
            let a = &self.atoms[i];
            let steric = self.adj[i].len() + a.n_hydrogens as usize;
            let hyb = if a.aromatic {
                Hybridization::Sp2
            } else if triples > 0 || doubles >= 2 {
                Hybridization::Sp
            } else if doubles == 1 {
                Hybridization::Sp2
            } else {
                match steric {
                    0 => Hybridization::S,
                    1..=4 => Hybridization::Sp3,
                    5 => Hybridization::Sp3d,
                    6 => Hybridization::Sp3d2,
                    _ => Hybridization::Other,
                }
            };
            self.atoms[i].hybridization = hyb;
        }
    }
}

fn cap(atom: &mut Atom, order: BondOrder) {
    atom.n_hydrogens = atom.n_hydrogens.saturating_add(order.valence() as u8);
}

/// Attribute-preserving graph isomorphism by backtracking search.
///
/// Atoms must agree on every attribute except coordinates, bonds on order.
pub fn is_isomorphic(g1: &MolGraph, g2: &MolGraph) -> bool {
    find_isomorphism(g1, g2, None).is_some()
}

/// Returns a mapping `m` with `g1` atom `i` ↦ `g2` atom `m[i]`, optionally
/// requiring `pin.0` to map onto `pin.1`.
pub fn find_isomorphism(g1: &MolGraph, g2: &MolGraph, pin: Option<(usize, usize)>) -> Option<Vec<usize>> {
    let n = g1.n_atoms();
    if n != g2.n_atoms() || g1.n_bonds() != g2.n_bonds() {
        return None;
    }
    let sig = |g: &MolGraph, i: usize| {
        let mut nb: Vec<_> = g
            .neighbors(i)
            .iter()
            .map(|&(v, bi)| (g.bonds()[bi].order, g.atom(v).element))
            .collect();
        nb.sort();
        (g.atom(i).label(), nb)
    };
    let s1: Vec<_> = (0..n).map(|i| sig(g1, i)).collect();
    let s2: Vec<_> = (0..n).map(|i| sig(g2, i)).collect();
    {
        let mut a = s1.clone();
        let mut b = s2.clone();
        a.sort();
        b.sort();
        if a != b {
            return None;
        }
    }
    // Visit g1 atoms in BFS order so each new atom (after the first of its
    // component) has an already-mapped neighbour.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let starts: Vec<usize> = match pin {
        Some((p, _)) => std::iter::once(p).chain(0..n).collect(),
        None => (0..n).collect(),
    };
    for s in starts {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        order.push(s);
        let mut k = order.len() - 1;
        while k < order.len() {
            let u = order[k];
            k += 1;
            for &(v, _) in g1.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    order.push(v);
                }
            }
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    fn rec(
        depth: usize,
        order: &[usize],
        g1: &MolGraph,
        g2: &MolGraph,
        s1: &[(
            (Element, i8, u8, bool, u8, Chirality),
            Vec<(BondOrder, Element)>,
        )],
        s2: &[(
            (Element, i8, u8, bool, u8, Chirality),
            Vec<(BondOrder, Element)>,
        )],
        map: &mut [usize],
        used: &mut [bool],
        pin: Option<(usize, usize)>,
    ) -> bool {
        if depth == order.len() {
            return true;
        }
        let u = order[depth];
        let candidates: Vec<usize> = if let Some((_, q)) = pin.filter(|&(p, _)| p == u) {
            vec![q]
        } else if let Some(&(anchor, _)) = g1.neighbors(u).iter().find(|&&(v, _)| map[v] != usize::MAX) {
            g2.neighbors(map[anchor]).iter().map(|&(v, _)| v).collect()
        } else {
            (0..g2.n_atoms()).collect()
        };
        for c in candidates {
            if used[c] || s1[u] != s2[c] {
                continue;
            }
            let consistent = g1.neighbors(u).iter().all(|&(v, bi)| {
                let mv = map[v];
                if mv == usize::MAX {
                    return true;
                }
                match g2.bond_between(c, mv) {
                    Some(b2) => b2.order == g1.bonds()[bi].order,
                    None => false,
                }
            });
            if !consistent {
                continue;
            }
            // Mapped neighbours of c must also be neighbours of u.
            let mapped_nb_c = g2.neighbors(c).iter().filter(|&&(v, _)| used[v]).count();
            let mapped_nb_u = g1.neighbors(u).iter().filter(|&&(v, _)| map[v] != usize::MAX).count();
            if mapped_nb_c != mapped_nb_u {
                continue;
            }
            map[u] = c;
            used[c] = true;
            if rec(depth + 1, order, g1, g2, s1, s2, map, used, pin) {
                return true;
            }
            map[u] = usize::MAX;
            used[c] = false;
        }
        false
    }
    if rec(0, &order, g1, g2, &s1, &s2, &mut map, &mut used, pin) {
        Some(map)
    } else {
        None
    }
}
