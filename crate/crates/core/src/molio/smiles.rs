//! A SMILES subset: organic-subset and bracket atoms, ring closures 1-9,
//! branches, `-` `=` `#` `:` bonds, aromatic lowercase atoms and `@`/`@@`.
//!
//! Chirality marks are mapped to R/S by a local convention: neighbours are
//! ranked by atomic number (hydrogen lowest, ties broken by the order in
//! which they are written). If the written order is an even permutation of
//! that ranking, `@` reads as S and `@@` as R; odd permutations swap the two.

use std::collections::HashMap;

use super::element::Element;
use super::graph::{Atom, BondOrder, Chirality, MolGraph, Role};
use super::MolError;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Atom(usize),
    Hydrogen,
    Pending,
}

struct ParsedAtom {
    atom: Atom,
    bracket: bool,
    /// `Some(true)` for `@`, `Some(false)` for `@@`.
    mark: Option<bool>,
    slots: Vec<Slot>,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<ParsedAtom>,
    bonds: Vec<(usize, usize, Option<BondOrder>)>,
    rings: HashMap<u8, (usize, Option<BondOrder>, usize, usize)>,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> MolError {
        MolError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<MolGraph, MolError> {
        if self.s.is_empty() {
            return Err(self.err("empty SMILES"));
        }
        let mut prev: Option<usize> = None;
        let mut pending_bond: Option<BondOrder> = None;
        let mut branch_stack: Vec<Option<usize>> = Vec::new();
        let mut expect_atom = true;
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if prev.is_none() || expect_atom && pending_bond.is_some() {
                        return Err(self.err("branch without a preceding atom"));
                    }
                    branch_stack.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    let Some(p) = branch_stack.pop() else {
                        return Err(self.err("unbalanced ')'"));
                    };
                    if pending_bond.is_some() {
                        return Err(self.err("bond symbol before ')'"));
                    }
                    prev = p;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending_bond.is_some() {
                        return Err(self.err("two consecutive bond symbols"));
                    }
                    if prev.is_none() {
                        return Err(self.err("bond symbol without a preceding atom"));
                    }
                    pending_bond = Some(match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    });
                    self.pos += 1;
                }
                b'.' => {
                    if pending_bond.is_some() {
                        return Err(self.err("bond symbol before '.'"));
                    }
                    prev = None;
                    expect_atom = true;
                    self.pos += 1;
                }
                b'1'..=b'9' => {
                    let Some(p) = prev else {
                        return Err(self.err("ring closure without a preceding atom"));
                    };
                    let digit = c - b'0';
                    let here = self.pos;
                    self.pos += 1;
                    if let Some((other, obond, slot_idx, _)) = self.rings.remove(&digit) {
                        if other == p {
                            return Err(MolError::Syntax {
                                pos: here,
                                msg: "ring closure onto the same atom".into(),
                            });
                        }
                        let order = match (obond, pending_bond) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(MolError::Syntax {
                                    pos: here,
                                    msg: "conflicting ring-closure bond symbols".into(),
                                })
                            }
                            (a, b) => a.or(b),
                        };
                        pending_bond = None;
                        self.atoms[other].slots[slot_idx] = Slot::Atom(p);
                        self.atoms[p].slots.push(Slot::Atom(other));
                        self.bonds.push((other, p, order));
                    } else {
                        let slot_idx = self.atoms[p].slots.len();
                        self.atoms[p].slots.push(Slot::Pending);
                        self.rings.insert(digit, (p, pending_bond.take(), slot_idx, here));
                    }
                }
                b'%' | b'0' => return Err(self.err("only ring-closure digits 1-9 are supported")),
                _ => {
                    let idx = self.parse_atom()?;
                    if let Some(p) = prev {
                        self.atoms[idx].slots.insert(0, Slot::Atom(p));
                        self.atoms[p].slots.push(Slot::Atom(idx));
                        self.bonds.push((p, idx, pending_bond.take()));
                    } else if pending_bond.is_some() {
                        return Err(self.err("bond symbol without a preceding atom"));
                    }
                    prev = Some(idx);
                    expect_atom = false;
                }
            }
        }
        if pending_bond.is_some() {
            return Err(self.err("dangling bond symbol"));
        }
        if !branch_stack.is_empty() {
            return Err(self.err("unclosed branch"));
        }
        if let Some((_, &(_, _, _, at))) = self.rings.iter().min_by_key(|(_, v)| v.3) {
            return Err(MolError::Syntax {
                pos: at,
                msg: "unclosed ring".into(),
            });
        }
        let _ = expect_atom;
        self.finish()
    }

    fn parse_atom(&mut self) -> Result<usize, MolError> {
        let start = self.pos;
        let c = self.peek().unwrap();
        if c == b'[' {
            return self.parse_bracket();
        }
        let two = self.s.get(self.pos..self.pos + 2);
        let (sym, aromatic, len) = match (c, two) {
            (b'C', Some(b"Cl")) => ("Cl", false, 2),
            (b'B', Some(b"Br")) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.s[self.pos..self.pos + 1]).unwrap(), false, 1)
            }
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ => {
                return Err(MolError::Syntax {
                    pos: start,
                    msg: format!("unexpected character '{}'", c as char),
                })
            }
        };
        self.pos += len;
        let element: Element = sym.parse()?;
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        self.atoms.push(ParsedAtom {
            atom,
            bracket: false,
            mark: None,
            slots: Vec::new(),
        });
        Ok(self.atoms.len() - 1)
    }

    fn parse_bracket(&mut self) -> Result<usize, MolError> {
        let open = self.pos;
        self.pos += 1;
        let close = self.s[self.pos..]
            .iter()
            .position(|&b| b == b']')
            .map(|k| self.pos + k)
            .ok_or_else(|| MolError::Syntax {
                pos: open,
                msg: "unclosed '['".into(),
            })?;
        let body = &self.s[self.pos..close];
        let mut k = 0;
        if body.first().is_some_and(|b| b.is_ascii_digit()) {
            return Err(MolError::Syntax {
                pos: self.pos,
                msg: "isotopes are not supported".into(),
            });
        }
        // element symbol: uppercase + optional lowercase, or aromatic lowercase form
        let (element, aromatic) = {
            let rest = &body[k..];
            let aromatic_forms: [(&[u8], &str); 8] = [
                (b"se", "Se"),
                (b"as", "As"),
                (b"c", "C"),
                (b"n", "N"),
                (b"o", "O"),
                (b"s", "S"),
                (b"p", "P"),
                (b"b", "B"),
            ];
            if let Some(&(pat, sym)) = aromatic_forms.iter().find(|(pat, _)| rest.starts_with(pat)) {
                k += pat.len();
                (sym.parse::<Element>()?, true)
            } else if rest.first().is_some_and(|b| b.is_ascii_uppercase()) {
                let two_letter = rest.len() >= 2 && rest[1].is_ascii_lowercase();
                let cand2 = two_letter.then(|| std::str::from_utf8(&rest[..2]).unwrap());
                let cand1 = std::str::from_utf8(&rest[..1]).unwrap();
                match cand2.and_then(|s| s.parse::<Element>().ok()) {
                    Some(e) => {
                        k += 2;
                        (e, false)
                    }
                    None => {
                        if cand1 == "H" {
                            return Err(MolError::UnsupportedElement("H".into()));
                        }
                        match cand1.parse::<Element>() {
                            Ok(e) => {
                                k += 1;
                                (e, false)
                            }
                            Err(_) => {
                                let sym = cand2.unwrap_or(cand1);
                                return Err(MolError::UnsupportedElement(sym.to_string()));
                            }
                        }
                    }
                }
            } else {
                return Err(MolError::Syntax {
                    pos: self.pos,
                    msg: "expected element symbol in bracket atom".into(),
                });
            }
        };
        let mut mark = None;
        if body.get(k) == Some(&b'@') {
            k += 1;
            if body.get(k) == Some(&b'@') {
                k += 1;
                mark = Some(false);
            } else {
                mark = Some(true);
            }
        }
        let mut h = 0u8;
        if body.get(k) == Some(&b'H') {
            k += 1;
            h = 1;
            if let Some(d) = body.get(k).filter(|b| b.is_ascii_digit()) {
                h = d - b'0';
                k += 1;
            }
        }
        let mut charge: i8 = 0;
        if let Some(&sign) = body.get(k).filter(|&&b| b == b'+' || b == b'-') {
            let unit: i8 = if sign == b'+' { 1 } else { -1 };
            k += 1;
            charge = unit;
            if let Some(d) = body.get(k).filter(|b| b.is_ascii_digit()) {
                charge = unit * (d - b'0') as i8;
                k += 1;
            } else {
                while body.get(k) == Some(&sign) {
                    charge += unit;
                    k += 1;
                }
            }
        }
        if k != body.len() {
            return Err(MolError::Syntax {
                pos: self.pos + k,
                msg: "unsupported bracket-atom content".into(),
            });
        }
        if aromatic && !element.can_be_aromatic() {
            return Err(MolError::Syntax {
                pos: self.pos,
                msg: format!("{element} cannot be aromatic"),
            });
        }
        self.pos = close + 1;
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        atom.formal_charge = charge;
        atom.n_hydrogens = h;
        let slots = if h > 0 { vec![Slot::Hydrogen] } else { Vec::new() };
        self.atoms.push(ParsedAtom {
            atom,
            bracket: true,
            mark,
            slots,
        });
        Ok(self.atoms.len() - 1)
    }

    fn finish(self) -> Result<MolGraph, MolError> {
        let Parser { atoms: parsed, bonds, .. } = self;
        let resolved: Vec<(usize, usize, BondOrder)> = bonds
            .iter()
            .map(|&(a, b, o)| {
                let order = o.unwrap_or(if parsed[a].atom.aromatic && parsed[b].atom.aromatic {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                });
                (a, b, order)
            })
            .collect();
        let atoms: Vec<Atom> = parsed.iter().map(|p| p.atom.clone()).collect();
        let topo = MolGraph::new_unchecked(atoms.clone(), resolved.iter().copied(), Role::Ligand)?;
        let mut atoms = atoms;
        for (i, p) in parsed.iter().enumerate() {
            if !p.bracket {
                atoms[i].n_hydrogens = implicit_hydrogens(&topo, i);
            }
            if let Some(anticlockwise) = p.mark {
                atoms[i].chirality = chirality_label(&atoms, &p.slots, anticlockwise);
            }
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.aromatic && !topo.neighbors(i).iter().any(|&(_, bi)| topo.bonds()[bi].in_ring) {
                return Err(MolError::Invalid(format!("aromatic atom {i} is not in a ring")));
            }
        }
        MolGraph::new(atoms, resolved, Role::Ligand)
    }
}

/// Implicit hydrogen count for an unbracketed atom given its bonds in `g`.
pub fn implicit_hydrogens(g: &MolGraph, i: usize) -> u8 {
    let atom = g.atom(i);
    let valences = atom.element.default_valences();
    if valences.is_empty() {
        return 0;
    }
    let used = g.bond_valence(i);
    if atom.aromatic {
        let has_double = g
            .neighbors(i)
            .iter()
            .any(|&(_, bi)| g.bonds()[bi].order == BondOrder::Double);
        let reserve = u32::from(!has_double);
        return valences[0].saturating_sub(used + reserve) as u8;
    }
    match valences.iter().find(|&&v| v >= used) {
        Some(&v) => (v - used) as u8,
        None => 0,
    }
}

fn chirality_label(atoms: &[Atom], slots: &[Slot], anticlockwise: bool) -> Chirality {
    let z = |s: &Slot| match s {
        Slot::Atom(j) => atoms[*j].element.atomic_number(),
        _ => 1,
    };
    // written position -> rank position permutation parity
    let mut idx: Vec<usize> = (0..slots.len()).collect();
    idx.sort_by(|&x, &y| z(&slots[y]).cmp(&z(&slots[x])).then(x.cmp(&y)));
    let odd = permutation_is_odd(&idx);
    match anticlockwise ^ odd {
        true => Chirality::S,
        false => Chirality::R,
    }
}

fn permutation_is_odd(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    let mut transpositions = 0;
    for s in 0..p.len() {
        if seen[s] {
            continue;
        }
        let mut len = 0;
        let mut k = s;
        while !seen[k] {
            seen[k] = true;
            k = p[k];
            len += 1;
        }
        transpositions += len - 1;
    }
    transpositions % 2 == 1
}

/// Parses one SMILES string into a ligand graph with implicit hydrogens assigned.
pub fn parse_smiles(text: &str) -> Result<MolGraph, MolError> {
    let text = text.trim();
    Parser {
        s: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        rings: HashMap::new(),
    }
    .parse()
}

/// Parses a corpus: one molecule per line, blank and `#` lines skipped.
/// Errors carry the 1-based line number.
pub fn parse_smiles_corpus(text: &str) -> Result<Vec<MolGraph>, MolError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| {
            let smi = l.split_whitespace().next().unwrap_or("");
            parse_smiles(smi).map_err(|e| MolError::Record {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Writes a SMILES string whose re-parse is isomorphic to `g`.
pub fn write_smiles(g: &MolGraph) -> Result<String, MolError> {
    if g.n_atoms() == 0 {
        return Err(MolError::Unwritable("empty graph".into()));
    }
    for a in g.atoms() {
        if a.aromatic && !a.element.can_be_aromatic() {
            return Err(MolError::Unwritable(format!("aromatic {}", a.element)));
        }
        if a.n_radical > 0 {
            return Err(MolError::Unwritable("radicals".into()));
        }
        if a.n_hydrogens > 9 || a.formal_charge.unsigned_abs() > 9 {
            return Err(MolError::Unwritable("hydrogen or charge count above 9".into()));
        }
    }
    for b in g.bonds() {
        if b.order == BondOrder::Aromatic && !(g.atom(b.a).aromatic && g.atom(b.b).aromatic) {
            return Err(MolError::Unwritable("aromatic bond between non-aromatic atoms".into()));
        }
    }
    let n = g.n_atoms();
    // DFS spanning forest; non-tree bonds become ring closures.
    let mut visited = vec![false; n];
    let mut parent_bond = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut roots = Vec::new();
    let mut tree_bond = vec![false; g.n_bonds()];
    for r in 0..n {
        if visited[r] {
            continue;
        }
        roots.push(r);
        let mut stack = vec![r];
        while let Some(u) = stack.pop() {
            if visited[u] {
                continue;
            }
            visited[u] = true;
            order.push(u);
            if parent_bond[u] != usize::MAX {
                tree_bond[parent_bond[u]] = true;
                let p = g.bonds()[parent_bond[u]].other(u);
                children[p].push(u);
            }
            let mut nbs: Vec<(usize, usize)> = g.neighbors(u).to_vec();
            nbs.sort_unstable();
            for &(v, bi) in nbs.iter().rev() {
                if !visited[v] {
                    parent_bond[v] = bi;
                    stack.push(v);
                }
            }
        }
    }
    let _ = order;
    // Ring-closure bonds per atom in the order they will be written.
    let mut pos_in_order = vec![0usize; n];
    {
        let mut k = 0;
        let mut stack: Vec<usize> = roots.iter().rev().copied().collect();
        while let Some(u) = stack.pop() {
            pos_in_order[u] = k;
            k += 1;
            for &c in children[u].iter().rev() {
                stack.push(c);
            }
        }
    }
    let mut closures: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (bi, b) in g.bonds().iter().enumerate() {
        if !tree_bond[bi] {
            closures[b.a].push(bi);
            closures[b.b].push(bi);
        }
    }
    for c in closures.iter_mut() {
        c.sort_by_key(|&bi| {
            let b = &g.bonds()[bi];
            (pos_in_order[b.a].max(pos_in_order[b.b]), bi)
        });
    }
    let mut out = String::new();
    let mut digit_of: HashMap<usize, u8> = HashMap::new();
    let mut free: Vec<bool> = vec![true; 10];
    for (ri, &root) in roots.iter().enumerate() {
        if ri > 0 {
            out.push('.');
        }
        // iterative emission: stack of actions
        enum Act {
            Atom(usize),
            Open,
            Close,
        }
        let mut stack = vec![Act::Atom(root)];
        while let Some(act) = stack.pop() {
            match act {
                Act::Open => out.push('('),
                Act::Close => out.push(')'),
                Act::Atom(u) => {
                    let pb = parent_bond[u];
                    if pb != usize::MAX {
                        let p = g.bonds()[pb].other(u);
                        out.push_str(bond_symbol(g, p, u, g.bonds()[pb].order));
                    }
                    // neighbour order as it will be read back
                    let mut slots: Vec<Slot> = Vec::new();
                    if pb != usize::MAX {
                        slots.push(Slot::Atom(g.bonds()[pb].other(u)));
                    }
                    let need_bracket = needs_bracket(g, u);
                    if need_bracket && g.atom(u).n_hydrogens > 0 {
                        slots.push(Slot::Hydrogen);
                    }
                    let mut ring_text = String::new();
                    for &bi in &closures[u] {
                        let b = &g.bonds()[bi];
                        let other = b.other(u);
                        slots.push(Slot::Atom(other));
                        if let Some(d) = digit_of.remove(&bi) {
                            free[d as usize] = true;
                            ring_text.push((b'0' + d) as char);
                        } else {
                            let d = (1..10u8)
                                .find(|&d| free[d as usize])
                                .ok_or_else(|| MolError::Unwritable("more than 9 open rings".into()))?;
                            free[d as usize] = false;
                            digit_of.insert(bi, d);
                            ring_text.push_str(bond_symbol(g, u, other, b.order));
                            ring_text.push((b'0' + d) as char);
                        }
                    }
                    for &c in &children[u] {
                        slots.push(Slot::Atom(c));
                    }
                    out.push_str(&atom_text(g, u, need_bracket, &slots));
                    out.push_str(&ring_text);
                    let kids = &children[u];
                    if let Some((&last, rest)) = kids.split_last() {
                        stack.push(Act::Atom(last));
                        for &c in rest.iter().rev() {
                            stack.push(Act::Close);
                            stack.push(Act::Atom(c));
                            stack.push(Act::Open);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn bond_symbol(g: &MolGraph, a: usize, b: usize, order: BondOrder) -> &'static str {
    let both_aromatic = g.atom(a).aromatic && g.atom(b).aromatic;
    match order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn needs_bracket(g: &MolGraph, i: usize) -> bool {
    let a = g.atom(i);
    !a.element.is_organic_subset()
        || a.formal_charge != 0
        || a.chirality != Chirality::None
        || implicit_hydrogens(g, i) != a.n_hydrogens
}

fn atom_text(g: &MolGraph, i: usize, bracket: bool, slots: &[Slot]) -> String {
    let a = g.atom(i);
    let sym = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    if !bracket {
        return sym;
    }
    let mut s = format!("[{sym}");
    if a.chirality != Chirality::None {
        let atoms = g.atoms();
        // pick the mark whose reading reproduces the stored label
        let as_anticlockwise = chirality_label(atoms, slots, true);
        s.push_str(if as_anticlockwise == a.chirality { "@" } else { "@@" });
    }
    match a.n_hydrogens {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        q if q > 0 => s.push_str(&format!("+{q}")),
        q => s.push_str(&format!("-{}", -q)),
    }
    s.push(']');
    s
}
