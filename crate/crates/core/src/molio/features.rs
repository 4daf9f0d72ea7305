use std::ops::Range;

use super::element::ELEMENT_SLOTS;
use super::graph::{BondOrder, Chirality, MolGraph};

pub const ATOM_FEATURE_DIM: usize = 36;
pub const BOND_FEATURE_DIM: usize = 6;

const DEGREE_SLOTS: usize = 7;
const HYBRID_SLOTS: usize = 7;
const HCOUNT_SLOTS: usize = 5;

const ELEMENT_OFF: usize = 0;
const DEGREE_OFF: usize = ELEMENT_OFF + ELEMENT_SLOTS;
const RADICAL_OFF: usize = DEGREE_OFF + DEGREE_SLOTS;
const CHARGE_OFF: usize = RADICAL_OFF + 1;
const HYBRID_OFF: usize = CHARGE_OFF + 1;
const AROMATIC_OFF: usize = HYBRID_OFF + HYBRID_SLOTS;
const HCOUNT_OFF: usize = AROMATIC_OFF + 1;
const CHIRAL_OFF: usize = HCOUNT_OFF + HCOUNT_SLOTS;

/// Column ranges of the one-hot blocks in the atom vector: element, degree,
/// hybridization, hydrogen count.
pub const ATOM_ONE_HOT_BLOCKS: [Range<usize>; 4] = [
    ELEMENT_OFF..DEGREE_OFF,
    DEGREE_OFF..RADICAL_OFF,
    HYBRID_OFF..AROMATIC_OFF,
    HCOUNT_OFF..CHIRAL_OFF,
];

pub type AtomFeatures = [f64; ATOM_FEATURE_DIM];
pub type BondFeatures = [f64; BOND_FEATURE_DIM];

const _: () = assert!(CHIRAL_OFF + 2 == ATOM_FEATURE_DIM);

/// Degree and hydrogen counts saturate at the last slot of their block.
pub fn atom_features(g: &MolGraph, i: usize) -> AtomFeatures {
    let a = g.atom(i);
    let mut f = [0.0; ATOM_FEATURE_DIM];
    f[ELEMENT_OFF + a.element.feature_slot()] = 1.0;
    f[DEGREE_OFF + g.degree(i).min(DEGREE_SLOTS - 1)] = 1.0;
    f[RADICAL_OFF] = a.n_radical as f64;
    f[CHARGE_OFF] = a.formal_charge as f64;
    f[HYBRID_OFF + a.hybridization.slot()] = 1.0;
    f[AROMATIC_OFF] = if a.aromatic { 1.0 } else { 0.0 };
    f[HCOUNT_OFF + (a.n_hydrogens as usize).min(HCOUNT_SLOTS - 1)] = 1.0;
    match a.chirality {
        Chirality::R => f[CHIRAL_OFF] = 1.0,
        Chirality::S => f[CHIRAL_OFF + 1] = 1.0,
        Chirality::None => {}
    }
    f
}

pub fn bond_features(g: &MolGraph, bi: usize) -> BondFeatures {
    let b = &g.bonds()[bi];
    let mut f = [0.0; BOND_FEATURE_DIM];
    f[match b.order {
        BondOrder::Single => 0,
        BondOrder::Double => 1,
        BondOrder::Triple => 2,
        BondOrder::Aromatic => 3,
    }] = 1.0;
    f[4] = if b.conjugated { 1.0 } else { 0.0 };
    f[5] = if b.in_ring { 1.0 } else { 0.0 };
    f
}

pub fn featurize(g: &MolGraph) -> (Vec<AtomFeatures>, Vec<BondFeatures>) {
    let atoms = (0..g.n_atoms()).map(|i| atom_features(g, i)).collect();
    let bonds = (0..g.n_bonds()).map(|b| bond_features(g, b)).collect();
    (atoms, bonds)
}

#[cfg(test)]
mod tests {
    use super::super::smiles::parse_smiles;
    use super::*;

    #[test]
    fn methane_slots() {
        let g = parse_smiles("C").unwrap();
        let f = atom_features(&g, 0);
        assert_eq!(f[ELEMENT_OFF], 1.0);
        assert_eq!(f[DEGREE_OFF], 1.0);
        assert_eq!(f[HCOUNT_OFF + 4], 1.0);
        assert_eq!(f[HYBRID_OFF + 3], 1.0);
        assert_eq!(f.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn benzene_block_sums() {
        let g = parse_smiles("c1ccccc1").unwrap();
        let (af, bf) = featurize(&g);
        assert_eq!((af.len(), bf.len()), (6, 6));
        for row in &af {
            for block in ATOM_ONE_HOT_BLOCKS.iter() {
                assert_eq!(row[block.clone()].iter().sum::<f64>(), 1.0);
            }
            assert_eq!(row[AROMATIC_OFF], 1.0);
        }
        for row in &bf {
            assert_eq!(row[..4].iter().sum::<f64>(), 1.0);
            assert_eq!((row[3], row[5]), (1.0, 1.0));
        }
    }

    #[test]
    fn chirality_and_charge_columns() {
        let g = parse_smiles("N[C@@H](C)C(=O)[O-]").unwrap();
        let f = atom_features(&g, 1);
        assert_eq!(f[CHIRAL_OFF] + f[CHIRAL_OFF + 1], 1.0);
        let o = atom_features(&g, 5);
        assert_eq!(o[CHARGE_OFF], -1.0);
    }
}
