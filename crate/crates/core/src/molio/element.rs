use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MolError;

/// Chemical elements accepted by the parsers.
///
/// The first eleven variants have their own slot in the atom feature vector;
/// everything else shares the trailing "other" slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    S,
    F,
    Cl,
    Br,
    I,
    P,
    B,
    Si,
    Se,
    As,
    Te,
    Li,
    Na,
    K,
    Mg,
    Ca,
    Al,
    Mn,
    Fe,
    Co,
    Ni,
    Cu,
    Zn,
    Pt,
    Hg,
}

/// Number of slots in the element one-hot block.
pub const ELEMENT_SLOTS: usize = 12;

impl Element {
    pub const ALL: [Element; 28] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::P,
        Element::B,
        Element::Si,
        Element::Se,
        Element::As,
        Element::Te,
        Element::Li,
        Element::Na,
        Element::K,
        Element::Mg,
        Element::Ca,
        Element::Al,
        Element::Mn,
        Element::Fe,
        Element::Co,
        Element::Ni,
        Element::Cu,
        Element::Zn,
        Element::Pt,
        Element::Hg,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::P => "P",
            Element::B => "B",
            Element::Si => "Si",
            Element::Se => "Se",
            Element::As => "As",
            Element::Te => "Te",
            Element::Li => "Li",
            Element::Na => "Na",
            Element::K => "K",
            Element::Mg => "Mg",
            Element::Ca => "Ca",
            Element::Al => "Al",
            Element::Mn => "Mn",
            Element::Fe => "Fe",
            Element::Co => "Co",
            Element::Ni => "Ni",
            Element::Cu => "Cu",
            Element::Zn => "Zn",
            Element::Pt => "Pt",
            Element::Hg => "Hg",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::Li => 3,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Na => 11,
            Element::Mg => 12,
            Element::Al => 13,
            Element::Si => 14,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::K => 19,
            Element::Ca => 20,
            Element::Mn => 25,
            Element::Fe => 26,
            Element::Co => 27,
            Element::Ni => 28,
            Element::Cu => 29,
            Element::Zn => 30,
            Element::As => 33,
            Element::Se => 34,
            Element::Br => 35,
            Element::Te => 52,
            Element::I => 53,
            Element::Pt => 78,
            Element::Hg => 80,
        }
    }

    /// Slot in the 12-way element one-hot block.
    pub fn feature_slot(self) -> usize {
        match self {
            Element::C => 0,
            Element::N => 1,
            Element::O => 2,
            Element::S => 3,
            Element::F => 4,
            Element::Cl => 5,
            Element::Br => 6,
            Element::I => 7,
            Element::P => 8,
            Element::B => 9,
            Element::Si => 10,
            _ => 11,
        }
    }

    /// Normal valences used to assign implicit hydrogens, in increasing order.
    /// Empty for elements that never carry implicit hydrogens.
    pub fn default_valences(self) -> &'static [u32] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::Si => &[4],
            Element::Se => &[2, 4, 6],
            Element::As => &[3, 5],
            Element::Te => &[2, 4, 6],
            _ => &[],
        }
    }

    /// Upper bound on the valence of a neutral atom.
    pub fn max_valence(self) -> u32 {
        match self {
            Element::B => 3,
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::F => 1,
            Element::Cl | Element::Br | Element::I => 7,
            Element::P | Element::As => 5,
            Element::S | Element::Se | Element::Te => 6,
            Element::Si => 4,
            Element::Li | Element::Na | Element::K => 1,
            Element::Mg | Element::Ca | Element::Zn | Element::Hg => 2,
            Element::Al => 3,
            Element::Mn | Element::Fe | Element::Co | Element::Ni | Element::Cu | Element::Pt => 6,
        }
    }

    /// True for elements that may be written without brackets in SMILES.
    pub fn is_organic_subset(self) -> bool {
        matches!(
            self,
            Element::B
                | Element::C
                | Element::N
                | Element::O
                | Element::P
                | Element::S
                | Element::F
                | Element::Cl
                | Element::Br
                | Element::I
        )
    }

    /// Elements that may be written in lowercase aromatic form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S | Element::Se | Element::As
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = MolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol() == s)
            .ok_or_else(|| MolError::UnsupportedElement(s.to_string()))
    }
}
