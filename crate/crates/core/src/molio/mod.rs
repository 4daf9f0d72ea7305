//! Molecular graphs: parsing, validation, featurization and serialization.

mod complex;
mod element;
mod features;
mod geometry;
mod graph;
mod smiles;

use thiserror::Error;

pub use complex::{load_complexes, parse_complex_line, write_complexes, AtomRecord, Complex, ComplexRecord, MolRecord};
pub use element::{Element, ELEMENT_SLOTS};
pub use features::{
    atom_features, bond_features, featurize, AtomFeatures, BondFeatures, ATOM_FEATURE_DIM, ATOM_ONE_HOT_BLOCKS,
    BOND_FEATURE_DIM,
};
pub use geometry::{
    add, angle_at, axis_angle, cross, dihedral, distance, dot, embed_3d, mat_vec, norm, random_rotation, rigid_rotate,
    rigid_transform, scale, sub, Mat3, Vec3,
};
pub use graph::{find_isomorphism, is_isomorphic, Atom, Bond, BondOrder, Chirality, Hybridization, MolGraph, Role};
pub use smiles::{implicit_hydrogens, parse_smiles, parse_smiles_corpus, write_smiles};

#[derive(Debug, Error)]
pub enum MolError {
    #[error("SMILES syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("valence violation on atom {atom} ({element}): uses {used}, allows {allowed}")]
    Valence {
        atom: usize,
        element: Element,
        used: u32,
        allowed: u32,
    },
    #[error("unsupported element '{0}'")]
    UnsupportedElement(String),
    #[error("atom index {index} out of range for {len} atoms")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("atom {atom} has no open valence")]
    NoOpenValence { atom: usize },
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("missing coordinates: {0}")]
    MissingCoords(String),
    #[error("cannot write SMILES: {0}")]
    Unwritable(String),
    #[error("invalid molecule: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
