use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::element::Element;
use super::graph::{Atom, BondOrder, MolGraph, Role};
use super::smiles::implicit_hydrogens;
use super::MolError;

/// A ligand-protein complex with both partners posed in the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Complex {
    pub id: String,
    pub family_tag: String,
    pub ligand: MolGraph,
    pub protein: MolGraph,
    /// Protein bond indices that torsion jitter may rotate.
    pub rotatable: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub el: String,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    #[serde(default)]
    pub q: i8,
    /// Hydrogen count; derived from default valences when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolRecord {
    pub atoms: Vec<AtomRecord>,
    #[serde(default)]
    pub bonds: Vec<(usize, usize, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rotatable: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexRecord {
    pub id: String,
    pub family_tag: String,
    pub ligand: MolRecord,
    pub protein: MolRecord,
}

impl MolRecord {
    /// Builds a positioned graph. Atoms touching an aromatic bond are aromatic.
    pub fn to_graph(&self, role: Role, what: &str) -> Result<MolGraph, MolError> {
        let n = self.atoms.len();
        let mut atoms = Vec::with_capacity(n);
        for (i, r) in self.atoms.iter().enumerate() {
            let element: Element = r.el.parse()?;
            let (Some(x), Some(y), Some(z)) = (r.x, r.y, r.z) else {
                return Err(MolError::MissingCoords(format!("{what} atom {i}")));
            };
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return Err(MolError::MissingCoords(format!("{what} atom {i} has non-finite coordinates")));
            }
            let mut atom = Atom::new(element);
            atom.formal_charge = r.q;
            atom.coords = Some([x, y, z]);
            atoms.push(atom);
        }
        let mut bonds = Vec::with_capacity(self.bonds.len());
        for (a, b, o) in &self.bonds {
            if *a >= n || *b >= n {
                return Err(MolError::IndexOutOfRange {
                    index: (*a).max(*b),
                    len: n,
                });
            }
            let order = BondOrder::parse(o)?;
            if order == BondOrder::Aromatic {
                atoms[*a].aromatic = true;
                atoms[*b].aromatic = true;
            }
            bonds.push((*a, *b, order));
        }
        let topo = MolGraph::new_unchecked(atoms.clone(), bonds.iter().copied(), role)?;
        for (i, r) in self.atoms.iter().enumerate() {
            atoms[i].n_hydrogens = match r.h {
                Some(h) => h,
                None => implicit_hydrogens(&topo, i),
            };
        }
        MolGraph::new(atoms, bonds, role)
    }

    pub fn from_graph(g: &MolGraph, rotatable: &[usize]) -> Result<Self, MolError> {
        let coords = g.coords().ok_or_else(|| MolError::MissingCoords("graph has no coordinates".into()))?;
        let atoms = g
            .atoms()
            .iter()
            .zip(coords)
            .map(|(a, c)| AtomRecord {
                el: a.element.symbol().to_string(),
                x: Some(c[0]),
                y: Some(c[1]),
                z: Some(c[2]),
                q: a.formal_charge,
                h: Some(a.n_hydrogens),
            })
            .collect();
        let bonds = g
            .bonds()
            .iter()
            .map(|b| (b.a, b.b, b.order.as_str().to_string()))
            .collect();
        Ok(MolRecord {
            atoms,
            bonds,
            rotatable: rotatable.to_vec(),
        })
    }
}

impl ComplexRecord {
    pub fn to_complex(&self) -> Result<Complex, MolError> {
        let ligand = self.ligand.to_graph(Role::Ligand, "ligand")?;
        let protein = self.protein.to_graph(Role::Protein, "protein")?;
        if ligand.n_atoms() == 0 {
            return Err(MolError::Invalid("complex has an empty ligand".into()));
        }
        if let Some(&bad) = self.protein.rotatable.iter().find(|&&b| b >= protein.n_bonds()) {
            return Err(MolError::IndexOutOfRange {
                index: bad,
                len: protein.n_bonds(),
            });
        }
        Ok(Complex {
            id: self.id.clone(),
            family_tag: self.family_tag.clone(),
            ligand,
            protein,
            rotatable: self.protein.rotatable.clone(),
        })
    }

    pub fn from_complex(c: &Complex) -> Result<Self, MolError> {
        Ok(ComplexRecord {
            id: c.id.clone(),
            family_tag: c.family_tag.clone(),
            ligand: MolRecord::from_graph(&c.ligand, &[])?,
            protein: MolRecord::from_graph(&c.protein, &c.rotatable)?,
        })
    }
}

/// Parses one JSON-lines record; `line` is 1-based and used in errors.
pub fn parse_complex_line(text: &str, line: usize) -> Result<Complex, MolError> {
    let rec: ComplexRecord = serde_json::from_str(text).map_err(|e| MolError::Record {
        line,
        msg: e.to_string(),
    })?;
    rec.to_complex().map_err(|e| match e {
        MolError::Io(_) => e,
        other => MolError::Record {
            line,
            msg: other.to_string(),
        },
    })
}

pub fn load_complexes(path: &Path) -> Result<Vec<Complex>, MolError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_complex_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_complexes(path: &Path, complexes: &[Complex]) -> Result<(), MolError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in complexes {
        let rec = ComplexRecord::from_complex(c)?;
        let s = serde_json::to_string(&rec).map_err(|e| MolError::Invalid(e.to_string()))?;
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}
