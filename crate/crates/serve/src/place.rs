//! Provisional coordinates for newly attached motif atoms.
//!
//! The attachment atom goes one bond length out along the growth direction,
//! the motif body points away from the core, and the torsion about the new
//! bond is picked from a coarse scan to keep clear of nearby atoms. This is
//! a placeholder for a conformer generator and only good enough for scoring
//! the next step.

use pqr::molio::{add, axis_angle, cross, dot, embed_3d, mat_vec, norm, scale, sub, MolGraph, Vec3};
use pqr::shred::Motif;

pub const BOND_LENGTH: f64 = 1.5;
pub const TORSION_STEP_DEG: f64 = 30.0;
const EMBED_SEED: u64 = 0;

fn unit(v: Vec3) -> Option<Vec3> {
    let n = norm(v);
    (n > 1e-9).then(|| scale(v, 1.0 / n))
}

/// Any unit vector orthogonal to `v`.
fn orthogonal(v: Vec3) -> Vec3 {
    let probe = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    unit(cross(v, probe)).expect("probe is not parallel")
}

/// Direction pointing away from the neighbours of `atom`.
pub fn growth_direction(core: &MolGraph, xyz: &[Vec3], atom: usize) -> Vec3 {
    let nbrs: Vec<Vec3> = core.neighbors(atom).iter().map(|&(j, _)| sub(xyz[atom], xyz[j])).collect();
    let sum = nbrs.iter().fold([0.0; 3], |a, &b| add(a, unit(b).unwrap_or([0.0; 3])));
    match (unit(sum), nbrs.first()) {
        (Some(u), _) => u,
        // Linear or symmetric neighbourhood.
        (None, Some(&b)) => orthogonal(b),
        (None, None) => [1.0, 0.0, 0.0],
    }
}

/// Rotation taking unit `a` onto unit `b`.
fn align(a: Vec3, b: Vec3) -> pqr::molio::Mat3 {
    let c = dot(a, b).clamp(-1.0, 1.0);
    match unit(cross(a, b)) {
        Some(axis) => axis_angle(axis, c.acos()),
        None if c > 0.0 => axis_angle([1.0, 0.0, 0.0], 0.0),
        None => axis_angle(orthogonal(a), std::f64::consts::PI),
    }
}

/// Coordinates for the atoms of `motif` bonded to `atom` of a posed `core`,
/// in motif atom order. `obstacles` are extra atoms to avoid, such as the
/// pocket.
pub fn place_motif(core: &MolGraph, atom: usize, motif: &Motif, obstacles: &[Vec3]) -> Option<Vec<Vec3>> {
    let xyz = core.coords()?;
    let u = growth_direction(core, &xyz, atom);
    let local = embed_3d(&motif.graph, EMBED_SEED);
    let a0 = local[motif.attachment];
    let n = local.len() as f64;
    let centroid = scale(local.iter().fold([0.0; 3], |s, &p| add(s, p)), 1.0 / n);
    let w = unit(sub(centroid, a0)).unwrap_or(u);
    let rot = align(w, u);
    let anchor = add(xyz[atom], scale(u, BOND_LENGTH));
    let base: Vec<Vec3> = local.iter().map(|&p| add(anchor, mat_vec(&rot, sub(p, a0)))).collect();
    let others: Vec<Vec3> = xyz
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != atom)
        .map(|(_, &p)| p)
        .chain(obstacles.iter().copied())
        .collect();
    let steps = (360.0 / TORSION_STEP_DEG).round() as usize;
    let mut best: Option<(f64, Vec<Vec3>)> = None;
    for k in 0..steps {
        let r = axis_angle(u, (k as f64 * TORSION_STEP_DEG).to_radians());
        let cand: Vec<Vec3> = base.iter().map(|&p| add(anchor, mat_vec(&r, sub(p, anchor)))).collect();
        let clearance = cand
            .iter()
            .flat_map(|&p| others.iter().map(move |&o| norm(sub(p, o))))
            .fold(f64::INFINITY, f64::min);
        // Strict comparison keeps the first of tied angles.
        if best.as_ref().is_none_or(|(c, _)| clearance > *c) {
            best = Some((clearance, cand));
        }
    }
    best.map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pqr::molio::{distance, parse_smiles};

    fn posed(smiles: &str) -> MolGraph {
        let g = parse_smiles(smiles).unwrap();
        let xyz = embed_3d(&g, 1);
        g.with_coords(&xyz)
    }

    #[test]
    fn attachment_sits_one_bond_out() {
        let core = posed("c1ccccc1");
        let m = Motif::from_smiles("CC", 0).unwrap();
        let p = place_motif(&core, 2, &m, &[]).unwrap();
        let xyz = core.coords().unwrap();
        assert!((distance(p[0], xyz[2]) - BOND_LENGTH).abs() < 1e-9);
        let u = growth_direction(&core, &xyz, 2);
        assert!(dot(sub(p[1], p[0]), u) > 0.0, "motif body points away from the core");
    }

    #[test]
    fn placement_is_deterministic() {
        let core = posed("CCO");
        let m = Motif::from_smiles("c1ccccc1", 0).unwrap();
        assert_eq!(place_motif(&core, 0, &m, &[]), place_motif(&core, 0, &m, &[]));
    }

    #[test]
    fn isolated_atom_has_a_direction() {
        let core = posed("C");
        let xyz = core.coords().unwrap();
        assert_eq!(growth_direction(&core, &xyz, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn unposed_core_gives_none() {
        let core = parse_smiles("CC").unwrap();
        assert!(place_motif(&core, 0, &Motif::from_smiles("C", 0).unwrap(), &[]).is_none());
    }
}
