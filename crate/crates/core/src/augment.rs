//! Training-time coordinate perturbations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molio::{norm, rigid_rotate, scale, sub, MolGraph, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Target per-component standard deviation, Å.
    pub sigma: f64,
    /// Maximum displacement norm in units of `sigma`.
    pub clamp: f64,
    pub smoothing_iters: usize,
    /// Half-width of the torsion perturbation, degrees.
    pub torsion_range: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma: 0.5,
            clamp: 2.0,
            smoothing_iters: 5,
            torsion_range: 10.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be positive", self.sigma)));
        }
        if !(self.clamp > 0.0) || !(self.torsion_range >= 0.0) {
            return Err(Error::Config("noise clamp must be positive and torsion range non-negative".into()));
        }
        Ok(())
    }
}

/// White noise smoothed along bonds, before rescaling and clamping.
pub fn smoothed_white_noise<R: Rng + ?Sized>(g: &MolGraph, iters: usize, rng: &mut R) -> Vec<Vec3> {
    let n = g.n_atoms();
    let mut d: Vec<Vec3> = (0..n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    for _ in 0..iters {
        d = (0..n)
            .map(|i| {
                let mut s = d[i];
                for &(j, _) in g.neighbors(i) {
                    for k in 0..3 {
                        s[k] += d[j][k];
                    }
                }
                scale(s, 1.0 / (1 + g.degree(i)) as f64)
            })
            .collect();
    }
    d
}

/// Rescales so the root mean square over all `3n` components is `sigma`,
/// then caps each displacement vector at `clamp·sigma`.
pub fn rescale_and_clamp(d: &mut [Vec3], sigma: f64, clamp: f64) {
    if d.is_empty() {
        return;
    }
    let ms = d.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum::<f64>() / (3 * d.len()) as f64;
    if ms > 0.0 {
        let s = sigma / ms.sqrt();
        d.iter_mut().for_each(|v| *v = scale(*v, s));
    }
    let cap = clamp * sigma;
    for v in d.iter_mut() {
        let l = norm(*v);
        if l > cap {
            *v = scale(*v, cap / l);
        }
    }
}

/// Bond-correlated displacements for every atom.
pub fn colored_noise<R: Rng + ?Sized>(g: &MolGraph, cfg: &NoiseConfig, rng: &mut R) -> Vec<Vec3> {
    let mut d = smoothed_white_noise(g, cfg.smoothing_iters, rng);
    rescale_and_clamp(&mut d, cfg.sigma, cfg.clamp);
    d
}

fn coords(g: &MolGraph) -> Result<Vec<Vec3>> {
    g.coords().ok_or_else(|| Error::MissingContext("coordinates required".into()))
}

/// Coordinates displaced by coloured noise.
pub fn perturb<R: Rng + ?Sized>(g: &MolGraph, cfg: &NoiseConfig, rng: &mut R) -> Result<Vec<Vec3>> {
    let x = coords(g)?;
    let d = colored_noise(g, cfg, rng);
    Ok(x.iter().zip(&d).map(|(p, q)| crate::molio::add(*p, *q)).collect())
}

/// Atoms on the `b` side of bond `(a, b)`, or `None` if the bond is in a ring.
pub fn side_of(g: &MolGraph, a: usize, b: usize) -> Option<Vec<usize>> {
    let mut seen = vec![false; g.n_atoms()];
    seen[a] = true;
    seen[b] = true;
    let mut stack = vec![b];
    let mut out = vec![b];
    while let Some(i) = stack.pop() {
        for &(j, _) in g.neighbors(i) {
            if i == b && j == a {
                continue;
            }
            if j == a {
                return None;
            }
            if !seen[j] {
                seen[j] = true;
                out.push(j);
                stack.push(j);
            }
        }
    }
    Some(out)
}

/// Rotates the smaller side of each listed acyclic bond by `angles[k]`
/// radians about the bond axis.
pub fn rotate_torsions(g: &MolGraph, x: &mut [Vec3], bonds: &[usize], angles: &[f64]) {
    for (&bi, &phi) in bonds.iter().zip(angles) {
        let b = &g.bonds()[bi];
        let (Some(sb), Some(sa)) = (side_of(g, b.a, b.b), side_of(g, b.b, b.a)) else {
            continue;
        };
        let (pivot, other, moving) = if sb.len() <= sa.len() { (b.a, b.b, sb) } else { (b.b, b.a, sa) };
        let axis = sub(x[other], x[pivot]);
        if norm(axis) == 0.0 {
            continue;
        }
        let pts: Vec<Vec3> = moving.iter().map(|&i| x[i]).collect();
        let rotated = rigid_rotate(&pts, x[pivot], axis, phi);
        for (&i, p) in moving.iter().zip(rotated) {
            x[i] = p;
        }
    }
}

/// Perturbs every rotatable bond by an angle uniform in ±`torsion_range`.
pub fn torsion_jitter<R: Rng + ?Sized>(
    g: &MolGraph,
    rotatable: &[usize],
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    let mut x = coords(g)?;
    let r = cfg.torsion_range.to_radians();
    let angles: Vec<f64> = rotatable
        .iter()
        .map(|_| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 })
        .collect();
    rotate_torsions(g, &mut x, rotatable, &angles);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molio::{dihedral, distance, embed_3d, parse_smiles};

    #[test]
    fn isolated_atom_is_not_smoothed() {
        let g = parse_smiles("C").unwrap();
        let mut a = crate::rng::seeded(1);
        let mut b = crate::rng::seeded(1);
        assert_eq!(smoothed_white_noise(&g, 5, &mut a), smoothed_white_noise(&g, 0, &mut b));
    }

    #[test]
    fn bonded_pair_moves_together() {
        let g = parse_smiles("CC").unwrap();
        let d = smoothed_white_noise(&g, 1, &mut crate::rng::seeded(2));
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn rescale_is_exact_before_clamp() {
        let g = parse_smiles("CCCCCCCCCC").unwrap();
        let mut d = smoothed_white_noise(&g, 5, &mut crate::rng::seeded(3));
        rescale_and_clamp(&mut d, 0.5, f64::INFINITY);
        let ms = d.iter().flat_map(|v| v.iter()).map(|c| c * c).sum::<f64>() / 30.0;
        assert!((ms.sqrt() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn ethane_torsion_turns_exactly() {
        let g = parse_smiles("CC(C)C(C)C").unwrap();
        let x0 = embed_3d(&g, 0);
        let g = g.with_coords(&x0);
        let bi = g.bond_between(1, 3).map(|b| g.bonds().iter().position(|c| c == b).unwrap()).unwrap();
        let mut x = x0.clone();
        rotate_torsions(&g, &mut x, &[bi], &[10f64.to_radians()]);
        let before = dihedral(x0[0], x0[1], x0[3], x0[4]);
        let after = dihedral(x[0], x[1], x[3], x[4]);
        let mut delta = (after - before).to_degrees().abs();
        if delta > 180.0 {
            delta = 360.0 - delta;
        }
        assert!((delta - 10.0).abs() < 1e-9, "{delta}");
        for b in g.bonds() {
            assert!((distance(x[b.a], x[b.b]) - distance(x0[b.a], x0[b.b])).abs() < 1e-10);
        }
    }

    #[test]
    fn ring_bonds_are_not_rotated() {
        let g = parse_smiles("C1CCCCC1").unwrap();
        let x0 = embed_3d(&g, 0);
        let mut x = x0.clone();
        rotate_torsions(&g, &mut x, &[0], &[0.3]);
        assert_eq!(x, x0);
    }
}
