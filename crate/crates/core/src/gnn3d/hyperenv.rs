//! Local triplet hypergraph around a growth atom.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molio::{dot, norm, sub, MolGraph, Vec3};

pub const RBF_CENTERS: usize = 9;
/// Node-type bit, three distance encodings and three angle phases.
pub const TRIPLET_FEATURE_DIM: usize = 1 + 3 * RBF_CENTERS + 6;
/// Smallest distance fed to the `1/r²` prior term.
pub const PRIOR_MIN_R: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub protein_cutoff: f64,
    pub ligand_cutoff: f64,
    /// Width of the cosine switch.
    pub delta: f64,
    pub w0: f64,
    pub beta: f64,
    /// Spacing and width of the radial basis, Å.
    pub rbf_sigma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            protein_cutoff: 7.5,
            ligand_cutoff: 3.0,
            delta: 0.5,
            w0: 1.0,
            beta: 0.1,
            rbf_sigma: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0
            && self.protein_cutoff > self.delta
            && self.ligand_cutoff > self.delta
            && self.rbf_sigma > 0.0
            && self.beta >= 0.0
            && self.w0 >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid environment parameters {self:?}")));
        }
        Ok(())
    }

    /// Radial pivot `ρ = r_cut − 2Δ`.
    pub fn rho(&self, r_cut: f64) -> f64 {
        r_cut - 2.0 * self.delta
    }
}

/// Cosine switch: 1 up to `r_cut − Δ`, 0 from `r_cut` on.
pub fn f_cut(r: f64, r_cut: f64, delta: f64) -> f64 {
    if r <= r_cut - delta {
        1.0
    } else if r >= r_cut {
        0.0
    } else {
        0.5 * (1.0 + (PI * (r - r_cut + delta) / delta).cos())
    }
}

/// Distance discount `(1 − ω)/r² + ω w₀` with `ω = σ(−β(r² − ρ²))`.
pub fn g_prior(r: f64, rho: f64, beta: f64, w0: f64) -> f64 {
    let r = r.max(PRIOR_MIN_R);
    let omega = 1.0 / (1.0 + (beta * (r * r - rho * rho)).exp());
    (1.0 - omega) / (r * r) + omega * w0
}

pub fn rbf(r: f64, sigma: f64) -> [f64; RBF_CENTERS] {
    std::array::from_fn(|k| {
        let mu = k as f64 * sigma;
        (-(r - mu).powi(2) / (2.0 * sigma * sigma)).exp()
    })
}

/// `(cos θ, sin θ)` of the interior angle at `v`; `(1, 0)` when a side
/// at `v` has zero length.
fn phase(v: Vec3, p: Vec3, q: Vec3) -> [f64; 2] {
    let (u, w) = (sub(p, v), sub(q, v));
    let (nu, nw) = (norm(u), norm(w));
    if nu == 0.0 || nw == 0.0 {
        return [1.0, 0.0];
    }
    let c = (dot(u, w) / (nu * nw)).clamp(-1.0, 1.0);
    [c, (1.0 - c * c).max(0.0).sqrt()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvSource {
    Ligand(usize),
    Protein(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvAtom {
    pub source: EnvSource,
    pub pos: Vec3,
    pub r: f64,
    pub cutoff: f64,
}

/// Environment atoms of one growth atom and all ordered triplets over them.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperEnv {
    pub center: usize,
    pub center_pos: Vec3,
    pub atoms: Vec<EnvAtom>,
    /// `(b, b′)` indices into `atoms`, including `b = b′`.
    pub triplets: Vec<(usize, usize)>,
    pub features: Vec<[f64; TRIPLET_FEATURE_DIM]>,
    pub priors: Vec<f64>,
}

impl HyperEnv {
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Triplet features for vertices `a`, `b`, `b′`.
pub fn triplet_features(a: Vec3, b: Vec3, b2: Vec3, same: bool, rbf_sigma: f64) -> [f64; TRIPLET_FEATURE_DIM] {
    let mut f = [0.0; TRIPLET_FEATURE_DIM];
    f[0] = if same { 1.0 } else { 0.0 };
    let r_bb = if same { 0.0 } else { norm(sub(b, b2)) };
    let dists = [norm(sub(b, a)), norm(sub(b2, a)), r_bb];
    for (k, r) in dists.into_iter().enumerate() {
        f[1 + k * RBF_CENTERS..1 + (k + 1) * RBF_CENTERS].copy_from_slice(&rbf(r, rbf_sigma));
    }
    let angles = if same {
        [[1.0, 0.0]; 3]
    } else {
        [phase(a, b, b2), phase(b, a, b2), phase(b2, a, b)]
    };
    let off = 1 + 3 * RBF_CENTERS;
    for (k, p) in angles.iter().enumerate() {
        f[off + 2 * k] = p[0];
        f[off + 2 * k + 1] = p[1];
    }
    f
}

/// Environment of core atom `a`: protein atoms within the protein cutoff and
/// other core atoms within the ligand cutoff.
pub fn build_hyperenv(
    core: &MolGraph,
    core_xyz: &[Vec3],
    a: usize,
    protein_xyz: &[Vec3],
    cfg: &EnvConfig,
) -> Result<HyperEnv> {
    if core_xyz.len() != core.n_atoms() {
        return Err(Error::MissingContext("core coordinates required".into()));
    }
    if a >= core.n_atoms() {
        return Err(Error::InvalidAtom {
            atom: a,
            reason: format!("core has {} atoms", core.n_atoms()),
        });
    }
    let c = core_xyz[a];
    let mut atoms = Vec::new();
    for (i, &p) in protein_xyz.iter().enumerate() {
        let r = norm(sub(p, c));
        if r < cfg.protein_cutoff {
            atoms.push(EnvAtom {
                source: EnvSource::Protein(i),
                pos: p,
                r,
                cutoff: cfg.protein_cutoff,
            });
        }
    }
    for (i, &p) in core_xyz.iter().enumerate() {
        if i == a {
            continue;
        }
        let r = norm(sub(p, c));
        if r < cfg.ligand_cutoff {
            atoms.push(EnvAtom {
                source: EnvSource::Ligand(i),
                pos: p,
                r,
                cutoff: cfg.ligand_cutoff,
            });
        }
    }
    let n = atoms.len();
    let weight: Vec<f64> = atoms
        .iter()
        .map(|e| f_cut(e.r, e.cutoff, cfg.delta) * g_prior(e.r, cfg.rho(e.cutoff), cfg.beta, cfg.w0))
        .collect();
    let mut triplets = Vec::with_capacity(n * n);
    let mut features = Vec::with_capacity(n * n);
    let mut priors = Vec::with_capacity(n * n);
    for b in 0..n {
        for b2 in 0..n {
            triplets.push((b, b2));
            features.push(triplet_features(c, atoms[b].pos, atoms[b2].pos, b == b2, cfg.rbf_sigma));
            priors.push(weight[b] * weight[b2]);
        }
    }
    Ok(HyperEnv {
        center: a,
        center_pos: c,
        atoms,
        triplets,
        features,
        priors,
    })
}
