use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::graph::MolGraph;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Interior angle at `vertex` of the triangle (vertex, p, q), in radians.
/// Degenerate triangles (a zero-length side at the vertex) give 0.
pub fn angle_at(vertex: Vec3, p: Vec3, q: Vec3) -> f64 {
    let u = sub(p, vertex);
    let v = sub(q, vertex);
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// Signed dihedral angle p0-p1-p2-p3 in radians, in (-π, π].
pub fn dihedral(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3) -> f64 {
    let b0 = sub(p0, p1);
    let b1 = sub(p2, p1);
    let b2 = sub(p3, p2);
    let b1n = scale(b1, 1.0 / norm(b1));
    let v = sub(b0, scale(b1n, dot(b0, b1n)));
    let w = sub(b2, scale(b1n, dot(b2, b1n)));
    let x = dot(v, w);
    let y = dot(cross(b1n, v), w);
    y.atan2(x)
}

/// Rotation matrix for a right-handed rotation by `angle` about unit `axis`.
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let n = norm(axis);
    let [x, y, z] = scale(axis, 1.0 / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Uniformly distributed random rotation (unit quaternion from four normals).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        for c in q.iter_mut() {
            *c = rng.sample(StandardNormal);
        }
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-8 {
            q.iter_mut().for_each(|c| *c /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Applies `x ↦ R x + t` to every point.
pub fn rigid_transform(points: &[Vec3], rot: &Mat3, t: Vec3) -> Vec<Vec3> {
    points.iter().map(|&p| add(mat_vec(rot, p), t)).collect()
}

/// Rotates `points` by `angle` about the line through `origin` along `axis`.
pub fn rigid_rotate(points: &[Vec3], origin: Vec3, axis: Vec3, angle: f64) -> Vec<Vec3> {
    let m = axis_angle(axis, angle);
    points
        .iter()
        .map(|&p| add(origin, mat_vec(&m, sub(p, origin))))
        .collect()
}

const BOND_LEN: f64 = 1.45;
const ANGLE_LEN: f64 = 2.45;
const CONTACT: f64 = 3.0;

/// Crude coordinate embedding by gradient descent on a harmonic bond,
/// 1-3 distance and soft-repulsion energy. Deterministic for a given seed.
pub fn embed_3d(g: &MolGraph, seed: u64) -> Vec<Vec3> {
    let n = g.n_atoms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n == 0 {
        return Vec::new();
    }
    // BFS placement gives an untangled start.
    let mut x: Vec<Vec3> = vec![[0.0; 3]; n];
    let mut placed = vec![false; n];
    for root in 0..n {
        if placed[root] {
            continue;
        }
        placed[root] = true;
        x[root] = [root as f64 * 6.0, 0.0, 0.0];
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in g.neighbors(u) {
                if placed[v] {
                    continue;
                }
                placed[v] = true;
                let d: Vec3 = [
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ];
                let dn = norm(d).max(1e-6);
                x[v] = add(x[u], scale(d, BOND_LEN / dn));
                queue.push_back(v);
            }
        }
    }
    let mut targets: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut pair_kind = vec![0u8; n * n];
    for b in g.bonds() {
        pair_kind[b.a * n + b.b] = 1;
        pair_kind[b.b * n + b.a] = 1;
    }
    for c in 0..n {
        let nb = g.neighbors(c);
        for (i, &(p, _)) in nb.iter().enumerate() {
            for &(q, _) in &nb[i + 1..] {
                if pair_kind[p * n + q] == 0 {
                    pair_kind[p * n + q] = 2;
                    pair_kind[q * n + p] = 2;
                }
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            match pair_kind[i * n + j] {
                1 => targets.push((i, j, BOND_LEN, 1.0)),
                2 => targets.push((i, j, ANGLE_LEN, 0.5)),
                _ => targets.push((i, j, CONTACT, 0.1)),
            }
        }
    }
    let step = 0.05;
    for _ in 0..600 {
        let mut grad = vec![[0.0; 3]; n];
        for &(i, j, d0, k) in &targets {
            let diff = sub(x[i], x[j]);
            let d = norm(diff).max(1e-6);
            let is_repulsive_only = d0 == CONTACT;
            if is_repulsive_only && d >= d0 {
                continue;
            }
            let f = 2.0 * k * (d - d0) / d;
            for c in 0..3 {
                grad[i][c] += f * diff[c];
                grad[j][c] -= f * diff[c];
            }
        }
        for i in 0..n {
            for c in 0..3 {
                x[i][c] -= step * grad[i][c].clamp(-5.0, 5.0);
            }
        }
    }
    x
}
