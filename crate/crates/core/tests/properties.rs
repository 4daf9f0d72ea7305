//! Property tests over the model-level invariants.

use pqr::augment::{colored_noise, rescale_and_clamp, smoothed_white_noise, NoiseConfig};
use pqr::fixtures::MoleculeGenerator;
use pqr::gnn2d::{Model2D, Model2DConfig};
use pqr::gnn3d::{f_cut, Context3D, Model3D, Model3DConfig};
use pqr::molio::{add, embed_3d, is_isomorphic, norm, parse_smiles, random_rotation, rigid_transform, sub, MolGraph, Vec3};
use pqr::posterior::{Posterior, View};
use pqr::recon::{replay, sample_pathway};
use pqr::shred::{shred_with_rng, Motif, MotifCounts, ShredPolicy, Vocabulary};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn vocab() -> Vocabulary {
    let mut c = MotifCounts::new();
    for (s, n) in [("C", 50), ("Cl", 20), ("O", 15), ("N", 10), ("c1ccccc1", 5)] {
        let m = Motif::from_smiles(s, 0).unwrap();
        c.insert(m.key(), (m, n));
    }
    Vocabulary::from_counts(c).unwrap()
}

fn molecules() -> &'static [MolGraph] {
    static MOLS: std::sync::OnceLock<Vec<MolGraph>> = std::sync::OnceLock::new();
    MOLS.get_or_init(|| {
        MoleculeGenerator::new()
            .unwrap()
            .corpus(64, &mut pqr::rng::derive(7, &[]))
            .unwrap()
            .into_iter()
            .map(|e| e.graph)
            .collect()
    })
}

fn posed(smiles: &str, seed: u64) -> MolGraph {
    let g = parse_smiles(smiles).unwrap();
    let x = embed_3d(&g, seed);
    g.with_coords(&x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_factors_normalize(
        lq in proptest::collection::vec(-6.0f64..6.0, 5),
        lr in proptest::collection::vec(-6.0f64..6.0, 5),
    ) {
        let v = vocab();
        let q: Vec<f64> = lq.iter().map(|x| x.exp()).collect();
        let r: Vec<f64> = lr.iter().map(|x| x.exp()).collect();
        for view in View::ALL {
            let post = Posterior::from_factors(&v, &q, Some(&r), view).unwrap();
            let s2: f64 = post.rows.iter().map(|x| x.p * x.q_hat).sum();
            let s3: f64 = post.rows.iter().map(|x| x.p * x.q_hat * x.r_hat).sum();
            prop_assert!((s2 - 1.0).abs() < 1e-9);
            prop_assert!((s3 - 1.0).abs() < 1e-9);
            prop_assert!((post.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let h = post.entropy();
            prop_assert!((0.0..=1.0).contains(&h));
        }
    }

    #[test]
    fn shredding_partitions_and_replays(idx in 0usize..64, seed in any::<u64>()) {
        let g = &molecules()[idx];
        let mut rng = pqr::rng::seeded(seed);
        let sh = shred_with_rng(g, &ShredPolicy::default(), &mut rng).unwrap();
        let mut seen = vec![0; g.n_atoms()];
        for atoms in &sh.parts {
            for &a in atoms {
                seen[a] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let path = sample_pathway(g, &sh, &mut rng).unwrap();
        prop_assert!(is_isomorphic(&replay(&path, &sh, g).unwrap(), g));
    }

    #[test]
    fn q_is_permutation_equivariant(idx in 0usize..64, seed in any::<u64>()) {
        let g = &molecules()[idx];
        let m = Model2D::new(Model2DConfig { d: 8, init_seed: 3 }, vocab(), &ShredPolicy::default()).unwrap();
        let mut perm: Vec<usize> = (0..g.n_atoms()).collect();
        perm.shuffle(&mut pqr::rng::seeded(seed));
        let h = g.permuted(&perm);
        let atom = g.atoms().iter().position(|a| a.n_hydrogens > 0).unwrap();
        let moved_to = perm.iter().position(|&o| o == atom).unwrap();
        let a = m.q_all(g, atom).unwrap();
        let b = m.q_all(&h, moved_to).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x / y - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn r_is_invariant_to_rigid_motion_and_relabelling(seed in any::<u64>(), t in proptest::array::uniform3(-30.0f64..30.0)) {
        let m3 = Model3D::new(Model3DConfig { init_seed: 4, ..Default::default() }, 8, vocab(), &ShredPolicy::default().fingerprint()).unwrap();
        let core = posed("CCc1ccccc1", 1);
        let prot = posed("NCC(=O)NCC(=O)O", 2);
        let c0 = core.coords().unwrap()[0];
        let px = prot.coords().unwrap();
        let shift = sub(add(c0, [3.0, 0.5, 0.5]), px[0]);
        let prot = prot.clone().with_coords(&px.iter().map(|p| add(*p, shift)).collect::<Vec<Vec3>>());
        let r0 = m3.r_all(&Context3D::new(&core, 0, Some(&prot)).unwrap()).unwrap();

        let mut rng = pqr::rng::seeded(seed);
        let rot = random_rotation(&mut rng);
        let move_all = |g: &MolGraph| g.clone().with_coords(&rigid_transform(&g.coords().unwrap(), &rot, t));
        let mut perm: Vec<usize> = (0..prot.n_atoms()).collect();
        perm.shuffle(&mut rng);
        let moved = move_all(&prot);
        let mx = moved.coords().unwrap();
        let shuffled = moved.permuted(&perm).with_coords(&perm.iter().map(|&o| mx[o]).collect::<Vec<_>>());
        let core_moved = move_all(&core);
        let r1 = m3.r_all(&Context3D::new(&core_moved, 0, Some(&shuffled)).unwrap()).unwrap();
        for (x, y) in r0.iter().zip(&r1) {
            prop_assert!((x / y - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cutoff_is_monotone_and_bounded(a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (fl, fh) = (f_cut(lo, 7.5, 1.0), f_cut(hi, 7.5, 1.0));
        prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        prop_assert!(fl >= fh);
    }

    #[test]
    fn rescale_is_exact_before_clamping(idx in 0usize..64, seed in any::<u64>(), sigma in 0.1f64..2.0) {
        let g = &molecules()[idx];
        let mut d = smoothed_white_noise(g, 5, &mut pqr::rng::seeded(seed));
        rescale_and_clamp(&mut d, sigma, f64::INFINITY);
        let ms = d.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum::<f64>() / (3 * d.len()) as f64;
        prop_assert!((ms.sqrt() - sigma).abs() < 1e-10);
    }

    #[test]
    fn noise_never_exceeds_the_clamp(idx in 0usize..64, seed in any::<u64>()) {
        let g = &molecules()[idx];
        let cfg = NoiseConfig::default();
        let d = colored_noise(g, &cfg, &mut pqr::rng::seeded(seed));
        prop_assert!(d.iter().all(|v| norm(*v) <= cfg.clamp * cfg.sigma + 1e-12));
    }
}
