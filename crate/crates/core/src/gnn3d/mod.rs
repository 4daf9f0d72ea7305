//! The 3D likelihood factor `r = α₃/(1−α₃)` over triplet hypergraphs.

mod hyperenv;
mod layers;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hyperenv::{
    build_hyperenv, f_cut, g_prior, rbf, triplet_features, EnvAtom, EnvConfig, EnvSource, HyperEnv, PRIOR_MIN_R,
    RBF_CENTERS, TRIPLET_FEATURE_DIM,
};
pub use layers::{Direction, Reduce, TaPass, TripletBatch};

use crate::augment::{colored_noise, rotate_torsions, NoiseConfig};
use crate::error::{Error, Result};
use crate::gnn2d::{AtomEncoder, GraphBatch, Model2D, ENCODER_PREFIX};
use crate::molio::{add, norm, sub, Complex, MolGraph, Role, Vec3};
use crate::recon::{corpus_steps, Baseline, MotifTable, ReconstructionStep};
use crate::shred::{Motif, MotifKey, ShredPolicy, Vocabulary};
use crate::tensor::nn::{Linear, ResTrans};
use crate::tensor::{Checkpoint, ParamSet, Tape, Tensor, Var};
use crate::train::{pair_batch, train, ContrastiveModel, HasStep, Item, NegativeSource, TrainConfig, TrainReport};

/// Bonds by which a protein crop is grown beyond the distance cutoff, matching
/// the receptive field of the atom encoder.
pub const CROP_EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Model3DConfig {
    pub env: EnvConfig,
    pub init_seed: u64,
}

impl Default for Model3DConfig {
    fn default() -> Self {
        Model3DConfig {
            env: EnvConfig::default(),
            init_seed: 0,
        }
    }
}

/// Protein atoms around one growth atom, posed, with rotatable bonds
/// renumbered for the crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Pocket {
    pub graph: MolGraph,
    pub rotatable: Vec<usize>,
}

/// Protein atoms within `radius` of `center`, grown by `expand` bonds.
pub fn crop_pocket(protein: &MolGraph, rotatable: &[usize], center: Vec3, radius: f64, expand: usize) -> Result<Option<Pocket>> {
    let xyz = protein
        .coords()
        .ok_or_else(|| Error::MissingContext("protein coordinates required".into()))?;
    let n = protein.n_atoms();
    let mut depth = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for (i, &p) in xyz.iter().enumerate() {
        if norm(sub(p, center)) < radius {
            depth[i] = 0;
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return Ok(None);
    }
    while let Some(i) = queue.pop_front() {
        if depth[i] == expand {
            continue;
        }
        for &(j, _) in protein.neighbors(i) {
            if depth[j] == usize::MAX {
                depth[j] = depth[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| depth[i] != usize::MAX).collect();
    let mut map = vec![usize::MAX; n];
    for (k, &i) in keep.iter().enumerate() {
        map[i] = k;
    }
    let graph = protein.induced_subgraph(&keep, Role::Protein)?;
    let rot = rotatable
        .iter()
        .filter_map(|&bi| {
            let b = protein.bonds().get(bi)?;
            let (x, y) = (map[b.a], map[b.b]);
            if x == usize::MAX || y == usize::MAX {
                return None;
            }
            graph.neighbors(x).iter().find(|&&(nb, _)| nb == y).map(|&(_, k)| k)
        })
        .collect();
    Ok(Some(Pocket { graph, rotatable: rot }))
}

/// One 3D training or evaluation example.
#[derive(Debug, Clone)]
pub struct Example3D {
    pub step: ReconstructionStep,
    pub pocket: Option<Pocket>,
    /// Source-pose positions of the ground-truth motif atoms.
    pub motif_xyz: Vec<Vec3>,
    /// Shortest distance from a ground-truth motif atom to any protein atom
    /// of the full complex.
    pub contact: Option<f64>,
}

impl HasStep for Example3D {
    fn step(&self) -> &ReconstructionStep {
        &self.step
    }
}

impl Example3D {
    /// Example without 3D context.
    pub fn bare(step: ReconstructionStep) -> Self {
        Example3D {
            step,
            pocket: None,
            motif_xyz: Vec::new(),
            contact: None,
        }
    }

    pub fn context(&self) -> Result<Context3D<'_>> {
        Context3D::new(&self.step.core, self.step.growth_atom, self.pocket.as_ref().map(|p| &p.graph))
    }
}

/// Pocket around growth atom `atom` of a posed core.
pub fn pocket_around(complex: &Complex, core: &MolGraph, atom: usize, env: &EnvConfig) -> Result<Option<Pocket>> {
    let center = core
        .atom(atom)
        .coords
        .ok_or_else(|| Error::MissingContext("ligand coordinates required".into()))?;
    crop_pocket(&complex.protein, &complex.rotatable, center, env.protein_cutoff, CROP_EXPANSION)
}

/// Steps over complex ligands, each paired with the pocket around its
/// growth atom.
pub fn complex_examples(
    complexes: &[Complex],
    policy: &ShredPolicy,
    n_paths: usize,
    seed: u64,
    env: &EnvConfig,
) -> Result<(Vec<Example3D>, MotifTable)> {
    let ligands: Vec<MolGraph> = complexes.iter().map(|c| c.ligand.clone()).collect();
    let refs: Vec<String> = (0..complexes.len()).map(|i| i.to_string()).collect();
    let set = corpus_steps(&ligands, Some(&refs), policy, n_paths, seed)?;
    let examples = set
        .steps
        .into_par_iter()
        .map(|mut step| {
            let ci: usize = step.complex_ref.as_deref().and_then(|r| r.parse().ok()).expect("index reference");
            let c = &complexes[ci];
            let pocket = pocket_around(c, &step.core, step.growth_atom, env)?;
            let lig = c.ligand.coords().ok_or_else(|| Error::MissingContext("ligand coordinates required".into()))?;
            let motif_xyz: Vec<Vec3> = step.true_motif_atoms.iter().map(|&i| lig[i]).collect();
            let prot = c.protein.coords().ok_or_else(|| Error::MissingContext("protein coordinates required".into()))?;
            let contact = motif_xyz
                .iter()
                .flat_map(|m| prot.iter().map(move |p| norm(sub(*m, *p))))
                .min_by(f64::total_cmp);
            step.complex_ref = Some(c.id.clone());
            Ok(Example3D {
                step,
                pocket,
                motif_xyz,
                contact,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((examples, set.motifs))
}

/// Posed core, growth atom and optional pocket.
#[derive(Debug, Clone)]
pub struct Context3D<'a> {
    pub core: &'a MolGraph,
    pub core_xyz: Vec<Vec3>,
    pub growth: usize,
    pub protein: Option<&'a MolGraph>,
    pub protein_xyz: Vec<Vec3>,
}

impl<'a> Context3D<'a> {
    pub fn new(core: &'a MolGraph, growth: usize, protein: Option<&'a MolGraph>) -> Result<Self> {
        let core_xyz = core
            .coords()
            .ok_or_else(|| Error::MissingContext("core coordinates required".into()))?;
        let protein_xyz = match protein {
            Some(p) => p
                .coords()
                .ok_or_else(|| Error::MissingContext("protein coordinates required".into()))?,
            None => Vec::new(),
        };
        Ok(Context3D {
            core,
            core_xyz,
            growth,
            protein,
            protein_xyz,
        })
    }

    /// Applies `f` to every coordinate.
    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        let mut c = self.clone();
        c.core_xyz = c.core_xyz.into_iter().map(&f).collect();
        c.protein_xyz = c.protein_xyz.into_iter().map(&f).collect();
        c
    }

    pub fn hyperenv(&self, cfg: &EnvConfig) -> Result<HyperEnv> {
        build_hyperenv(self.core, &self.core_xyz, self.growth, &self.protein_xyz, cfg)
    }
}

#[derive(Debug, Clone)]
pub struct MotifEncoder3D {
    vec: ResTrans,
    env: ResTrans,
    reduce: Reduce,
    out: Linear,
}

#[derive(Debug)]
pub struct Model3D {
    pub cfg: Model3DConfig,
    pub d: usize,
    params: ParamSet,
    encoder: AtomEncoder,
    rt_in: ResTrans,
    ta_out: TaPass,
    ta_in: TaPass,
    rt_out: ResTrans,
    w_out: Linear,
    motif: MotifEncoder3D,
    vocab: Vocabulary,
    policy_fingerprint: String,
    stage: String,
    /// Coordinate noise applied to training items.
    pub noise: Option<NoiseConfig>,
    cache: RwLock<Option<Arc<Tensor>>>,
}

impl Clone for Model3D {
    fn clone(&self) -> Self {
        Model3D {
            cfg: self.cfg,
            d: self.d,
            params: self.params.clone(),
            encoder: self.encoder.clone(),
            rt_in: self.rt_in,
            ta_out: self.ta_out.clone(),
            ta_in: self.ta_in.clone(),
            rt_out: self.rt_out,
            w_out: self.w_out,
            motif: self.motif.clone(),
            vocab: self.vocab.clone(),
            policy_fingerprint: self.policy_fingerprint.clone(),
            stage: self.stage.clone(),
            noise: self.noise,
            cache: RwLock::new(self.cache.read().expect("cache lock").clone()),
        }
    }
}

pub const ENCODER3D_PREFIX: &str = "enc3d.";

impl Model3D {
    /// Fresh model with random weights.
    pub fn new(cfg: Model3DConfig, d: usize, vocab: Vocabulary, policy_fingerprint: &str) -> Result<Self> {
        cfg.env.validate()?;
        if d == 0 {
            return Err(Error::Config("hidden dimension must be positive".into()));
        }
        let mut rng = crate::rng::derive(cfg.init_seed, &[0x3D]);
        let mut ps = ParamSet::new();
        let encoder = AtomEncoder::new(&mut ps, "enc3d", d, &mut rng);
        let rt_in = ResTrans::new(&mut ps, "rt_in", d, &mut rng);
        let ta_out = TaPass::new(&mut ps, "ta_out", d, Direction::Outward, &mut rng);
        let ta_in = TaPass::new(&mut ps, "ta_in", d, Direction::Inward, &mut rng);
        let rt_out = ResTrans::new(&mut ps, "rt_out", d, &mut rng);
        let w_out = Linear::new(&mut ps, "w_out", d, d, false, &mut rng);
        let motif = MotifEncoder3D {
            vec: ResTrans::new(&mut ps, "motif.vec", d, &mut rng),
            env: ResTrans::new(&mut ps, "motif.env", d, &mut rng),
            reduce: Reduce::new(&mut ps, "motif.reduce", d, &mut rng),
            out: Linear::new(&mut ps, "motif.out", d, d, true, &mut rng),
        };
        Ok(Model3D {
            cfg,
            d,
            params: ps,
            encoder,
            rt_in,
            ta_out,
            ta_in,
            rt_out,
            w_out,
            motif,
            vocab,
            policy_fingerprint: policy_fingerprint.into(),
            stage: "init".into(),
            noise: None,
            cache: RwLock::new(None),
        })
    }

    /// Starts from the recalibrated 2D model: same vocabulary and policy, and
    /// its atom encoder weights copied into this model's own encoder.
    pub fn from_baseline(cfg: Model3DConfig, base: &Model2D) -> Result<Self> {
        if base.stage() != "recalibrated" {
            return Err(Error::Fingerprint(format!(
                "3D training needs a recalibrated 2D model, got stage '{}'",
                base.stage()
            )));
        }
        let mut m = Model3D::new(cfg, base.cfg.d, base.vocabulary().clone(), base.policy_fingerprint())?;
        m.params.copy_matching(base.params(), ENCODER_PREFIX, ENCODER3D_PREFIX);
        Ok(m)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.invalidate_cache();
        &mut self.params
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    pub fn encoder(&self) -> &AtomEncoder {
        &self.encoder
    }

    pub fn ta_passes(&self) -> (&TaPass, &TaPass) {
        (&self.ta_out, &self.ta_in)
    }

    pub fn reduce(&self) -> &Reduce {
        &self.motif.reduce
    }

    fn invalidate_cache(&self) {
        *self.cache.write().expect("cache lock") = None;
    }

    /// Zeroes both output layers so every logit is 0 (test fixture).
    pub fn zero_output_layers(&mut self) {
        self.invalidate_cache();
        self.w_out.zero(&mut self.params);
        self.motif.out.zero(&mut self.params);
    }

    fn logit_scale(&self) -> f64 {
        1.0 / (self.d as f64).sqrt()
    }

    fn check_growth(ctx: &Context3D<'_>) -> Result<()> {
        if ctx.growth >= ctx.core.n_atoms() {
            return Err(Error::InvalidAtom {
                atom: ctx.growth,
                reason: format!("core has {} atoms", ctx.core.n_atoms()),
            });
        }
        if ctx.core.atom(ctx.growth).n_hydrogens == 0 {
            return Err(Error::InvalidAtom {
                atom: ctx.growth,
                reason: "no hydrogen to replace".into(),
            });
        }
        Ok(())
    }

    /// Growth vectors `u₃` (one row per context) and motif vectors `v₃`
    /// (one row per motif) from a single encoder pass.
    pub fn forward(
        &self,
        t: &mut Tape,
        ps: &ParamSet,
        ctxs: &[Context3D<'_>],
        motifs: &[&Motif],
    ) -> Result<(Option<Var>, Option<Var>)> {
        let mut graphs: Vec<&MolGraph> = ctxs.iter().map(|c| c.core).collect();
        let mut prot_slot = vec![usize::MAX; ctxs.len()];
        for (i, c) in ctxs.iter().enumerate() {
            if let Some(p) = c.protein {
                prot_slot[i] = graphs.len();
                graphs.push(p);
            }
        }
        let motif_slot = graphs.len();
        graphs.extend(motifs.iter().map(|m| &m.graph));
        let gb = GraphBatch::new(&graphs);
        let x = self.encoder.forward(t, ps, &gb);

        let u = if ctxs.is_empty() {
            None
        } else {
            let mut rows = Vec::new();
            let mut a_pos = Vec::with_capacity(ctxs.len());
            let mut tb = TripletBatch::default();
            for (i, c) in ctxs.iter().enumerate() {
                Self::check_growth(c)?;
                let env = c.hyperenv(&self.cfg.env)?;
                let base = rows.len();
                a_pos.push(base);
                rows.push(gb.offsets[i] + c.growth);
                for e in &env.atoms {
                    rows.push(match e.source {
                        EnvSource::Ligand(j) => gb.offsets[i] + j,
                        EnvSource::Protein(k) => gb.offsets[prot_slot[i]] + k,
                    });
                }
                for (k, &(b, b2)) in env.triplets.iter().enumerate() {
                    tb.a.push(base);
                    tb.b.push(base + 1 + b);
                    tb.b2.push(base + 1 + b2);
                    tb.features.extend_from_slice(&env.features[k]);
                    tb.priors.push(env.priors[k]);
                }
            }
            tb.n_rows = rows.len();
            let xe = t.gather_rows(x, &rows);
            let x1 = self.rt_in.forward(t, ps, xe);
            let x2 = self.ta_out.forward(t, ps, x1, &tb);
            let x3 = self.ta_in.forward(t, ps, x2, &tb);
            let xa = t.gather_rows(x3, &a_pos);
            let xa = self.rt_out.forward(t, ps, xa);
            Some(self.w_out.forward(t, ps, xa))
        };

        let v = if motifs.is_empty() {
            None
        } else {
            let mut att = Vec::with_capacity(motifs.len());
            let mut all = Vec::new();
            let mut seg = Vec::new();
            for (k, m) in motifs.iter().enumerate() {
                let off = gb.offsets[motif_slot + k];
                att.push(off + m.attachment);
                for j in 0..m.graph.n_atoms() {
                    all.push(off + j);
                    seg.push(k);
                }
            }
            let xv = t.gather_rows(x, &att);
            let xv = self.motif.vec.forward(t, ps, xv);
            let xe = t.gather_rows(x, &all);
            let xe = self.motif.env.forward(t, ps, xe);
            let pooled = self.motif.reduce.forward(t, ps, xe, &seg, motifs.len());
            let s = t.add(xv, pooled);
            Some(self.motif.out.forward(t, ps, s))
        };
        Ok((u, v))
    }

    /// Logits `⟨v₃,u₃⟩/√d` for `(context, motif)` index pairs.
    pub fn pair_logits(
        &self,
        t: &mut Tape,
        ps: &ParamSet,
        ctxs: &[Context3D<'_>],
        motifs: &[&Motif],
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let (u, v) = self.forward(t, ps, ctxs, motifs)?;
        let (u, v) = (u.expect("contexts"), v.expect("motifs"));
        let ci: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mi: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let up = t.gather_rows(u, &ci);
        let vp = t.gather_rows(v, &mi);
        let s = t.row_dot(up, vp);
        Ok(t.scale(s, self.logit_scale()))
    }

    pub fn growth_vector(&self, ctx: &Context3D<'_>) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let (u, _) = self.forward(&mut t, &self.params, std::slice::from_ref(ctx), &[])?;
        Ok(t.value(u.expect("one context")).data.clone())
    }

    pub fn motif_vector(&self, m: &Motif) -> Vec<f64> {
        let mut t = Tape::new();
        let (_, v) = self.forward(&mut t, &self.params, &[], &[m]).expect("motif-only pass");
        t.value(v.expect("one motif")).data.clone()
    }

    /// Motif vectors of the whole vocabulary, `|V| × d`.
    pub fn motif_table(&self) -> Arc<Tensor> {
        if let Some(c) = self.cache.read().expect("cache lock").as_ref() {
            return c.clone();
        }
        let entries = self.vocab.entries();
        let rows: Vec<Vec<f64>> = entries
            .par_chunks(32)
            .flat_map_iter(|chunk| {
                let ms: Vec<&Motif> = chunk.iter().map(|e| &e.motif).collect();
                let mut t = Tape::new();
                let (_, v) = self.forward(&mut t, &self.params, &[], &ms).expect("motif-only pass");
                let v = t.value(v.expect("motifs"));
                (0..v.rows).map(|r| v.row(r).to_vec()).collect::<Vec<_>>()
            })
            .collect();
        let table = Arc::new(Tensor::from_rows(&rows));
        *self.cache.write().expect("cache lock") = Some(table.clone());
        table
    }

    pub fn logits_all(&self, ctx: &Context3D<'_>) -> Result<Vec<f64>> {
        let u = self.growth_vector(ctx)?;
        let table = self.motif_table();
        let s = self.logit_scale();
        Ok((0..table.rows)
            .map(|i| table.row(i).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() * s)
            .collect())
    }

    /// `r = α₃/(1−α₃)` for every vocabulary entry.
    pub fn r_all(&self, ctx: &Context3D<'_>) -> Result<Vec<f64>> {
        Ok(self.logits_all(ctx)?.into_iter().map(f64::exp).collect())
    }

    pub fn alpha3_motif(&self, m: &Motif, ctx: &Context3D<'_>) -> Result<f64> {
        let mut t = Tape::new();
        let s = self.pair_logits(&mut t, &self.params, std::slice::from_ref(ctx), &[m], &[(0, 0)])?;
        let s = t.sigmoid(s);
        Ok(t.value(s).item())
    }

    pub fn alpha3(&self, key: &MotifKey, ctx: &Context3D<'_>) -> Result<f64> {
        let e = self.vocab.get(key).ok_or_else(|| Error::UnknownMotif(key.0.clone()))?;
        self.alpha3_motif(&e.motif, ctx)
    }

    pub fn to_checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut meta = extra.clone();
        meta.insert("model".into(), "3d".into());
        meta.insert("d".into(), self.d.to_string());
        meta.insert("env".into(), serde_json::to_string(&self.cfg.env).expect("serializable"));
        meta.insert("vocabulary".into(), self.vocab.fingerprint());
        meta.insert("policy".into(), self.policy_fingerprint.clone());
        meta.insert("stage".into(), self.stage.clone());
        Checkpoint::from_params(&self.params, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint, vocab: Vocabulary, policy: &ShredPolicy) -> Result<Self> {
        if ck.meta("model") != Some("3d") {
            return Err(Error::Checkpoint("not a 3D model checkpoint".into()));
        }
        let d: usize = ck
            .meta("d")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing hidden dimension".into()))?;
        let env: EnvConfig = serde_json::from_str(ck.meta("env").unwrap_or_default())
            .map_err(|e| Error::Checkpoint(format!("environment parameters: {e}")))?;
        let want = ck.meta("vocabulary").unwrap_or_default();
        if want != vocab.fingerprint() {
            return Err(Error::VocabularyMismatch {
                expected: want.into(),
                found: vocab.fingerprint(),
            });
        }
        let pf = ck.meta("policy").unwrap_or_default();
        if pf != policy.fingerprint() {
            return Err(Error::PolicyMismatch {
                expected: pf.into(),
                found: policy.fingerprint(),
            });
        }
        let mut m = Model3D::new(Model3DConfig { env, init_seed: 0 }, d, vocab, pf)?;
        ck.load_into(&mut m.params)?;
        m.stage = ck.meta("stage").unwrap_or("init").into();
        Ok(m)
    }

    /// Posed copies of the example's coordinates with training noise applied.
    fn noisy_context<'a>(&self, ex: &'a Example3D, nonce: Option<u64>) -> Result<Context3D<'a>> {
        let mut ctx = ex.context()?;
        let (Some(cfg), Some(nonce)) = (self.noise, nonce) else {
            return Ok(ctx);
        };
        let mut rng = crate::rng::derive(cfg.seed, &[nonce]);
        let d = colored_noise(ctx.core, &cfg, &mut rng);
        ctx.core_xyz = ctx.core_xyz.iter().zip(&d).map(|(p, q)| add(*p, *q)).collect();
        if let Some(p) = &ex.pocket {
            let r = cfg.torsion_range.to_radians();
            let angles: Vec<f64> = p
                .rotatable
                .iter()
                .map(|_| {
                    use rand::Rng as _;
                    if r > 0.0 {
                        rng.random_range(-r..=r)
                    } else {
                        0.0
                    }
                })
                .collect();
            rotate_torsions(&p.graph, &mut ctx.protein_xyz, &p.rotatable, &angles);
            let d = colored_noise(&p.graph, &cfg, &mut rng);
            ctx.protein_xyz = ctx.protein_xyz.iter().zip(&d).map(|(p, q)| add(*p, *q)).collect();
        }
        Ok(ctx)
    }
}

impl ContrastiveModel for Model3D {
    type Example = Example3D;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        Model3D::params_mut(self)
    }

    fn chunk_loss(&self, t: &mut Tape, ps: &ParamSet, motifs: &MotifTable, chunk: &[Item<'_, Example3D>]) -> Result<Var> {
        let ctxs = chunk
            .iter()
            .map(|it| self.noisy_context(it.example, it.nonce))
            .collect::<Result<Vec<_>>>()?;
        let pb = pair_batch(chunk, motifs)?;
        let s = self.pair_logits(t, ps, &ctxs, &pb.motifs, &pb.pairs)?;
        Ok(t.bce_with_logits(s, &pb.y, &pb.w))
    }

    fn invalidate(&mut self) {
        self.invalidate_cache();
    }
}

/// `p·q` weights of the baseline for each example.
pub fn baseline_weights(base: &dyn BaselineSync, examples: &[Example3D]) -> Result<Vec<Vec<f64>>> {
    examples.par_iter().map(|e| base.weights(&e.step)).collect()
}

/// A baseline usable from worker threads.
pub trait BaselineSync: Baseline + Sync {}
impl<T: Baseline + Sync> BaselineSync for T {}

/// Trains against negatives drawn from the recalibrated 2D posterior `p·q`.
#[allow(clippy::too_many_arguments)]
pub fn train_3d(
    model: &mut Model3D,
    base: &Model2D,
    motifs: &MotifTable,
    train_set: &[Example3D],
    val_set: &[Example3D],
    cfg: &TrainConfig,
    noise: Option<NoiseConfig>,
    seed: u64,
) -> Result<TrainReport> {
    if base.stage() != "recalibrated" {
        return Err(Error::Fingerprint(format!(
            "3D training needs a recalibrated 2D model, got stage '{}'",
            base.stage()
        )));
    }
    if base.vocabulary().fingerprint() != model.vocab.fingerprint() {
        return Err(Error::VocabularyMismatch {
            expected: model.vocab.fingerprint(),
            found: base.vocabulary().fingerprint(),
        });
    }
    if let Some(n) = &noise {
        n.validate()?;
    }
    let vocab = model.vocab.clone();
    let mut table = motifs.clone();
    for e in vocab.entries() {
        table.entry(e.key.clone()).or_insert_with(|| e.motif.clone());
    }
    let tn = NegativeSource::per_example(&vocab, baseline_weights(base, train_set)?)?;
    let vn = NegativeSource::per_example(&vocab, baseline_weights(base, val_set)?)?;
    model.noise = noise;
    let r = train(model, &table, train_set, &tn, val_set, &vn, cfg, seed);
    model.noise = None;
    let r = r?;
    model.stage = "3d".into();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molio::{embed_3d, parse_smiles, random_rotation, rigid_transform};
    use crate::shred::MotifCounts;
    use rand::Rng as _;

    fn vocab() -> Vocabulary {
        let mut c = MotifCounts::new();
        for s in ["C", "Cl", "O", "c1ccccc1"] {
            let m = Motif::from_smiles(s, 0).unwrap();
            c.insert(m.key(), (m, 1));
        }
        Vocabulary::from_counts(c).unwrap()
    }

    fn model(d: usize) -> Model3D {
        let cfg = Model3DConfig { init_seed: 5, ..Default::default() };
        Model3D::new(cfg, d, vocab(), &ShredPolicy::default().fingerprint()).unwrap()
    }

    fn posed(smiles: &str, seed: u64) -> MolGraph {
        let g = parse_smiles(smiles).unwrap();
        let x = embed_3d(&g, seed);
        g.with_coords(&x)
    }

    /// Ethylbenzene core growing at the methyl carbon, with a small
    /// peptide-like fragment placed nearby.
    fn scene() -> (MolGraph, MolGraph) {
        let core = posed("CCc1ccccc1", 1);
        let c0 = core.coords().unwrap()[0];
        let prot = posed("NCC(=O)NCC(=O)O", 2);
        let px = prot.coords().unwrap();
        let shift = sub(add(c0, [3.0, 1.0, 0.5]), px[0]);
        let px: Vec<Vec3> = px.into_iter().map(|p| add(p, shift)).collect();
        (core, prot.with_coords(&px))
    }

    #[test]
    fn rigid_motions_leave_r_unchanged() {
        let m = model(8);
        let (core, prot) = scene();
        let ctx = Context3D::new(&core, 0, Some(&prot)).unwrap();
        assert!(!ctx.hyperenv(&m.cfg.env).unwrap().is_empty());
        let base = m.logits_all(&ctx).unwrap();
        let mut rng = crate::rng::derive(11, &[]);
        for _ in 0..20 {
            let rot = random_rotation(&mut rng);
            let t = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let moved = ctx.transformed(|p| rigid_transform(&[p], &rot, t)[0]);
            let s = m.logits_all(&moved).unwrap();
            for (a, b) in base.iter().zip(&s) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn crossing_the_cutoff_is_continuous() {
        let m = model(8);
        let core = posed("CC", 3);
        let x = core.coords().unwrap();
        let dir = {
            let v = sub(x[0], x[1]);
            crate::molio::scale(v, 1.0 / norm(v))
        };
        let anchor = add(x[0], crate::molio::scale(dir, 2.5));
        let at = |r: f64| {
            let g = parse_smiles("O.N").unwrap();
            g.with_coords(&[anchor, add(x[0], crate::molio::scale(dir, r))])
        };
        let rc = m.cfg.env.protein_cutoff;
        let (inside, outside) = (at(rc - 1e-9), at(rc + 1e-9));
        let a = m.logits_all(&Context3D::new(&core, 0, Some(&inside)).unwrap()).unwrap();
        let b = m.logits_all(&Context3D::new(&core, 0, Some(&outside)).unwrap()).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn zeroed_outputs_give_even_odds() {
        let mut m = model(8);
        m.zero_output_layers();
        let (core, prot) = scene();
        let ctx = Context3D::new(&core, 0, Some(&prot)).unwrap();
        for e in vocab().entries() {
            assert_eq!(m.alpha3(&e.key, &ctx).unwrap(), 0.5);
        }
    }

    #[test]
    fn empty_environment_is_finite() {
        let m = model(8);
        let core = posed("C", 0);
        let ctx = Context3D::new(&core, 0, None).unwrap();
        assert!(ctx.hyperenv(&m.cfg.env).unwrap().is_empty());
        assert!(m.r_all(&ctx).unwrap().iter().all(|r| r.is_finite() && *r > 0.0));
    }

    #[test]
    fn saturated_growth_atom_is_rejected() {
        let m = model(8);
        let core = posed("C(C)(C)(C)C", 0);
        let ctx = Context3D::new(&core, 0, None).unwrap();
        assert!(matches!(m.r_all(&ctx), Err(Error::InvalidAtom { .. })));
    }

    #[test]
    fn cached_table_matches_direct() {
        let m = model(8);
        let (core, prot) = scene();
        let ctx = Context3D::new(&core, 0, Some(&prot)).unwrap();
        let all = m.logits_all(&ctx).unwrap();
        for (i, e) in vocab().entries().iter().enumerate() {
            let a = m.alpha3_motif(&e.motif, &ctx).unwrap();
            let s = 1.0 / (1.0 + (-all[i]).exp());
            assert_eq!(a.to_bits(), s.to_bits());
        }
    }

    #[test]
    fn prior_decreases_between_pivot_and_switch() {
        let cfg = EnvConfig::default();
        for rc in [cfg.protein_cutoff, cfg.ligand_cutoff] {
            let rho = cfg.rho(rc);
            let mut prev = f64::INFINITY;
            for k in 0..=50 {
                let r = rho + (rc - cfg.delta - rho) * k as f64 / 50.0;
                let g = g_prior(r.max(PRIOR_MIN_R), rho, cfg.beta, cfg.w0);
                assert!(g < prev);
                prev = g;
            }
        }
    }

    fn small_batch(rng: &mut crate::rng::Rng) -> TripletBatch {
        let mut tb = TripletBatch { n_rows: 5, ..Default::default() };
        for (a, b, b2) in [(0, 1, 2), (0, 2, 1), (0, 1, 1), (0, 3, 3), (4, 3, 2)] {
            tb.a.push(a);
            tb.b.push(b);
            tb.b2.push(b2);
            tb.features.extend((0..TRIPLET_FEATURE_DIM).map(|_| rng.random_range(0.0..1.0)));
            tb.priors.push(rng.random_range(0.2..2.0));
        }
        tb
    }

    #[test]
    fn gradients_of_attention_passes() {
        let mut rng = crate::rng::derive(4, &[]);
        let d = 8;
        for dir in [Direction::Outward, Direction::Inward] {
            let mut ps = ParamSet::new();
            let pass = TaPass::new(&mut ps, "ta", d, dir, &mut rng);
            let x = ps.add("x", Tensor::uniform(5, d, 1.0, &mut rng));
            let w = ps.add("w", Tensor::uniform(5, d, 1.0, &mut rng));
            let tb = small_batch(&mut rng);
            let err = crate::tensor::gradient_check(&ps, 1e-6, |t, ps| {
                let xv = t.param(ps, x);
                let y = pass.forward(t, ps, xv, &tb);
                let wv = t.param(ps, w);
                let y = t.mul(y, wv);
                t.sum_all(y)
            });
            assert!(err < 1e-3, "{dir:?}: {err}");
        }
    }

    #[test]
    fn gradients_of_reduce() {
        let mut rng = crate::rng::derive(6, &[]);
        let d = 8;
        let mut ps = ParamSet::new();
        let red = Reduce::new(&mut ps, "red", d, &mut rng);
        let x = ps.add("x", Tensor::uniform(6, d, 1.0, &mut rng));
        let w = ps.add("w", Tensor::uniform(2, d, 1.0, &mut rng));
        let err = crate::tensor::gradient_check(&ps, 1e-6, |t, ps| {
            let xv = t.param(ps, x);
            let y = red.forward(t, ps, xv, &[0, 0, 1, 0, 1, 1], 2);
            let wv = t.param(ps, w);
            let y = t.mul(y, wv);
            t.sum_all(y)
        });
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn gradients_of_alpha3() {
        let m = model(8);
        let (core, prot) = scene();
        let ctx = Context3D::new(&core, 0, Some(&prot)).unwrap();
        let entries = m.vocabulary().entries();
        let motifs: Vec<&Motif> = entries.iter().map(|e| &e.motif).collect();
        let pairs: Vec<(usize, usize)> = (0..motifs.len()).map(|j| (0, j)).collect();
        let y: Vec<f64> = (0..motifs.len()).map(|j| (j == 1) as u8 as f64).collect();
        let w = vec![1.0; motifs.len()];
        let err = crate::tensor::gradient_check(m.params(), 1e-6, |t, ps| {
            let s = m
                .pair_logits(t, ps, std::slice::from_ref(&ctx), &motifs, &pairs)
                .unwrap();
            t.bce_with_logits(s, &y, &w)
        });
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn crop_keeps_rotatable_bonds() {
        let (core, prot) = scene();
        let rot: Vec<usize> = (0..prot.bonds().len()).collect();
        let c0 = core.coords().unwrap()[0];
        let p = crop_pocket(&prot, &rot, c0, 7.5, CROP_EXPANSION).unwrap().unwrap();
        assert_eq!(p.graph.n_atoms(), prot.n_atoms());
        assert_eq!(p.rotatable.len(), rot.len());
        assert!(crop_pocket(&prot, &rot, [500.0; 3], 7.5, CROP_EXPANSION).unwrap().is_none());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(8);
        let ck = m.to_checkpoint(&BTreeMap::new());
        let back = Model3D::from_checkpoint(&ck, vocab(), &ShredPolicy::default()).unwrap();
        assert_eq!(back.params(), m.params());
        let (core, prot) = scene();
        let ctx = Context3D::new(&core, 0, Some(&prot)).unwrap();
        assert_eq!(m.logits_all(&ctx).unwrap(), back.logits_all(&ctx).unwrap());
    }
}
