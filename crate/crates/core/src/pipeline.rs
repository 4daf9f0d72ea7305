//! Staged pipeline: fixtures, vocabularies, 2D training, recalibration, 3D
//! training, evaluation, sampling and the score kernel.
//!
//! Every stage reads the artifacts of earlier stages from the output
//! directory and refuses to run when their fingerprints do not line up.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::NoiseConfig;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, frequency_marginal, kl_divergence, model_marginal, null_metrics, sample_contexts, EvalConfig, EvalReport,
    NullMetrics,
};
use crate::fixtures::{read_corpus, synthetic_complexes, write_corpus, CorpusEntry, MoleculeGenerator};
use crate::gnn2d::{recalibrate, train_2d, Model2D, Model2DConfig};
use crate::gnn3d::{complex_examples, pocket_around, train_3d, Context3D, Example3D, Model3D, Model3DConfig};
use crate::molio::{load_complexes, parse_smiles, write_complexes, Complex, MolGraph};
use crate::posterior::{entropy_shift_report, score_kernel, EntropyReport, Filter, KernelMatrix, Posterior, View};
use crate::recon::{corpus_steps, StepSet};
use crate::shred::{build_vocabulary, ShredPolicy, Vocabulary};
use crate::tensor::Checkpoint;
use crate::train::{TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Small-molecule corpus, `SMILES family` per line.
    pub corpus: PathBuf,
    /// Complexes, one JSON record per line.
    pub complexes: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "data/corpus.smi".into(),
            complexes: "data/complexes.jsonl".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub n_molecules: usize,
    pub n_complexes: usize,
    pub n_families: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n_molecules: 500,
            n_complexes: 50,
            n_families: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Shreddings per molecule when counting motifs.
    pub shreds_per_molecule: usize,
    /// Reconstruction pathways sampled per molecule.
    pub paths_per_molecule: usize,
    /// Share of families held out for validation.
    pub val_fraction: f64,
    /// Share of complex families held out for testing.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            shreds_per_molecule: 4,
            paths_per_molecule: 2,
            val_fraction: 0.2,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub n_contexts: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { n_contexts: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub fixtures: FixtureConfig,
    pub data: DataConfig,
    pub shred: ShredPolicy,
    pub model2d: Model2DConfig,
    pub model3d: Model3DConfig,
    pub train2d: TrainConfig,
    pub recalibrate: TrainConfig,
    pub train3d: TrainConfig,
    /// Coordinate noise for 3D training; `enabled = false` trains on raw poses.
    pub noise: NoiseSection,
    pub eval: EvalConfig,
    pub kernel: KernelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub cfg: NoiseConfig,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            enabled: true,
            cfg: NoiseConfig::default(),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: Paths::default(),
            fixtures: FixtureConfig::default(),
            data: DataConfig::default(),
            shred: ShredPolicy::default(),
            model2d: Model2DConfig::default(),
            model3d: Model3DConfig::default(),
            train2d: TrainConfig::default(),
            recalibrate: TrainConfig {
                max_epochs: 10,
                patience: None,
                ..TrainConfig::default()
            },
            train3d: TrainConfig::default(),
            noise: NoiseSection::default(),
            eval: EvalConfig::default(),
            kernel: KernelConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.shred.validate()?;
        self.model3d.env.validate()?;
        for t in [&self.train2d, &self.recalibrate, &self.train3d] {
            t.validate()?;
        }
        self.noise.cfg.validate()?;
        if self.model2d.d == 0 {
            return Err(Error::Config("model2d.d must be positive".into()));
        }
        let d = &self.data;
        if d.shreds_per_molecule == 0 || d.paths_per_molecule == 0 {
            return Err(Error::Config("data.shreds_per_molecule and data.paths_per_molecule must be positive".into()));
        }
        if !(0.0..1.0).contains(&d.val_fraction) || !(0.0..1.0).contains(&d.test_fraction) || d.val_fraction + d.test_fraction >= 1.0 {
            return Err(Error::Config("data.val_fraction and data.test_fraction must leave training families".into()));
        }
        if self.eval.k_neg == 0 {
            return Err(Error::Config("eval.k_neg must be positive".into()));
        }
        if self.kernel.n_contexts < 2 {
            return Err(Error::Config("kernel.n_contexts must be at least 2".into()));
        }
        Ok(())
    }

    /// Hash of every setting except file locations.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("serializable")))
    }
}

/// Git-style content fingerprint: hash of `blob <len>\0<bytes>`.
pub fn content_fingerprint(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Fingerprint of `body`.
    pub fingerprint: String,
    /// Fingerprints of the artifacts this one was derived from.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub meta: ArtifactMeta,
    pub body: serde_json::Value,
}

pub const VOCAB_A: &str = "vocab_a.json";
pub const VOCAB_B: &str = "vocab_b.json";
pub const MODEL_2D: &str = "model2d.json";
pub const MODEL_2D_RECAL: &str = "model2d_recalibrated.json";
pub const MODEL_3D: &str = "model3d.json";
pub const EVAL_DIR: &str = "eval";
pub const KERNEL_DIR: &str = "kernel";

/// Which held-out families a set of tags falls into.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FamilySplit {
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl FamilySplit {
    /// Families in sorted order, shuffled by `seed`, with the first
    /// `test_fraction` held out for testing and the next `val_fraction` for
    /// validation. Each non-empty share gets at least one family when at
    /// least three families exist.
    pub fn new<'a>(tags: impl IntoIterator<Item = &'a str>, val_fraction: f64, test_fraction: f64, seed: u64) -> Self {
        let mut fams: Vec<String> = tags.into_iter().map(str::to_string).collect::<BTreeSet<_>>().into_iter().collect();
        fams.shuffle(&mut crate::rng::derive(seed, &[0xFA51]));
        let n = fams.len();
        let count = |f: f64| {
            let k = (f * n as f64).round() as usize;
            if f > 0.0 && n >= 3 {
                k.max(1)
            } else {
                k
            }
        };
        let nt = count(test_fraction).min(n.saturating_sub(1));
        let nv = count(val_fraction).min(n.saturating_sub(1 + nt));
        FamilySplit {
            test: fams[..nt].iter().cloned().collect(),
            val: fams[nt..nt + nv].iter().cloned().collect(),
        }
    }

    pub fn role(&self, tag: &str) -> Role3 {
        if self.test.contains(tag) {
            Role3::Test
        } else if self.val.contains(tag) {
            Role3::Val
        } else {
            Role3::Train
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role3 {
    Train,
    Val,
    Test,
}

/// Outputs of the evaluation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub roc: EvalReport,
    pub entropy: EntropyReport,
    pub null: NullMetrics,
    pub kl_before: f64,
    pub kl_after: f64,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline { cfg })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out.join(name)
    }

    fn seed(&self, stage: u64) -> u64 {
        crate::rng::derive(self.cfg.seed, &[0x57A6E, stage]).next_u64_det()
    }

    fn meta(&self, stage: &str, body: &[u8], inputs: BTreeMap<String, String>) -> ArtifactMeta {
        ArtifactMeta {
            stage: stage.into(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            fingerprint: content_fingerprint(body),
            inputs,
        }
    }

    fn write_artifact<T: Serialize>(&self, name: &str, stage: &str, body: &T, inputs: BTreeMap<String, String>) -> Result<ArtifactMeta> {
        std::fs::create_dir_all(&self.cfg.paths.out)?;
        let value = serde_json::to_value(body)?;
        let bytes = serde_json::to_vec(&value)?;
        let meta = self.meta(stage, &bytes, inputs);
        let a = Artifact { meta: meta.clone(), body: value };
        std::fs::write(self.out(name), serde_json::to_string_pretty(&a)?)?;
        Ok(meta)
    }

    fn read_artifact(&self, name: &str, stage: &str) -> Result<Artifact> {
        let path = self.out(name);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| Error::Fingerprint(format!("{} is missing; run the '{stage}' stage first", path.display())))?;
        let a: Artifact = serde_json::from_str(&text)?;
        if a.meta.stage != stage {
            return Err(Error::Fingerprint(format!("{} was written by stage '{}'", path.display(), a.meta.stage)));
        }
        let fp = content_fingerprint(&serde_json::to_vec(&a.body)?);
        if fp != a.meta.fingerprint {
            return Err(Error::Fingerprint(format!("{} content does not match its fingerprint", path.display())));
        }
        Ok(a)
    }

    fn save_checkpoint(&self, name: &str, ck: Checkpoint) -> Result<String> {
        std::fs::create_dir_all(&self.cfg.paths.out)?;
        let mut ck = ck;
        let fp = content_fingerprint(&serde_json::to_vec(&ck.tensors)?);
        ck.meta.insert("config_hash".into(), self.cfg.hash());
        ck.meta.insert("seed".into(), self.cfg.seed.to_string());
        ck.meta.insert("fingerprint".into(), fp.clone());
        ck.save(&self.out(name))?;
        Ok(fp)
    }

    fn load_checkpoint(&self, name: &str, stage: &str) -> Result<Checkpoint> {
        let path = self.out(name);
        if !path.exists() {
            return Err(Error::Fingerprint(format!("{} is missing; run the '{stage}' stage first", path.display())));
        }
        let ck = Checkpoint::load(&path)?;
        let fp = content_fingerprint(&serde_json::to_vec(&ck.tensors)?);
        if ck.meta("fingerprint") != Some(fp.as_str()) {
            return Err(Error::Fingerprint(format!("{} content does not match its fingerprint", path.display())));
        }
        Ok(ck)
    }

    fn checkpoint_fingerprint(&self, name: &str, stage: &str) -> Result<String> {
        let ck = self.load_checkpoint(name, stage)?;
        Ok(ck.meta("fingerprint").unwrap_or_default().to_string())
    }

    // ---- inputs ----

    /// Writes the synthetic corpus and complexes to the configured paths.
    pub fn gen_fixtures(&self) -> Result<()> {
        let f = &self.cfg.fixtures;
        let corpus = MoleculeGenerator::new()?.corpus(f.n_molecules, &mut crate::rng::derive(self.cfg.seed, &[0xF1C]))?;
        let complexes = synthetic_complexes(f.n_complexes, f.n_families, self.cfg.seed)?;
        for p in [&self.cfg.paths.corpus, &self.cfg.paths.complexes] {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
        }
        write_corpus(&self.cfg.paths.corpus, &corpus)?;
        write_complexes(&self.cfg.paths.complexes, &complexes)?;
        log::info!("wrote {} molecules and {} complexes", corpus.len(), complexes.len());
        Ok(())
    }

    pub fn corpus(&self) -> Result<Vec<CorpusEntry>> {
        let c = read_corpus(&self.cfg.paths.corpus)?;
        if c.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(c)
    }

    pub fn complexes(&self) -> Result<Vec<Complex>> {
        let c = load_complexes(&self.cfg.paths.complexes)?;
        if c.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(c)
    }

    fn input_fingerprint(path: &Path) -> Result<String> {
        Ok(content_fingerprint(&std::fs::read(path)?))
    }

    fn corpus_split(&self, corpus: &[CorpusEntry]) -> (Vec<MolGraph>, Vec<MolGraph>) {
        let d = &self.cfg.data;
        let split = FamilySplit::new(corpus.iter().map(|e| e.family.as_str()), d.val_fraction, 0.0, self.cfg.seed);
        let mut train = Vec::new();
        let mut val = Vec::new();
        for e in corpus {
            match split.role(&e.family) {
                Role3::Train => train.push(e.graph.clone()),
                _ => val.push(e.graph.clone()),
            }
        }
        (train, val)
    }

    pub fn complex_split(&self, complexes: &[Complex]) -> FamilySplit {
        let d = &self.cfg.data;
        FamilySplit::new(complexes.iter().map(|c| c.family_tag.as_str()), d.val_fraction, d.test_fraction, self.cfg.seed)
    }

    fn complexes_by_role(&self, complexes: &[Complex], role: Role3) -> Vec<Complex> {
        let split = self.complex_split(complexes);
        complexes.iter().filter(|c| split.role(&c.family_tag) == role).cloned().collect()
    }

    // ---- vocabularies ----

    /// Vocabulary A from the corpus and vocabulary B from the training
    /// complexes' ligands.
    pub fn build_vocab(&self) -> Result<(Vocabulary, Vocabulary)> {
        let corpus = self.corpus()?;
        let mols: Vec<MolGraph> = corpus.iter().map(|e| e.graph.clone()).collect();
        let n = self.cfg.data.shreds_per_molecule;
        let va = build_vocabulary(&mols, &self.cfg.shred, n)?;
        let complexes = self.complexes()?;
        let ligs: Vec<MolGraph> = self
            .complexes_by_role(&complexes, Role3::Train)
            .into_iter()
            .map(|c| c.ligand.clone().without_coords())
            .collect();
        let vb = build_vocabulary(&ligs, &self.cfg.shred, n)?;
        let inputs_a = BTreeMap::from([("corpus".to_string(), Self::input_fingerprint(&self.cfg.paths.corpus)?)]);
        let inputs_b = BTreeMap::from([("complexes".to_string(), Self::input_fingerprint(&self.cfg.paths.complexes)?)]);
        let body = |v: &Vocabulary| -> Result<serde_json::Value> { Ok(serde_json::from_str(&v.to_json())?) };
        self.write_artifact(VOCAB_A, "build-vocab", &body(&va)?, inputs_a)?;
        self.write_artifact(VOCAB_B, "build-vocab", &body(&vb)?, inputs_b)?;
        log::info!("vocabularies: {} motifs (corpus), {} motifs (complexes)", va.len(), vb.len());
        Ok((va, vb))
    }

    pub fn vocab(&self, name: &str) -> Result<Vocabulary> {
        let a = self.read_artifact(name, "build-vocab")?;
        Vocabulary::from_json(&a.body.to_string())
    }

    // ---- 2D ----

    pub fn train_2d(&self) -> Result<TrainReport> {
        let va = self.vocab(VOCAB_A)?;
        let corpus = self.corpus()?;
        let (train, val) = self.corpus_split(&corpus);
        let np = self.cfg.data.paths_per_molecule;
        let ts = corpus_steps(&train, None, &self.cfg.shred, np, self.seed(1))?;
        let vs = corpus_steps(&val, None, &self.cfg.shred, np, self.seed(2))?;
        let mut m = Model2D::new(self.cfg.model2d, va, &self.cfg.shred)?;
        let r = train_2d(&mut m, &ts, &vs, &self.cfg.train2d, self.seed(3))?;
        log::info!("2D: {} epochs, best {}", r.epochs_run, r.best_epoch);
        let fp = self.save_checkpoint(MODEL_2D, m.to_checkpoint(&BTreeMap::new()))?;
        self.write_artifact("train2d_report.json", "train-2d", &r, BTreeMap::from([("model".into(), fp)]))?;
        Ok(r)
    }

    pub fn model_2d(&self, name: &str, vocab: Vocabulary, stage: &str) -> Result<Model2D> {
        let ck = self.load_checkpoint(name, stage)?;
        let m = Model2D::from_checkpoint(&ck, vocab, &self.cfg.shred)?;
        if m.stage() != stage {
            return Err(Error::Fingerprint(format!("{name} has stage '{}', expected '{stage}'", m.stage())));
        }
        Ok(m)
    }

    fn ligand_steps(&self, complexes: &[Complex], stream: u64) -> Result<StepSet> {
        let ligs: Vec<MolGraph> = complexes.iter().map(|c| c.ligand.clone().without_coords()).collect();
        corpus_steps(&ligs, None, &self.cfg.shred, self.cfg.data.paths_per_molecule, self.seed(stream))
    }

    /// Domain transfer onto the training complexes' ligands; returns the
    /// report together with the marginal KL to vocabulary B before and after.
    pub fn recalibrate(&self) -> Result<(TrainReport, f64, f64)> {
        let va = self.vocab(VOCAB_A)?;
        let vb = self.vocab(VOCAB_B)?;
        let mut m = self.model_2d(MODEL_2D, va, "2d")?;
        let complexes = self.complexes()?;
        let train = self.complexes_by_role(&complexes, Role3::Train);
        let steps = self.ligand_steps(&train, 4)?;
        let kl = |m: &Model2D| -> Result<f64> {
            let ctx: Vec<(&MolGraph, usize)> = steps.steps.iter().map(|s| (&s.core, s.growth_atom)).collect();
            Ok(kl_divergence(&model_marginal(m, &ctx)?, &frequency_marginal(&vb)))
        };
        let before = kl(&m)?;
        let r = recalibrate(&mut m, &steps, vb.clone(), &self.cfg.shred, &self.cfg.recalibrate, self.seed(5))?;
        let after = kl(&m)?;
        log::info!("recalibration: KL to the complex vocabulary {before:.4} -> {after:.4}");
        let fp = self.save_checkpoint(MODEL_2D_RECAL, m.to_checkpoint(&BTreeMap::new()))?;
        #[derive(Serialize)]
        struct Out<'a> {
            report: &'a TrainReport,
            kl_before: f64,
            kl_after: f64,
        }
        self.write_artifact(
            "recalibrate_report.json",
            "recalibrate",
            &Out { report: &r, kl_before: before, kl_after: after },
            BTreeMap::from([("model".into(), fp)]),
        )?;
        Ok((r, before, after))
    }

    // ---- 3D ----

    fn examples(&self, complexes: &[Complex], stream: u64) -> Result<(Vec<Example3D>, crate::recon::MotifTable)> {
        complex_examples(
            complexes,
            &self.cfg.shred,
            self.cfg.data.paths_per_molecule,
            self.seed(stream),
            &self.cfg.model3d.env,
        )
    }

    pub fn train_3d(&self) -> Result<TrainReport> {
        let vb = self.vocab(VOCAB_B)?;
        let base = self.model_2d(MODEL_2D_RECAL, vb, "recalibrated")?;
        let complexes = self.complexes()?;
        let (train, mut motifs) = self.examples(&self.complexes_by_role(&complexes, Role3::Train), 6)?;
        let (val, vm) = self.examples(&self.complexes_by_role(&complexes, Role3::Val), 7)?;
        motifs.extend(vm);
        let mut m = Model3D::from_baseline(self.cfg.model3d, &base)?;
        let noise = self.cfg.noise.enabled.then_some(self.cfg.noise.cfg);
        let r = train_3d(&mut m, &base, &motifs, &train, &val, &self.cfg.train3d, noise, self.seed(8))?;
        log::info!("3D: {} epochs, best {}", r.epochs_run, r.best_epoch);
        let fp = self.save_checkpoint(MODEL_3D, m.to_checkpoint(&BTreeMap::new()))?;
        self.write_artifact("train3d_report.json", "train-3d", &r, BTreeMap::from([("model".into(), fp)]))?;
        Ok(r)
    }

    /// The recalibrated 2D model and the 3D model.
    pub fn models(&self) -> Result<(Model2D, Model3D)> {
        let vb = self.vocab(VOCAB_B)?;
        let m2 = self.model_2d(MODEL_2D_RECAL, vb.clone(), "recalibrated")?;
        let ck = self.load_checkpoint(MODEL_3D, "train-3d")?;
        let m3 = Model3D::from_checkpoint(&ck, vb, &self.cfg.shred)?;
        if m3.stage() != "3d" {
            return Err(Error::Fingerprint(format!("{MODEL_3D} has stage '{}'", m3.stage())));
        }
        Ok((m2, m3))
    }

    // ---- analysis ----

    pub fn evaluate(&self) -> Result<Evaluation> {
        let (m2, m3) = self.models()?;
        let complexes = self.complexes()?;
        let (test, _) = self.examples(&self.complexes_by_role(&complexes, Role3::Test), 9)?;
        let roc = evaluate(&test, &m2, Some(&m3), &self.cfg.eval, self.seed(10))?;
        let entropy = entropy_shift_report(&test, &m2, Some(&m3))?;
        let null = null_metrics(m2.vocabulary(), &test, self.cfg.eval.k_neg, self.seed(11))?;
        let rec = self.read_artifact("recalibrate_report.json", "recalibrate")?;
        let kl = |k: &str| rec.body.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        let ev = Evaluation {
            roc,
            entropy,
            null,
            kl_before: kl("kl_before"),
            kl_after: kl("kl_after"),
        };
        let dir = self.out(EVAL_DIR);
        ev.roc.write(&dir)?;
        let inputs = BTreeMap::from([
            ("model2d".to_string(), self.checkpoint_fingerprint(MODEL_2D_RECAL, "recalibrate")?),
            ("model3d".to_string(), self.checkpoint_fingerprint(MODEL_3D, "train-3d")?),
            ("complexes".to_string(), Self::input_fingerprint(&self.cfg.paths.complexes)?),
        ]);
        self.write_artifact(&format!("{EVAL_DIR}/evaluation.json"), "evaluate", &ev, inputs)?;
        std::fs::write(dir.join("summary.txt"), self.summary(&ev))?;
        Ok(ev)
    }

    /// The evaluation written by [`Pipeline::evaluate`].
    pub fn load_evaluation(&self) -> Result<Evaluation> {
        let a = self.read_artifact(&format!("{EVAL_DIR}/evaluation.json"), "evaluate")?;
        Ok(serde_json::from_value(a.body)?)
    }

    pub fn summary(&self, ev: &Evaluation) -> String {
        let mut s = ev.roc.table();
        s += &format!(
            "\nsteps {} (out of vocabulary {})\n",
            ev.roc.n_steps, ev.roc.out_of_vocabulary
        );
        if let Some(sp) = &ev.roc.split {
            s += &format!("close {} far {} neither {}\n", sp.close.len(), sp.far.len(), sp.neither.len());
        }
        s += "\nentropy\n";
        for x in &ev.entropy.summaries {
            s += &format!("{:<7} mean {:>8.4} std {:>7.4}\n", x.name, x.mean, x.std);
        }
        s += &format!(
            "\nnull: AUC(p vs uniform) {:.4} top1 static {:.3} top8 static {:.3} top1 sampled {:.3} top8 sampled {:.3}\n",
            ev.null.auc_p_vs_uniform.auc, ev.null.top1_static, ev.null.top8_static, ev.null.top1_sampled, ev.null.top8_sampled
        );
        s += &format!("recalibration KL {:.4} -> {:.4}\n", ev.kl_before, ev.kl_after);
        s
    }

    /// Kernel and distance matrices over the recalibrated 2D model's
    /// vocabulary, from growth vectors of the complex ligands.
    pub fn kernel(&self) -> Result<KernelMatrix> {
        let vb = self.vocab(VOCAB_B)?;
        let m2 = self.model_2d(MODEL_2D_RECAL, vb, "recalibrated")?;
        let complexes = self.complexes()?;
        let steps = self.ligand_steps(&complexes, 12)?;
        let ex: Vec<Example3D> = steps.steps.into_iter().map(Example3D::bare).collect();
        let ctx = sample_contexts(&ex, self.cfg.kernel.n_contexts, &mut crate::rng::derive(self.seed(13), &[]));
        let k = score_kernel(&m2, &ctx)?;
        let dir = self.out(KERNEL_DIR);
        std::fs::create_dir_all(&dir)?;
        KernelMatrix::write_csv(&dir.join("kernel.csv"), &k.keys, &k.k)?;
        KernelMatrix::write_csv(&dir.join("distance.csv"), &k.keys, &k.distance())?;
        if !k.flat.is_empty() {
            log::warn!("{} motifs have constant scores; variance floor applied", k.flat.len());
        }
        Ok(k)
    }

    /// Posterior for growth at `atom` of a SMILES core, or of a complex's
    /// posed ligand when `complex` names one.
    pub fn posterior(&self, smiles: Option<&str>, complex: Option<&str>, atom: usize, view: View, filter: &Filter) -> Result<Posterior> {
        let needs_3d = view.uses_r();
        let (m2, m3) = if needs_3d {
            let (a, b) = self.models()?;
            (a, Some(b))
        } else {
            let vb = self.vocab(VOCAB_B)?;
            (self.model_2d(MODEL_2D_RECAL, vb, "recalibrated")?, None)
        };
        let post = match (smiles, complex) {
            (_, Some(id)) => {
                let cs = self.complexes()?;
                let c = cs
                    .iter()
                    .find(|c| c.id == id)
                    .ok_or_else(|| Error::Config(format!("unknown complex {id}")))?;
                if atom >= c.ligand.n_atoms() {
                    return Err(Error::InvalidAtom { atom, reason: "not in the ligand".into() });
                }
                let pocket = pocket_around(c, &c.ligand, atom, &self.cfg.model3d.env)?;
                let ctx = Context3D::new(&c.ligand, atom, pocket.as_ref().map(|p| &p.graph))?;
                Posterior::assemble(&c.ligand, atom, Some(&ctx), &m2, m3.as_ref(), view)?
            }
            (Some(s), None) => {
                let g = parse_smiles(s)?;
                Posterior::assemble(&g, atom, None, &m2, m3.as_ref(), view)?
            }
            (None, None) => return Err(Error::Config("give a SMILES core or a complex id".into())),
        };
        post.filtered(filter)
    }

    pub fn run_all(&self) -> Result<Evaluation> {
        if !self.cfg.paths.corpus.exists() || !self.cfg.paths.complexes.exists() {
            self.gen_fixtures()?;
        }
        self.build_vocab()?;
        self.train_2d()?;
        self.recalibrate()?;
        self.train_3d()?;
        let ev = self.evaluate()?;
        self.kernel()?;
        Ok(ev)
    }
}

trait NextU64 {
    fn next_u64_det(&mut self) -> u64;
}

impl NextU64 for crate::rng::Rng {
    fn next_u64_det(&mut self) -> u64 {
        use rand::RngCore;
        self.next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
        assert!(PipelineConfig::from_toml("[train2d]\nk_neg = 0\n").is_err());
        let c = PipelineConfig::from_toml("seed = 7\n[model2d]\nd = 16\n").unwrap();
        assert_eq!((c.seed, c.model2d.d), (7, 16));
    }

    #[test]
    fn hash_ignores_paths() {
        let mut a = PipelineConfig::default();
        let h = a.hash();
        a.paths.out = "elsewhere".into();
        assert_eq!(a.hash(), h);
        a.seed = 3;
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn family_split_partitions() {
        let tags = ["a", "b", "c", "d", "e"];
        let s = FamilySplit::new(tags, 0.2, 0.2, 0);
        assert_eq!((s.val.len(), s.test.len()), (1, 1));
        assert!(s.val.is_disjoint(&s.test));
        assert_eq!(FamilySplit::new(tags, 0.2, 0.2, 0), s);
    }

    #[test]
    fn three_d_before_recalibration_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.out = dir.path().to_path_buf();
        let p = Pipeline::new(cfg).unwrap();
        assert!(matches!(p.train_3d(), Err(Error::Fingerprint(_))));
    }
}
