use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pqr::pipeline::{Pipeline, PipelineConfig};
use pqr::posterior::{Filter, View};

#[derive(Parser, Debug)]
#[command(name = "pqr", version, about = "Train and query fragment-growth posteriors")]
struct Cli {
    /// TOML configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the synthetic corpus and complexes to the configured input paths.
    GenFixtures,
    /// Motif vocabularies of the corpus and of the training ligands.
    BuildVocab,
    /// Contrastive 2D model on the corpus.
    #[command(name = "train-2d")]
    Train2d,
    /// Transfer the 2D model onto the complex vocabulary.
    Recalibrate,
    /// 3D model against the recalibrated 2D baseline.
    #[command(name = "train-3d")]
    Train3d,
    /// ROC matrix, entropy shift and null metrics on the test complexes.
    Evaluate,
    /// Motif kernel and distance matrices.
    Kernel,
    /// Print the summary of the last evaluation.
    Report,
    /// Every stage in order, generating fixtures if the inputs are missing.
    Run,
    /// Print the effective configuration as TOML.
    Config,
    /// Rank (and optionally draw) motifs for one growth vector.
    Sample {
        /// Core as SMILES; scored without a pocket.
        #[arg(long, conflicts_with = "complex")]
        smiles: Option<String>,
        /// Id of a complex whose posed ligand is the core.
        #[arg(long)]
        complex: Option<String>,
        #[arg(long)]
        atom: usize,
        #[arg(long, default_value = "pq")]
        view: View,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Motifs to draw from the posterior.
        #[arg(long, default_value_t = 0)]
        draws: usize,
        /// Print the full posterior as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// HTTP elaboration sessions over the trained models.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// JSON-lines event log for session persistence.
        #[arg(long)]
        sessions: Option<PathBuf>,
        /// Allowed CORS origin; any origin when omitted.
        #[arg(long)]
        origin: Option<String>,
    },
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    let cfg = config(&cli)?;
    let p = Pipeline::new(cfg)?;
    match &cli.cmd {
        Cmd::GenFixtures => p.gen_fixtures()?,
        Cmd::BuildVocab => {
            let (a, b) = p.build_vocab()?;
            println!("corpus vocabulary {} motifs, complex vocabulary {} motifs", a.len(), b.len());
        }
        Cmd::Train2d => print_report(&p.train_2d()?),
        Cmd::Recalibrate => {
            let (r, before, after) = p.recalibrate()?;
            print_report(&r);
            println!("KL to complex vocabulary: {before:.6} -> {after:.6}");
        }
        Cmd::Train3d => print_report(&p.train_3d()?),
        Cmd::Evaluate => {
            let ev = p.evaluate()?;
            print!("{}", p.summary(&ev));
        }
        Cmd::Kernel => {
            let k = p.kernel()?;
            println!("{} motifs, {} with constant scores", k.keys.len(), k.flat.len());
        }
        Cmd::Report => print!("{}", p.summary(&p.load_evaluation()?)),
        Cmd::Run => {
            let ev = p.run_all()?;
            print!("{}", p.summary(&ev));
        }
        Cmd::Config => print!("{}", p.cfg.to_toml()),
        Cmd::Sample { smiles, complex, atom, view, top, draws, json } => {
            let filter = Filter { top_n: None, min_pq: None };
            let post = p.posterior(smiles.as_deref(), complex.as_deref(), *atom, *view, &filter)?;
            if *json {
                println!("{}", post.to_json());
                return Ok(());
            }
            println!("{:>4}  {:<24} {:>9} {:>9} {:>9} {:>9}", "rank", "motif", "p", "q_hat", "r_hat", "prob");
            for (rank, &i) in post.ranking().iter().take(*top).enumerate() {
                let row = &post.rows[i];
                println!(
                    "{:>4}  {:<24} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
                    rank + 1,
                    row.smiles,
                    row.p,
                    row.q_hat,
                    row.r_hat,
                    row.prob
                );
            }
            println!("normalized entropy {:.4}", post.entropy());
            let mut rng = pqr::rng::derive(p.cfg.seed, &[0x5A3]);
            for _ in 0..*draws {
                let k = post.sample(&mut rng);
                let row = post.rows.iter().find(|r| &r.key == k).expect("sampled key is a row");
                println!("draw {}", row.smiles);
            }
        }
        Cmd::Serve { addr, sessions, origin } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(pqr_serve::serve(p, addr, sessions.clone(), origin.clone()))?;
        }
    }
    Ok(())
}

fn print_report(r: &pqr::train::TrainReport) {
    println!(
        "epochs {} best {} train {:.5} val {:.5} skipped {}",
        r.epochs_run,
        r.best_epoch,
        r.train_loss.last().copied().unwrap_or(f64::NAN),
        r.val_loss.get(r.best_epoch).copied().unwrap_or(f64::NAN),
        r.skipped_examples
    );
}
