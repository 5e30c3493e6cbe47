//! `mars`: runs the recommender pipeline over one collection directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use mars_core::evaluation::DEFAULT_CUTOFFS;
use mars_core::pipeline::{
    analyze_collection, evaluate_collection, featurize, ingest, search_collection, train_collection, Layout, Settings,
};
use mars_core::training::{SearchSpace, TrainConfig};

/// Settings the pipeline reads besides the training hyperparameters.
const PIPELINE_KEYS: [&str; 12] = [
    "collection",
    "out",
    "transactions",
    "complete_items",
    "min_interactions",
    "image_embeddings",
    "image_manifest",
    "cae_epochs",
    "text_embeddings",
    "traits",
    "word_vectors",
    "word_vector_dim",
];

#[derive(Debug, Parser)]
#[command(name = "mars", version, about = "Multi-modal graph-attention NFT recommender")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Collection name to keep from the transaction export.
    #[arg(long, global = true)]
    collection: Option<String>,
    /// Collection directory for inputs and outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Evaluation cutoff; repeat for several.
    #[arg(long = "k", global = true)]
    k: Vec<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    hops: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long = "batch-size", global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
enum Verb {
    /// Filter and label transactions, then write interactions and split.
    Ingest,
    /// Build item modality features and user features.
    Featurize,
    /// Train a model and write its checkpoint and loss trace.
    Train,
    /// Score a checkpoint on the test split.
    Evaluate,
    /// Random hyperparameter search by validation recall.
    Search,
    /// Degree distribution and per-user attention scores.
    Analyze,
}

struct Run {
    settings: Settings,
    layout: Layout,
    collection: String,
    seed: u64,
}

fn settings_for(cli: &Cli) -> anyhow::Result<Settings> {
    let mut settings = match &cli.config {
        Some(path) => Settings::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => Settings::from_map(Default::default(), Path::new(".")),
    };
    for key in settings.values().keys() {
        if !TrainConfig::KEYS.contains(&key.as_str()) && !PIPELINE_KEYS.contains(&key.as_str()) {
            bail!("unknown setting {key:?} in config");
        }
    }
    if let Some(v) = cli.seed {
        settings.set("seed", v.to_string());
    }
    if let Some(v) = cli.alpha {
        settings.set("alpha", v.to_string());
    }
    if let Some(v) = cli.hops {
        settings.set("hops", v.to_string());
    }
    if let Some(v) = cli.dim {
        settings.set("dim", v.to_string());
    }
    if let Some(v) = cli.batch_size {
        settings.set("batch_size", v.to_string());
    }
    Ok(settings)
}

fn prepare(cli: &Cli) -> anyhow::Result<Run> {
    let settings = settings_for(cli)?;
    let root = match (&cli.out, settings.path("out")) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p,
        (None, None) => PathBuf::from("."),
    };
    let collection = cli
        .collection
        .clone()
        .or_else(|| settings.get("collection").map(str::to_string))
        .unwrap_or_default();
    let seed = settings.train_config()?.seed;
    Ok(Run {
        layout: Layout::new(&root),
        settings,
        collection,
        seed,
    })
}

fn search_space(cli: &Cli) -> SearchSpace {
    let mut space = SearchSpace::default();
    if let Some(v) = cli.dim {
        space.dims = vec![v];
    }
    if let Some(v) = cli.alpha {
        space.alphas = vec![v];
    }
    if let Some(v) = cli.hops {
        space.hops = vec![v];
    }
    if let Some(v) = cli.batch_size {
        space.batch_sizes = vec![v];
    }
    space
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let run = prepare(cli)?;
    let layout = &run.layout;
    match cli.verb {
        Verb::Ingest => {
            let s = ingest(&run.settings, &run.collection, run.seed, layout)?;
            let name = if s.collection.is_empty() { "all collections" } else { &s.collection };
            println!("{name}: {} users / {} items", s.users, s.items);
            print!("{}", s.to_text());
        }
        Verb::Featurize => {
            let s = featurize(&run.settings, &run.collection, run.seed, layout)?;
            println!(
                "features for {} items and {} users; widths image {} text {} price {} transaction {}",
                s.items, s.users, s.dims[0], s.dims[1], s.dims[2], s.dims[3]
            );
        }
        Verb::Train => {
            let cfg = run.settings.train_config()?;
            let outcome = train_collection(layout, &cfg, cli.checkpoint.as_deref())?;
            for r in &outcome.trace {
                let recall = r.val_recall.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
                println!("epoch {:>3}  loss {:.6}  val_recall@{} {recall}", r.epoch, r.loss, cfg.select_k);
            }
            let path = cli.checkpoint.clone().unwrap_or_else(|| layout.checkpoint());
            println!("best epoch {} written to {}", outcome.best_epoch, path.display());
        }
        Verb::Evaluate => {
            let path = cli.checkpoint.clone().unwrap_or_else(|| layout.checkpoint());
            if !path.is_file() {
                bail!("no checkpoint at {}; run `mars train` or pass --checkpoint", path.display());
            }
            let ks = if cli.k.is_empty() { DEFAULT_CUTOFFS.to_vec() } else { cli.k.clone() };
            let report = evaluate_collection(layout, &path, &ks, run.seed, &layout.eval_dir())?;
            for &k in &ks {
                println!(
                    "recall@{k} {:.4}  ndcg@{k} {:.4}  (pop {:.4} / {:.4})",
                    report.model.mean_recall(k).unwrap_or(0.0),
                    report.model.mean_ndcg(k).unwrap_or(0.0),
                    report.popularity.mean_recall(k).unwrap_or(0.0),
                    report.popularity.mean_ndcg(k).unwrap_or(0.0)
                );
            }
            println!(
                "{} users evaluated, {} skipped; report in {}",
                report.model.n_users(),
                report.skipped_users,
                layout.eval_dir().display()
            );
        }
        Verb::Search => {
            let base = run.settings.train_config()?;
            let trials = cli.trials.unwrap_or(5);
            let outcome = search_collection(layout, &base, &search_space(cli), trials, run.seed, &layout.root)?;
            let b = &outcome.best;
            println!(
                "best of {trials}: dim {} alpha {} batch_size {} hops {} lambda {} (val_recall@{} {:.4})",
                b.dim, b.alpha, b.batch_size, b.hops, b.lambda, b.select_k, outcome.best_recall
            );
        }
        Verb::Analyze => {
            let checkpoint = cli.checkpoint.clone().or_else(|| {
                let p = layout.checkpoint();
                p.is_file().then_some(p)
            });
            let s = analyze_collection(layout, checkpoint.as_deref(), &layout.root)?;
            let slope = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
            println!("log-log degree slope: items {} users {}", slope(s.item_slope), slope(s.user_slope));
            if let Some(n) = s.attention_users {
                println!("attention scores written for {n} users");
            }
        }
    }
    Ok(())
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("MARS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("MARS_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
