use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use layout_core::decode::{DecodeConfig, LayoutCompleter, Strategy};
use layout_core::harness::{split_corpus, ExperimentConfig};
use layout_core::layout::{
    generate_synthetic, ingest_corpus, read_corpus, write_corpus, IngestOptions, LayoutTree, Order,
    SynthParams, TypeManifest,
};
use layout_core::metrics::{evaluate_completions, MetricReport};
use layout_core::model::{Model, Variant};
use layout_core::parallel::Execution;
use layout_server::wire::{
    candidate, from_json, to_partial, CompletionResponse, ModelInfo, WireNode,
};
use layout_server::{Limits, Snapshot};

#[derive(Parser)]
#[command(
    name = "layout",
    version,
    about = "Train, evaluate and serve layout completion decoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a directory of screen hierarchies into a JSON-lines corpus.
    Ingest {
        #[arg(long)]
        data_dir: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        out: PathBuf,
        /// Shuffle sibling order with this seed instead of reading order.
        #[arg(long)]
        shuffle_children: Option<u64>,
    },
    /// Write a corpus of synthetic layouts.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = SynthParams::default().max_depth)]
        max_depth: usize,
        #[arg(long, default_value_t = SynthParams::default().max_children)]
        max_children: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into train.jsonl, valid.jsonl and test.jsonl.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the default experiment configuration as TOML.
    Config,
    /// Train one decoder variant of an experiment.
    Train {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the configuration's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score greedy completions of prefixes of a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file; defaults to the test split of --config.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "dfs")]
        order: Order,
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        /// Report only relaxed matching.
        #[arg(long)]
        relaxed: bool,
    },
    /// Evaluate every trained variant over all orders and prefix fractions.
    Matrix {
        #[arg(long)]
        config: PathBuf,
    },
    /// Complete one partial layout given as wire-schema JSON.
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        partial: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value = "dfs")]
        order: Order,
        #[arg(long, value_parser = parse_strategy, default_value = "greedy")]
        strategy: Strategy,
        #[arg(long, default_value_t = 4)]
        beam_width: usize,
        #[arg(long, default_value_t = 1)]
        num_candidates: usize,
    },
    /// Run the HTTP completion service.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        #[arg(long)]
        max_in_flight: Option<usize>,
        #[command(flatten)]
        manifest: ManifestArg,
    },
}

#[derive(Args)]
struct ManifestArg {
    /// Component type list, one name per line; defaults to the builtin 25 types.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl ManifestArg {
    fn load(&self) -> Result<TypeManifest> {
        match &self.manifest {
            Some(p) => {
                TypeManifest::load(p).with_context(|| format!("loading manifest {}", p.display()))
            }
            None => Ok(TypeManifest::builtin()),
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "greedy" => Ok(Strategy::Greedy),
        "beam" => Ok(Strategy::Beam),
        other => Err(format!(
            "unknown strategy `{other}` (expected greedy or beam)"
        )),
    }
}

fn experiment(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn ingest(
    data_dir: &Path,
    manifest: &TypeManifest,
    out: &Path,
    shuffle: Option<u64>,
) -> Result<()> {
    let opts = IngestOptions {
        shuffle_children: shuffle,
        ..IngestOptions::default()
    };
    let ingested = ingest_corpus(data_dir, manifest, &opts)?;
    write_corpus(out, &ingested.trees)?;
    let s = &ingested.stats;
    println!(
        "files {} kept {} rejected {}",
        ingested.files_seen,
        ingested.trees.len(),
        ingested.rejected_total()
    );
    for (kind, n) in &ingested.rejected {
        println!("  rejected {kind}: {n}");
    }
    println!(
        "nodes mean {:.2} min {} max {}; depth mean {:.2} min {} max {}",
        s.mean_nodes, s.min_nodes, s.max_nodes, s.mean_depth, s.min_depth, s.max_depth
    );
    Ok(())
}

fn split(corpus: &Path, ratios: &[f64], seed: u64, out_dir: &Path) -> Result<()> {
    let trees = read_corpus(corpus)?;
    let ratios: [f64; 3] = ratios.try_into().context("--ratios takes three values")?;
    let (train, valid, test) = split_corpus(&trees, ratios, seed)?;
    std::fs::create_dir_all(out_dir)?;
    for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
        write_corpus(&out_dir.join(format!("{name}.jsonl")), part)?;
        println!("{name}: {}", part.len());
    }
    Ok(())
}

fn train(variant: Variant, config: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = experiment(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    let (train, valid, _) = cfg.splits()?;
    println!(
        "training {variant} on {} trees, validating on {}",
        train.len(),
        valid.len()
    );
    let state = cfg.train_variant(variant, &train, &valid, |r| {
        if let Some(p) = &r.evaluated {
            println!(
                "step {:>6} loss {:.4} valid {:.4} best {:.4} lr {:.2e}",
                p.step, p.train_loss, p.valid_loss, p.best_valid, r.lr
            );
        }
    })?;
    println!(
        "stopped at step {} (early stop: {}); best validation loss {:.4}",
        state.step, state.stopped, state.best_valid
    );
    println!(
        "checkpoint {}",
        layout_core::harness::checkpoint_path(&cfg.output_dir, variant).display()
    );
    Ok(())
}

fn print_report(r: &MetricReport) {
    let mode = if r.relaxed { "relaxed" } else { "strict" };
    println!(
        "{mode}: F1 {:.1} (P {:.1} R {:.1}) next {:.1} edit {:.2}s over {} trees",
        r.f1, r.precision, r.recall, r.next_accuracy, r.edit_distance, r.trees
    );
}

fn eval(
    checkpoint: &Path,
    corpus: Option<&Path>,
    config: Option<&Path>,
    order: Order,
    fraction: f64,
    relaxed: bool,
) -> Result<()> {
    let cfg = experiment(config)?;
    let trees: Vec<LayoutTree> = match corpus {
        Some(p) => read_corpus(p)?,
        None if config.is_some() => cfg.splits()?.2,
        None => bail!("pass --corpus or --config"),
    };
    let (model, _) = Model::<f32>::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    if !model.supports(order) {
        bail!(
            "the {} decoder only completes {} prefixes",
            model.variant(),
            Order::Dfs
        );
    }
    let reports = evaluate_completions(
        &model,
        &trees,
        order,
        fraction,
        &cfg.costs,
        &cfg.decode,
        Execution::default(),
    )?;
    for r in reports.iter().filter(|r| !relaxed || r.relaxed) {
        print_report(r);
    }
    Ok(())
}

fn matrix(config: &Path) -> Result<()> {
    let cfg = experiment(Some(config))?;
    let report = cfg.run_matrix()?;
    print!("{}", report.to_table());
    println!("wrote {}", cfg.output_dir.join("matrix.tsv").display());
    Ok(())
}

fn complete(
    checkpoint: &Path,
    partial: &Path,
    manifest: TypeManifest,
    order: Order,
    strategy: Strategy,
    beam_width: usize,
    num_candidates: usize,
) -> Result<()> {
    let snap = Snapshot::load(checkpoint, manifest)?;
    let text = std::fs::read(partial).with_context(|| format!("reading {}", partial.display()))?;
    let root: WireNode =
        from_json(&text).with_context(|| format!("parsing {}", partial.display()))?;
    let partial = to_partial(&root, order, &snap.manifest)?;
    let cfg = DecodeConfig {
        strategy,
        beam_width: beam_width.max(num_candidates),
        max_new_nodes: None,
    };
    let start = std::time::Instant::now();
    let completions = snap.model.complete(&partial, &cfg)?;
    let given = partial.tree.len();
    let candidates: Vec<_> = completions
        .iter()
        .take(num_candidates.max(1))
        .map(|c| candidate(c, given, &snap.manifest))
        .collect();
    let resp = CompletionResponse {
        log_prob: candidates.first().map_or(f64::NEG_INFINITY, |c| c.log_prob),
        candidates,
        model_info: ModelInfo {
            variant: snap.model.variant().as_str().into(),
            checkpoint_hash: snap.hash.clone(),
        },
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    println!("{}", serde_json::to_string_pretty(&resp)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest {
            data_dir,
            manifest,
            out,
            shuffle_children,
        } => ingest(&data_dir, &manifest.load()?, &out, shuffle_children),
        Command::Synth {
            count,
            first_seed,
            max_depth,
            max_children,
            out,
        } => {
            let params = SynthParams {
                max_depth,
                max_children,
                ..SynthParams::default()
            };
            let trees: Vec<LayoutTree> = (first_seed..first_seed + count)
                .map(|s| generate_synthetic(s, &params))
                .collect();
            write_corpus(&out, &trees)?;
            println!("wrote {} layouts to {}", trees.len(), out.display());
            Ok(())
        }
        Command::Split {
            corpus,
            ratios,
            seed,
            out_dir,
        } => split(&corpus, &ratios, seed, &out_dir),
        Command::Config => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(())
        }
        Command::Train {
            variant,
            config,
            out,
        } => train(variant, config.as_deref(), out),
        Command::Eval {
            checkpoint,
            corpus,
            config,
            order,
            fraction,
            relaxed,
        } => eval(
            &checkpoint,
            corpus.as_deref(),
            config.as_deref(),
            order,
            fraction,
            relaxed,
        ),
        Command::Matrix { config } => matrix(&config),
        Command::Complete {
            checkpoint,
            partial,
            manifest,
            order,
            strategy,
            beam_width,
            num_candidates,
        } => complete(
            &checkpoint,
            &partial,
            manifest.load()?,
            order,
            strategy,
            beam_width,
            num_candidates,
        ),
        Command::Serve {
            checkpoint,
            port,
            host,
            timeout_ms,
            max_in_flight,
            manifest,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .context("bad --host/--port")?;
            let mut limits = Limits {
                timeout: Duration::from_millis(timeout_ms),
                ..Limits::default()
            };
            if let Some(n) = max_in_flight {
                limits.max_in_flight = n;
            }
            let manifest = manifest.load()?;
            println!("listening on http://{addr}");
            tokio::runtime::Runtime::new()?
                .block_on(layout_server::serve(addr, checkpoint, manifest, limits))?;
            Ok(())
        }
    }
}
