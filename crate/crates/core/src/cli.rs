//! Command-line front end: `synth`, `train`, `encode`, `eval` and `ablate`.
//!
//! Hyper-parameters resolve as defaults, then `--config FILE`, then explicit
//! flags.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};

use crate::ablation::{pack_dataset, run_ablation, Variant};
use crate::config::Settings;
use crate::dataset::LabeledDataset;
use crate::encoder::{Activation, Encoder};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::loss::{AlphaMode, WeightGradMode};
use crate::retrieval::{evaluate, EvalOptions, PackedCodes};
use crate::synth::{generate, min_mean_separation, SynthParams};
use crate::train::{train, write_log_csv};

#[derive(Debug, Parser)]
#[command(name = "phash", version, about = "Priority-weighted deep hashing toolkit")]
pub struct Cli {
    /// Cap on worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run single-threaded so every reduction happens in a fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// `key = value` file applied before explicit flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian-cluster dataset.
    Synth(SynthArgs),
    /// Train an encoder and write a checkpoint.
    Train(TrainArgs),
    /// Encode a dataset into packed binary codes.
    Encode(EncodeArgs),
    /// Evaluate query codes against database codes.
    Eval(EvalArgs),
    /// Train every variant at several code lengths and tabulate MAP.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output path (`.phds` for binary, CSV otherwise).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Optional output path for a class-balanced query set.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Training items per class, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,100,100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub dims: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Minimum distance between class means.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 20)]
    pub queries_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Hyper-parameter overrides shared by `train` and `ablate`.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub inv_epsilon: Option<f64>,
    #[arg(long, value_parser = PossibleValuesParser::new(["degree", "unit", "focal-pt"])
        .map(|s| s.parse::<AlphaMode>().expect("listed value")))]
    pub alpha_mode: Option<AlphaMode>,
    #[arg(long, value_parser = PossibleValuesParser::new(["detached", "full"])
        .map(|s| s.parse::<WeightGradMode>().expect("listed value")))]
    pub weight_grad: Option<WeightGradMode>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = PossibleValuesParser::new(["relu", "tanh"])
        .map(|s| s.parse::<Activation>().expect("listed value")))]
    pub activation: Option<Activation>,
    /// Count an item as its own neighbour in the similarity degrees.
    #[arg(long)]
    pub include_self_pairs: bool,
}

impl HyperArgs {
    pub fn apply(&self, s: &mut Settings) {
        if let Some(v) = self.beta {
            s.loss.beta = v;
        }
        if let Some(v) = self.gamma {
            s.loss.gamma = v;
        }
        if let Some(v) = self.inv_epsilon {
            s.loss.inv_epsilon = v;
        }
        if let Some(v) = self.alpha_mode {
            s.loss.alpha_mode = v;
        }
        if let Some(v) = self.weight_grad {
            s.loss.weight_grad_mode = v;
        }
        if let Some(v) = self.batch {
            s.train.batch_size = v;
        }
        if let Some(v) = self.epochs {
            s.train.epochs = v;
        }
        if let Some(v) = self.lr {
            s.train.lr = v;
        }
        if let Some(v) = self.momentum {
            s.train.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            s.train.weight_decay = v;
        }
        if let Some(v) = self.seed {
            s.train.seed = v;
        }
        if let Some(v) = &self.hidden {
            s.hidden = v.clone();
        }
        if let Some(v) = self.activation {
            s.activation = v;
        }
        if self.include_self_pairs {
            s.include_self_pairs = true;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub model: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub bits: Option<usize>,
    /// Apply an ablation variant (dph, dph-f, dph-w, dph-q) on top of the
    /// resolved settings.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output code file.
    #[arg(long)]
    pub codes: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Query code file.
    #[arg(long)]
    pub queries: PathBuf,
    /// Database code file.
    #[arg(long)]
    pub codes: PathBuf,
    /// JSON report path; `<stem>_pr.csv` and `<stem>_p_at_n.csv` go next to it.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub map_at: Option<usize>,
    /// Depths for P@N, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub top_n: Option<Vec<usize>>,
    /// Keep database items whose id equals the query id.
    #[arg(long)]
    pub include_self: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Training (and database) set.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Query set.
    #[arg(long)]
    pub queries: PathBuf,
    /// Code lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16,32")]
    pub bits: Vec<usize>,
    /// Output CSV table.
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

fn settings(config: Option<&Path>, hyper: &HyperArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = config {
        s.apply_file(path)?;
    }
    hyper.apply(&mut s);
    s.validate()?;
    Ok(s)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("no such file: {}", path.display())))
    }
}

fn sibling(report: &Path, suffix: &str) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    report.with_file_name(format!("{stem}{suffix}"))
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(config, &a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Eval(a) => cmd_eval(config, &a),
        Command::Ablate(a) => cmd_ablate(config, &a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let params = SynthParams {
        class_sizes: a.sizes.clone(),
        dim: a.dims,
        noise: a.noise,
        separation: a.separation,
        queries_per_class: a.queries_per_class,
        seed: a.seed,
    };
    let out = generate(&params)?;
    let sep = min_mean_separation(&out.train).unwrap_or(f64::INFINITY);
    if sep + 1e-9 < a.separation {
        return Err(Error::InvalidDataset(format!(
            "generated class means are {sep:.4} apart, below the requested {}",
            a.separation
        )));
    }
    log::info!("min class-mean separation {sep:.4}");
    out.train.save(&a.dataset)?;
    if let Some(q) = &a.queries {
        out.queries.save(q)?;
    }
    Ok(())
}

pub fn cmd_train(config: Option<&Path>, a: &TrainArgs) -> Result<()> {
    require_file(&a.dataset)?;
    let mut s = settings(config, &a.hyper)?;
    if let Some(b) = a.bits {
        s.bits = b;
        s.validate()?;
    }
    if let Some(v) = a.variant {
        s.loss = v.apply(&s.loss);
    }
    let dataset = LabeledDataset::load(&a.dataset)?;
    let graph = build_graph(&dataset, s.include_self_pairs)?;
    let out = train(&dataset, &graph, &s.encoder_spec(dataset.dim()), &s.loss, &s.train)?;
    out.encoder.save(&a.model)?;
    if let Some(path) = &a.log {
        write_log_csv(BufWriter::new(File::create(path)?), &out.log)?;
    }
    if let Some(last) = out.log.last() {
        log::info!(
            "trained {} epochs: L = {:.6}, Q = {:.6}",
            out.log.len(),
            last.mean_pair_loss,
            last.mean_quant_loss
        );
    }
    Ok(())
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    require_file(&a.dataset)?;
    require_file(&a.model)?;
    let dataset = LabeledDataset::load(&a.dataset)?;
    let encoder = Encoder::load(&a.model)?;
    pack_dataset(&encoder, &dataset)?.save(&a.codes)
}

pub fn cmd_eval(config: Option<&Path>, a: &EvalArgs) -> Result<()> {
    require_file(&a.queries)?;
    require_file(&a.codes)?;
    let mut map_at = Settings::default().map_at;
    if let Some(path) = config {
        let mut s = Settings::default();
        s.apply_file(path)?;
        map_at = s.map_at;
    }
    if let Some(m) = a.map_at {
        map_at = m;
    }
    let queries = PackedCodes::load(&a.queries)?;
    let db = PackedCodes::load(&a.codes)?;
    let mut opts = EvalOptions::for_bits(db.bits(), map_at);
    if let Some(t) = &a.top_n {
        opts.top_n = t.clone();
    }
    opts.exclude_self = !a.include_self;
    let report = evaluate(&queries, &db, &opts)?;
    std::fs::write(&a.report, report.to_json())?;
    report.write_pr_csv(BufWriter::new(File::create(sibling(&a.report, "_pr.csv"))?))?;
    report.write_p_at_n_csv(BufWriter::new(File::create(sibling(&a.report, "_p_at_n.csv"))?))?;
    log::info!("MAP@{} = {:.4}, P@H<=2 = {:.4}", map_at, report.map_at_k, report.p_at_h2);
    Ok(())
}

pub fn cmd_ablate(config: Option<&Path>, a: &AblateArgs) -> Result<()> {
    require_file(&a.dataset)?;
    require_file(&a.queries)?;
    let s = settings(config, &a.hyper)?;
    let train_set = LabeledDataset::load(&a.dataset)?;
    let queries = LabeledDataset::load(&a.queries)?;
    let table = run_ablation(
        &train_set,
        &queries,
        &s.encoder_spec(train_set.dim()),
        &s.loss,
        &s.train,
        &a.bits,
        s.map_at,
    )?;
    table.write_csv(BufWriter::new(File::create(&a.report)?))
}
