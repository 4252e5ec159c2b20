//! Command-line surface: a config file plus a handful of path flags drive
//! each pipeline stage. All artifacts are written atomically; all randomness
//! derives from one run seed by labeled hashing, so a single number
//! reproduces a whole pipeline.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cache::{
    build_cache, read_embeddings_csv, CacheBuildOptions, CacheReader, ClassifierHead,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    deterioration_sweep, id_ood_auroc, r_auroc, recall_at_1, EvalReport, Perturbation,
};
use crate::fsio::atomic_write;
use crate::head::{UncertaintyHead, DEFAULT_HIDDEN_DIM};
use crate::losses::{LossVariant, DEFAULT_MARGIN};
use crate::matrix::Matrix;
use crate::optim::{
    AdamWConfig, CosineSchedule, OptimizerKind, SgdConfig, DEFAULT_FINAL_LR, DEFAULT_PEAK_LR,
    DEFAULT_WARMUP_START_LR,
};
use crate::retrieval::{clean_database, safe_retrieve, CleanMode, RetrievalPolicy};
use crate::seeding::derive_seed;
use crate::synth::{NoiseField, SyntheticOracle};
use crate::trainer::{train_head, LossSource, TrainConfig, DEFAULT_BATCH_SIZE};
use crate::viz::{render_scatter, tsne_embed, write_coordinate_table, ScatterStyle, TsneConfig};

const TRAIN_HELP: &str = "\
Config keys read by `train` ([train] section unless noted):
  variant            ranking | l2 | joint           (default ranking)
  margin             ranking hinge margin           (default 0.1)
  leeway             tie window on loss gaps        (default 0)
  loss_source        stored | logits                (default stored)
  batch_size         samples per optimizer step     (default 256)
  total_steps        optimizer steps                (default 2000)
  warmup_steps       linear warmup steps            (default 100)
  optimizer          adamw | sgd                    (default adamw)
  beta1, beta2       AdamW moment decays            (default 0.8, 0.95)
  epsilon            AdamW epsilon                  (default 1e-8)
  weight_decay       decoupled weight decay         (default 0.0001)
  momentum           SGD momentum                   (default 0.9)
  warmup_start_lr    learning rate at step 0        (default 0.0001)
  peak_lr            learning rate after warmup     (default 0.0028)
  final_lr           learning rate at the last step (default 1e-8)
  checkpoint_every   steps between checkpoints      (default 0 = off)
  [head] hidden_dim  hidden layer width             (default 512)

The head architecture is fixed: Linear -> LeakyReLU (slope 0.01) -> Linear ->
LeakyReLU -> Linear -> Softplus (beta 1, threshold 20). Only the hidden width
is configurable.";

const SYNTH_HELP: &str = "\
Config keys read by `synth` ([synth] section):
  n_classes    Gaussian mixture components       (default 2)
  embed_dim    embedding dimensionality          (default 8)
  sigma        per-class standard deviation      (default 1.0)
  noise        none | boundary-ramp              (default none)
  max_flip     ramp's far-field flip probability (required for boundary-ramp)
  ramp_width   ramp's distance scale             (required for boundary-ramp)
  n_samples    samples per view                  (default 1000)
  n_epochs     augmentation views                (default 1)

Writes the cache to --out and the per-sample Bayes risk of the base view to
--risk-out (default: --out with extension `risk.txt`).";

/// Pipeline driver for feed-forward uncertainty heads on cached embeddings.
#[derive(Debug, Parser)]
#[command(name = "uhead", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an embedding cache from CSV views, or inspect one.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Generate a synthetic dataset with known per-sample Bayes risk.
    #[command(after_help = SYNTH_HELP)]
    Synth(SynthArgs),
    /// Train an uncertainty head on a cache.
    #[command(after_help = TRAIN_HELP)]
    Train(TrainArgs),
    /// Evaluate a trained head against a cache.
    Eval(EvalArgs),
    /// Uncertainty-gated 1-NN retrieval between two caches.
    Retrieve(RetrieveArgs),
    /// Project a cache to a 2-D map shaded by predicted uncertainty.
    Viz(VizArgs),
}

#[derive(Debug, Subcommand)]
enum CacheCommand {
    /// Assemble a cache from per-view embedding CSVs listed in the config.
    Build(CacheBuildArgs),
    /// Print a cache file's header fields.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct CacheBuildArgs {
    /// Config file; reads [cache] keys `views` (comma-separated CSV paths,
    /// each row `label,v1,...,vd`), `classifier` (text file path),
    /// `store_losses`, `store_logits`.
    #[arg(long)]
    config: PathBuf,
    /// Cache file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Cache file to describe.
    path: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Config file with a [synth] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cache file to write.
    #[arg(long)]
    out: PathBuf,
    /// Bayes-risk sidecar path.
    #[arg(long)]
    risk_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Config file with [train] and [head] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cache to train on.
    #[arg(long)]
    cache: PathBuf,
    /// Trained head checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Directory for intermediate checkpoints (required when the config sets
    /// checkpoint_every).
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Also write the per-step training log here.
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Config file; reads [eval] keys `perturbation` (gaussian-noise |
    /// coordinate-mask | rescale) and `severities` (comma-separated).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cache to evaluate on (view 0).
    #[arg(long)]
    cache: PathBuf,
    /// Trained head checkpoint.
    #[arg(long)]
    head: PathBuf,
    /// Report path; `.json` selects JSON, anything else the text format.
    #[arg(long)]
    out: PathBuf,
    /// Out-of-distribution cache; adds the ID-vs-OOD AUROC to the report.
    #[arg(long)]
    ood_cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    /// Config file; reads [retrieve] keys `query_reject_fraction`,
    /// `database_clean_fraction`, `clean_mode` (global | per-class).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained head checkpoint scoring both sides.
    #[arg(long)]
    head: PathBuf,
    /// Query cache (view 0).
    #[arg(long)]
    queries: PathBuf,
    /// Database cache (view 0).
    #[arg(long)]
    database: PathBuf,
    /// Outcome path; `.json` selects JSON, anything else the text format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VizArgs {
    /// Config file with a [viz] section (perplexity, iterations,
    /// learning_rate, momenta, exaggeration, point styling).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cache to project (view 0).
    #[arg(long)]
    cache: PathBuf,
    /// Trained head; omitted, all points render at uniform uncertainty.
    #[arg(long)]
    head: Option<PathBuf>,
    /// SVG path to write.
    #[arg(long)]
    out: PathBuf,
    /// Coordinate table path (default: --out with extension `coords.txt`).
    #[arg(long)]
    coords_out: Option<PathBuf>,
}

/// Parses `argv` and runs the selected pipeline stage.
pub fn dispatch<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::parse_from(argv);
    match cli.command {
        Command::Cache(CacheCommand::Build(args)) => run_cache_build(args),
        Command::Cache(CacheCommand::Inspect(args)) => run_cache_inspect(args),
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Retrieve(args) => run_retrieve(args),
        Command::Viz(args) => run_viz(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run_seed(cfg: &RunConfig, flag: Option<u64>) -> Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => cfg.seed(),
    }
}

/// Error for a config value that parsed but names no known choice.
fn bad_choice(cfg: &RunConfig, section: &str, key: &str, got: &str, expected: &str) -> Error {
    Error::Config {
        line: cfg.line_of(section, key).unwrap_or(0),
        detail: format!("key `{key}`: expected {expected}, got `{got}`"),
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = run_seed(&cfg, args.seed)?;

    let n_classes = cfg.get_or("synth", "n_classes", 2usize)?;
    let embed_dim = cfg.get_or("synth", "embed_dim", 8usize)?;
    let sigma = cfg.get_or("synth", "sigma", 1.0f64)?;
    let n_samples = cfg.get_or("synth", "n_samples", 1000usize)?;
    let n_epochs = cfg.get_or("synth", "n_epochs", 1u16)?;
    let noise = match cfg.get_str("synth", "noise").unwrap_or("none") {
        "none" => {
            for key in ["max_flip", "ramp_width"] {
                if let Some(line) = cfg.line_of("synth", key) {
                    return Err(Error::Config {
                        line,
                        detail: format!("key `{key}` requires noise = boundary-ramp"),
                    });
                }
            }
            NoiseField::None
        }
        "boundary-ramp" => NoiseField::BoundaryRamp {
            max_flip: cfg.require("synth", "max_flip")?,
            width: cfg.require("synth", "ramp_width")?,
        },
        other => return Err(bad_choice(&cfg, "synth", "noise", other, "none or boundary-ramp")),
    };

    let oracle = SyntheticOracle::new(
        n_classes,
        embed_dim,
        sigma,
        noise,
        derive_seed(seed, "synth", 0),
    )?;
    let risk_path = args
        .risk_out
        .unwrap_or_else(|| args.out.with_extension("risk.txt"));
    oracle.generate_to_files(n_samples, n_epochs, &args.out, &risk_path)?;
    println!(
        "wrote cache {} ({} samples x {} views, dim {}) and bayes risk {}",
        args.out.display(),
        n_samples,
        n_epochs,
        embed_dim,
        risk_path.display()
    );
    Ok(())
}

fn run_cache_build(args: CacheBuildArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let views_value: String = cfg.require("cache", "views")?;
    let classifier = match cfg.get_str("cache", "classifier") {
        Some(path) => Some(ClassifierHead::load_text(Path::new(path))?),
        None => None,
    };
    let store_losses = cfg.get_bool("cache", "store_losses", classifier.is_some())?;
    let store_logits = cfg.get_bool("cache", "store_logits", classifier.is_some())?;

    let mut epochs = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for (i, part) in views_value.split(',').enumerate() {
        let (view, view_labels) = read_embeddings_csv(Path::new(part.trim()))?;
        if i == 0 {
            labels = view_labels;
        } else if view_labels != labels {
            return Err(Error::Config {
                line: cfg.line_of("cache", "views").unwrap_or(0),
                detail: format!(
                    "view `{}` labels its samples differently from the first view",
                    part.trim()
                ),
            });
        }
        epochs.push(view);
    }
    let n_classes = match &classifier {
        Some(c) => c.n_classes() as u32,
        None => labels.iter().copied().max().map_or(1, |m| m + 1),
    };
    let n = labels.len();
    let n_epochs = epochs.len();
    build_cache(
        &args.out,
        epochs,
        labels,
        n_classes,
        classifier.as_ref(),
        CacheBuildOptions {
            store_losses,
            store_logits,
        },
    )?;
    println!(
        "wrote cache {} ({} samples x {} views)",
        args.out.display(),
        n,
        n_epochs
    );
    Ok(())
}

fn run_cache_inspect(args: InspectArgs) -> Result<()> {
    let reader = CacheReader::open(&args.path)?;
    let h = reader.header();
    println!("n_samples: {}", h.n_samples);
    println!("n_epochs: {}", h.n_epochs);
    println!("embed_dim: {}", h.embed_dim);
    println!("n_classes: {}", h.n_classes);
    println!("has_losses: {}", h.has_losses);
    println!("has_logits: {}", h.has_logits);
    Ok(())
}

fn train_config_from(cfg: &RunConfig, seed: u64) -> Result<TrainConfig> {
    let loss_variant = match cfg.get_str("train", "variant").unwrap_or("ranking") {
        "ranking" => LossVariant::RankingMargin {
            margin: cfg.get_or("train", "margin", DEFAULT_MARGIN)?,
            leeway: cfg.get_or("train", "leeway", 0.0f32)?,
        },
        "l2" => LossVariant::L2Regression,
        "joint" => LossVariant::JointVanilla,
        other => return Err(bad_choice(cfg, "train", "variant", other, "ranking, l2 or joint")),
    };
    let loss_source = match cfg.get_str("train", "loss_source").unwrap_or("stored") {
        "stored" => LossSource::StoredLosses,
        "logits" => LossSource::FromLogits,
        other => return Err(bad_choice(cfg, "train", "loss_source", other, "stored or logits")),
    };
    let optimizer = match cfg.get_str("train", "optimizer").unwrap_or("adamw") {
        "adamw" => {
            let d = AdamWConfig::default();
            OptimizerKind::AdamW(AdamWConfig {
                beta1: cfg.get_or("train", "beta1", d.beta1)?,
                beta2: cfg.get_or("train", "beta2", d.beta2)?,
                epsilon: cfg.get_or("train", "epsilon", d.epsilon)?,
                weight_decay: cfg.get_or("train", "weight_decay", d.weight_decay)?,
            })
        }
        "sgd" => {
            let d = SgdConfig::default();
            OptimizerKind::Sgd(SgdConfig {
                momentum: cfg.get_or("train", "momentum", d.momentum)?,
                weight_decay: cfg.get_or("train", "weight_decay", d.weight_decay)?,
            })
        }
        other => return Err(bad_choice(cfg, "train", "optimizer", other, "adamw or sgd")),
    };
    let total_steps = cfg.get_or("train", "total_steps", 2000usize)?;
    let schedule = CosineSchedule::new(
        cfg.get_or("train", "warmup_start_lr", DEFAULT_WARMUP_START_LR)?,
        cfg.get_or("train", "peak_lr", DEFAULT_PEAK_LR)?,
        cfg.get_or("train", "final_lr", DEFAULT_FINAL_LR)?,
        cfg.get_or("train", "warmup_steps", 100usize)?,
        total_steps,
    )?;
    Ok(TrainConfig {
        loss_variant,
        loss_source,
        batch_size: cfg.get_or("train", "batch_size", DEFAULT_BATCH_SIZE)?,
        total_steps,
        optimizer,
        schedule,
        seed: derive_seed(seed, "train", 0),
        checkpoint_every: cfg.get_or("train", "checkpoint_every", 0usize)?,
    })
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = run_seed(&cfg, args.seed)?;
    let config = train_config_from(&cfg, seed)?;

    let mut cache = CacheReader::open(&args.cache)?;
    let hidden_dim = cfg.get_or("head", "hidden_dim", DEFAULT_HIDDEN_DIM)?;
    let mut head = UncertaintyHead::init(
        cache.embed_dim(),
        hidden_dim,
        derive_seed(seed, "head-init", 0),
    )?;
    let log = train_head(&mut cache, &mut head, &config, args.checkpoint_dir.as_deref())?;
    head.save(&args.out)?;
    if let Some(log_path) = &args.log_out {
        log.write(log_path)?;
    }
    let last = log.records.last().expect("at least one step");
    println!(
        "trained {} steps (final mean loss {:.6}); wrote head {}",
        log.records.len(),
        last.mean_loss,
        args.out.display()
    );
    Ok(())
}

/// View-0 embeddings, labels, and head uncertainties for a cache.
fn score_cache(
    path: &Path,
    head: &UncertaintyHead,
) -> Result<(Matrix<f32>, Vec<u32>, Vec<f32>)> {
    let mut reader = CacheReader::open(path)?;
    let embeddings = reader.epoch_embeddings(0)?;
    let labels = reader.epoch_labels(0)?;
    let uncertainties = head.predict(&embeddings)?;
    Ok((embeddings, labels, uncertainties))
}

fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| f64::from(v)).collect()
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = run_seed(&cfg, args.seed)?;
    let head = UncertaintyHead::load(&args.head)?;
    let (embeddings, labels, uncertainties) = score_cache(&args.cache, &head)?;

    let perturbation = match cfg.get_str("eval", "perturbation").unwrap_or("gaussian-noise") {
        "gaussian-noise" => Perturbation::GaussianNoise,
        "coordinate-mask" => Perturbation::CoordinateMask,
        "rescale" => Perturbation::Rescale,
        other => {
            return Err(bad_choice(
                &cfg,
                "eval",
                "perturbation",
                other,
                "gaussian-noise, coordinate-mask or rescale",
            ))
        }
    };
    let severities = cfg.get_f64_list("eval", "severities", &[0.0, 0.5, 1.0, 2.0])?;

    let id_ood = match &args.ood_cache {
        Some(ood_path) => {
            let (_, _, ood_uncertainties) = score_cache(ood_path, &head)?;
            Some(id_ood_auroc(&widen(&uncertainties), &widen(&ood_uncertainties))?)
        }
        None => None,
    };
    let report = EvalReport {
        dataset: args
            .cache
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.cache.display().to_string()),
        r_auroc: r_auroc(&embeddings, &labels, &widen(&uncertainties))?,
        recall_at_1: recall_at_1(&embeddings, &labels)?,
        ambiguity_auroc: None,
        id_ood_auroc: id_ood,
        deterioration: Some(deterioration_sweep(
            &head,
            &embeddings,
            perturbation,
            &severities,
            derive_seed(seed, "eval-perturb", 0),
        )?),
    };
    if args.out.extension().is_some_and(|e| e == "json") {
        report.write_json(&args.out)?;
    } else {
        report.write_text(&args.out)?;
    }
    print!("{}", report.to_text());
    println!("wrote report {}", args.out.display());
    Ok(())
}

fn run_retrieve(args: RetrieveArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let policy = RetrievalPolicy {
        query_reject_fraction: cfg.get_or(
            "retrieve",
            "query_reject_fraction",
            RetrievalPolicy::default().query_reject_fraction,
        )?,
        database_clean_fraction: cfg.get_or(
            "retrieve",
            "database_clean_fraction",
            RetrievalPolicy::default().database_clean_fraction,
        )?,
        clean_mode: match cfg.get_str("retrieve", "clean_mode").unwrap_or("global") {
            "global" => CleanMode::GlobalQuantile,
            "per-class" => CleanMode::PerClassQuantile,
            other => {
                return Err(bad_choice(&cfg, "retrieve", "clean_mode", other, "global or per-class"))
            }
        },
    };
    let head = UncertaintyHead::load(&args.head)?;
    let (queries, query_labels, query_uncertainties) = score_cache(&args.queries, &head)?;
    let (database, database_labels, database_uncertainties) = score_cache(&args.database, &head)?;

    let retained = clean_database(
        &database,
        Some(&database_labels),
        &database_uncertainties,
        &policy,
    )?;
    let outcome = safe_retrieve(
        &queries,
        &query_uncertainties,
        Some(&query_labels),
        &database,
        Some(&database_labels),
        &retained,
        &policy,
    )?;
    if args.out.extension().is_some_and(|e| e == "json") {
        let json = serde_json::to_string_pretty(&outcome)
            .map_err(|e| Error::invalid(format!("outcome serialization failed: {e}")))?;
        atomic_write(&args.out, json.as_bytes())?;
    } else {
        atomic_write(&args.out, outcome.to_text().as_bytes())?;
    }
    match outcome.error_rate {
        Some(rate) => println!(
            "answered {:.1}% of queries, error rate {:.4}; wrote {}",
            100.0 * outcome.answered_fraction,
            rate,
            args.out.display()
        ),
        None => println!(
            "answered {:.1}% of queries; wrote {}",
            100.0 * outcome.answered_fraction,
            args.out.display()
        ),
    }
    Ok(())
}

fn run_viz(args: VizArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = run_seed(&cfg, args.seed)?;
    let mut reader = CacheReader::open(&args.cache)?;
    let embeddings = reader.epoch_embeddings(0)?;
    let labels = reader.epoch_labels(0)?;
    let uncertainties = match &args.head {
        Some(head_path) => UncertaintyHead::load(head_path)?.predict(&embeddings)?,
        None => vec![0.0f32; embeddings.rows()],
    };

    let defaults = TsneConfig::default();
    let config = TsneConfig {
        perplexity: cfg.get_or("viz", "perplexity", defaults.perplexity)?,
        iterations: cfg.get_or("viz", "iterations", defaults.iterations)?,
        learning_rate: cfg.get_or("viz", "learning_rate", defaults.learning_rate)?,
        early_momentum: cfg.get_or("viz", "early_momentum", defaults.early_momentum)?,
        late_momentum: cfg.get_or("viz", "late_momentum", defaults.late_momentum)?,
        momentum_switch_iter: cfg.get_or(
            "viz",
            "momentum_switch_iter",
            defaults.momentum_switch_iter,
        )?,
        exaggeration: cfg.get_or("viz", "exaggeration", defaults.exaggeration)?,
        exaggeration_iters: cfg.get_or("viz", "exaggeration_iters", defaults.exaggeration_iters)?,
        seed: derive_seed(seed, "viz", 0),
    };
    let style_defaults = ScatterStyle::default();
    let style = ScatterStyle {
        base_radius: cfg.get_or("viz", "base_radius", style_defaults.base_radius)?,
        radius_scale: cfg.get_or("viz", "radius_scale", style_defaults.radius_scale)?,
        ..style_defaults
    };

    let output = tsne_embed(&embeddings, &config)?;
    render_scatter(&output.coords, &labels, &uncertainties, &style, &args.out)?;
    let coords_path = args
        .coords_out
        .unwrap_or_else(|| args.out.with_extension("coords.txt"));
    write_coordinate_table(&output.coords, &labels, &uncertainties, &coords_path)?;
    println!(
        "map KL {:.4} -> {:.4}; wrote {} and {}",
        output.initial_kl,
        output.final_kl,
        args.out.display(),
        coords_path.display()
    );
    Ok(())
}
