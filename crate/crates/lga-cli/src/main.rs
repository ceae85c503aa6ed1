//! Command-line driver for the few-shot action matching pipeline.
//!
//! Subcommands: `eval` (episodic evaluation → JSON report), `sweep`
//! (ablation runs over one axis → CSV), `prompt` (emit the decomposition
//! prompt), `fetch` (query a chat-completions endpoint for descriptions),
//! `synth` (generate a synthetic feature store), and `inspect` (store
//! summary).
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error (missing or
//! corrupt files, stores too small for the protocol), 4 runtime error.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use lga::fusion::{default_hidden, init_weights, FusionError, FusionWeights};
use lga::harness::{
    evaluate, generate_synthetic, EvalConfig, Evaluation, HarnessError, RunSettings, SegMethod,
    SynthConfig,
};
use lga::matching::{KshotReduction, MatchConfig, MatchError, Metric};
use lga::store::{load_store, save_store, FeatureStore, StoreError};
use lga::text::{
    build_prompt, fetch_descriptions, find_cached, load_description_cache,
    save_description_cache, LlmConfig, TextError,
};

#[derive(Parser)]
#[command(name = "lga", version, about = "Few-shot action matching over precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an N-way K-shot evaluation and print a JSON report.
    Eval(EvalArgs),
    /// Evaluate once per value of one axis and print a CSV table.
    Sweep(SweepArgs),
    /// Print the atomic-description prompt for a label.
    Prompt(PromptArgs),
    /// Fetch atomic descriptions for a list of labels into a cache file.
    Fetch(FetchArgs),
    /// Generate a synthetic feature store on disk.
    Synth(SynthArgs),
    /// Print a summary of a feature store.
    Inspect(InspectArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    AbMhm,
    BiMhm,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SegArg {
    Cluster,
    Hard,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum KshotArg {
    Mean,
    Min,
}

/// Benchmark tags carrying the published per-dataset mixing weights.
#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Dataset {
    Hmdb51,
    Kinetics,
    Ucf101,
    Ssv2,
}

impl Dataset {
    fn alpha(self) -> f64 {
        match self {
            Dataset::Hmdb51 => 0.0250,
            Dataset::Kinetics => 0.0625,
            Dataset::Ucf101 => 0.1125,
            Dataset::Ssv2 => 0.2,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Dataset::Hmdb51 => "hmdb51",
            Dataset::Kinetics => "kinetics",
            Dataset::Ucf101 => "ucf101",
            Dataset::Ssv2 => "ssv2",
        }
    }
}

/// Flags shared by `eval` and `sweep`. Every value can also come from a
/// TOML file via `--config`; precedence is defaults < file < flags, except
/// `--threads`, where the `LGA_THREADS` environment variable slots between
/// file and flag.
#[derive(Args)]
struct RunArgs {
    /// Store manifest path (JSON).
    #[arg(long)]
    store: Option<PathBuf>,
    /// TOML file with the same keys as these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fusion weights file; omitted means freshly initialized weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for freshly initialized weights (ignored with --weights).
    #[arg(long)]
    weights_seed: Option<u64>,
    /// Ways per episode.
    #[arg(long)]
    n: Option<usize>,
    /// Shots per class.
    #[arg(long)]
    k: Option<usize>,
    /// Queries drawn from the query class.
    #[arg(long)]
    queries_per_class: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Phase count L.
    #[arg(long)]
    l: Option<usize>,
    /// Overlap frames between adjacent phases.
    #[arg(long)]
    overlap: Option<usize>,
    /// Video-video vs video-text mixing weight in 0..=1; 1 = video only.
    #[arg(long)]
    alpha: Option<f64>,
    /// Dataset tag supplying a published alpha (an explicit --alpha wins).
    #[arg(long)]
    dataset: Option<Dataset>,
    /// Softmax temperature of the video-text branch.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    metric: Option<MetricArg>,
    #[arg(long)]
    seg_method: Option<SegArg>,
    /// K-shot reduction over per-support distances.
    #[arg(long)]
    kshot: Option<KshotArg>,
    /// Attention heads for freshly initialized weights.
    #[arg(long)]
    heads: Option<usize>,
    /// Feed-forward width for freshly initialized weights (default 4×dim).
    #[arg(long)]
    hidden: Option<usize>,
    /// Worker threads (default: rayon's global pool).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-query CSV log (episode,seed,video_id,true_class,predicted,correct).
    #[arg(long)]
    episode_log: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SweepAxis {
    Alpha,
    L,
    Metric,
    SegMethod,
}

impl SweepAxis {
    fn column(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::L => "l",
            SweepAxis::Metric => "metric",
            SweepAxis::SegMethod => "seg_method",
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated axis values, e.g. `--values 1,2,3,4`.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    label: String,
    /// Number of sub-action descriptions to request.
    #[arg(long, default_value_t = 3)]
    l: usize,
}

#[derive(Args)]
struct FetchArgs {
    /// Text file with one action label per line.
    #[arg(long)]
    labels: PathBuf,
    /// Description cache file (JSON); existing entries are reused.
    #[arg(long)]
    out: PathBuf,
    /// Number of sub-action descriptions per label.
    #[arg(long, default_value_t = 3)]
    l: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the manifest and blobs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    videos_per_class: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// True phase count.
    #[arg(long, default_value_t = 3)]
    phases: usize,
    /// Per-coordinate Gaussian noise sigma.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Scale of the phase mean vectors.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// All classes share one direction pool and differ only in phase order.
    #[arg(long)]
    shared_pool: bool,
    /// Skip text anatomy.
    #[arg(long)]
    no_text: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// Store manifest path (JSON).
    #[arg(long)]
    store: PathBuf,
}

// ---------------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------------

/// A user-facing configuration mistake; always exits with code 2.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

/// The `--config` TOML schema: every key optional, same meanings as the
/// flags. Unknown keys are rejected so typos cannot silently fall back to
/// defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    store: Option<PathBuf>,
    weights: Option<PathBuf>,
    weights_seed: Option<u64>,
    n: Option<usize>,
    k: Option<usize>,
    queries_per_class: Option<usize>,
    episodes: Option<usize>,
    seed: Option<u64>,
    l: Option<usize>,
    overlap: Option<usize>,
    alpha: Option<f64>,
    dataset: Option<String>,
    temperature: Option<f64>,
    metric: Option<String>,
    seg_method: Option<String>,
    kshot: Option<String>,
    heads: Option<usize>,
    hidden: Option<usize>,
    threads: Option<usize>,
}

fn parse_metric(raw: &str) -> Result<Metric> {
    match raw.replace('-', "_").as_str() {
        "ab_mhm" => Ok(Metric::AbMhm),
        "bi_mhm" => Ok(Metric::BiMhm),
        _ => Err(config_err(format!("unknown metric {raw:?} (expected ab-mhm or bi-mhm)"))),
    }
}

fn parse_seg(raw: &str) -> Result<SegMethod> {
    match raw {
        "cluster" => Ok(SegMethod::Cluster),
        "hard" => Ok(SegMethod::Hard),
        _ => Err(config_err(format!("unknown segmentation method {raw:?} (expected cluster or hard)"))),
    }
}

fn parse_kshot(raw: &str) -> Result<KshotReduction> {
    match raw.replace('-', "_").as_str() {
        "mean" | "mean_distance" => Ok(KshotReduction::MeanDistance),
        "min" | "min_distance" => Ok(KshotReduction::MinDistance),
        _ => Err(config_err(format!("unknown k-shot reduction {raw:?} (expected mean or min)"))),
    }
}

fn parse_dataset(raw: &str) -> Result<Dataset> {
    match raw {
        "hmdb51" => Ok(Dataset::Hmdb51),
        "kinetics" => Ok(Dataset::Kinetics),
        "ucf101" => Ok(Dataset::Ucf101),
        "ssv2" => Ok(Dataset::Ssv2),
        _ => Err(config_err(format!(
            "unknown dataset {raw:?} (expected hmdb51, kinetics, ucf101, or ssv2)"
        ))),
    }
}

/// Everything a run needs, after merging defaults, file, environment, and
/// flags.
struct Resolved {
    store: PathBuf,
    weights: Option<PathBuf>,
    weights_seed: u64,
    heads: usize,
    hidden: Option<usize>,
    dataset: Option<&'static str>,
    eval: EvalConfig,
}

fn resolve(run: &RunArgs) -> Result<Resolved> {
    let file: FileConfig = match &run.config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            toml::from_str(&raw)
                .map_err(|e| config_err(format!("bad config file {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let store = run.store.clone().or(file.store).ok_or_else(|| {
        config_err(
            "missing store manifest\nusage: lga <eval|sweep> --store <MANIFEST> [OPTIONS] \
             (or set `store` in --config)",
        )
    })?;

    let file_dataset = file.dataset.as_deref().map(parse_dataset).transpose()?;
    let dataset = run.dataset.or(file_dataset);
    // An explicit alpha always beats a dataset tag; between the two
    // sources, flags beat the file.
    let alpha = run
        .alpha
        .or_else(|| run.dataset.map(Dataset::alpha))
        .or(file.alpha)
        .or_else(|| file_dataset.map(Dataset::alpha))
        .unwrap_or(1.0);
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(config_err(format!("alpha must be in [0,1], got {alpha}")));
    }
    let temperature = run.temperature.or(file.temperature).unwrap_or(1.0);
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(config_err(format!("temperature must be finite and positive, got {temperature}")));
    }

    let metric = match run.metric {
        Some(MetricArg::AbMhm) => Metric::AbMhm,
        Some(MetricArg::BiMhm) => Metric::BiMhm,
        None => file.metric.as_deref().map(parse_metric).transpose()?.unwrap_or(Metric::AbMhm),
    };
    let seg_method = match run.seg_method {
        Some(SegArg::Cluster) => SegMethod::Cluster,
        Some(SegArg::Hard) => SegMethod::Hard,
        None => file.seg_method.as_deref().map(parse_seg).transpose()?.unwrap_or(SegMethod::Cluster),
    };
    let kshot = match run.kshot {
        Some(KshotArg::Mean) => KshotReduction::MeanDistance,
        Some(KshotArg::Min) => KshotReduction::MinDistance,
        None => file
            .kshot
            .as_deref()
            .map(parse_kshot)
            .transpose()?
            .unwrap_or(KshotReduction::MeanDistance),
    };

    let threads = match run.threads {
        Some(t) => Some(t),
        None => match std::env::var("LGA_THREADS") {
            Ok(raw) => Some(raw.parse::<usize>().map_err(|_| {
                config_err(format!("LGA_THREADS must be a positive integer, got {raw:?}"))
            })?),
            Err(_) => file.threads,
        },
    };
    if threads == Some(0) {
        return Err(config_err("thread count must be at least 1"));
    }

    let settings = RunSettings {
        seg_method,
        phases: run.l.or(file.l).unwrap_or(3),
        overlap: run.overlap.or(file.overlap).unwrap_or(1),
        match_config: MatchConfig {
            alpha,
            temperature_vt: temperature,
            metric,
            kshot_reduction: kshot,
        },
    };
    Ok(Resolved {
        store,
        weights: run.weights.clone().or(file.weights),
        weights_seed: run.weights_seed.or(file.weights_seed).unwrap_or(0),
        heads: run.heads.or(file.heads).unwrap_or(8),
        hidden: run.hidden.or(file.hidden),
        dataset: dataset.map(Dataset::tag),
        eval: EvalConfig {
            n: run.n.or(file.n).unwrap_or(5),
            k: run.k.or(file.k).unwrap_or(1),
            queries_per_class: run.queries_per_class.or(file.queries_per_class).unwrap_or(1),
            episodes: run.episodes.or(file.episodes).unwrap_or(10_000),
            seed: run.seed.or(file.seed).unwrap_or(0),
            settings,
            threads,
        },
    })
}

enum WeightsSource {
    Loaded(PathBuf),
    Seeded(u64),
}

fn prepare_weights(resolved: &Resolved, store: &FeatureStore) -> Result<(FusionWeights, WeightsSource)> {
    match &resolved.weights {
        Some(path) => {
            let weights = FusionWeights::load(path)?;
            if weights.dim() != store.dim() {
                anyhow::bail!(
                    "weights {} have dimension {} but the store holds {}-dimensional features",
                    path.display(),
                    weights.dim(),
                    store.dim()
                );
            }
            Ok((weights, WeightsSource::Loaded(path.clone())))
        }
        None => {
            let dim = store.dim();
            if dim % resolved.heads != 0 {
                return Err(config_err(format!(
                    "embedding dimension {dim} is not divisible by {} heads",
                    resolved.heads
                )));
            }
            let hidden = resolved.hidden.unwrap_or_else(|| default_hidden(dim));
            let weights = init_weights(dim, resolved.heads, hidden, resolved.weights_seed)?;
            Ok((weights, WeightsSource::Seeded(resolved.weights_seed)))
        }
    }
}

/// Echoes run provenance into the report, which already carries the
/// harness-level parameters.
fn annotate_report(evaluation: &mut Evaluation, resolved: &Resolved, source: &WeightsSource) {
    if let serde_json::Value::Object(map) = &mut evaluation.report.config {
        map.insert("store".into(), json!(resolved.store.display().to_string()));
        let weights = match source {
            WeightsSource::Loaded(path) => json!({"path": path.display().to_string()}),
            WeightsSource::Seeded(seed) => json!({"seeded": seed}),
        };
        map.insert("weights".into(), weights);
        if let Some(tag) = resolved.dataset {
            map.insert("dataset".into(), json!(tag));
        }
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => println!("{content}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let resolved = resolve(&args.run)?;
    let store = load_store(&resolved.store)?;
    let (weights, source) = prepare_weights(&resolved, &store)?;
    let mut evaluation = evaluate(&store, &weights, &resolved.eval)?;
    annotate_report(&mut evaluation, &resolved, &source);

    if let Some(path) = &args.episode_log {
        let mut csv = String::from("episode,seed,video_id,true_class,predicted,correct\n");
        for record in &evaluation.records {
            for query in &record.queries {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    record.index,
                    record.seed,
                    query.video_id,
                    query.true_class,
                    query.predicted,
                    query.correct
                ));
            }
        }
        fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let report = serde_json::to_string_pretty(&evaluation.report).expect("report is serializable");
    write_or_print(args.out.as_deref(), &report)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let resolved = resolve(&args.run)?;
    if args.values.iter().any(|v| v.trim().is_empty()) {
        return Err(config_err("--values entries must be non-empty"));
    }
    let store = load_store(&resolved.store)?;
    let (weights, _) = prepare_weights(&resolved, &store)?;

    let mut csv = String::from("sweep_axis,value,accuracy,ci95,episodes,seed\n");
    for raw in &args.values {
        let raw = raw.trim();
        let mut cfg = resolved.eval.clone();
        let value = match args.axis {
            SweepAxis::Alpha => {
                let alpha: f64 = raw
                    .parse()
                    .map_err(|_| config_err(format!("bad alpha value {raw:?}")))?;
                if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
                    return Err(config_err(format!("alpha must be in [0,1], got {alpha}")));
                }
                cfg.settings.match_config.alpha = alpha;
                alpha.to_string()
            }
            SweepAxis::L => {
                let l: usize =
                    raw.parse().map_err(|_| config_err(format!("bad phase count {raw:?}")))?;
                if l == 0 {
                    return Err(config_err("phase count must be at least 1"));
                }
                cfg.settings.phases = l;
                l.to_string()
            }
            SweepAxis::Metric => {
                let metric = parse_metric(raw)?;
                cfg.settings.match_config.metric = metric;
                metric.to_string()
            }
            SweepAxis::SegMethod => {
                let seg = parse_seg(raw)?;
                cfg.settings.seg_method = seg;
                seg.to_string()
            }
        };
        let evaluation = evaluate(&store, &weights, &cfg)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            args.axis.column(),
            value,
            evaluation.report.accuracy,
            evaluation.report.ci95_halfwidth,
            cfg.episodes,
            cfg.seed
        ));
    }
    write_or_print(args.out.as_deref(), csv.trim_end_matches('\n'))
}

fn cmd_prompt(args: &PromptArgs) -> Result<()> {
    let prompt = build_prompt(&args.label, args.l)?;
    // Byte-exact output: the prompt is a payload, not a message, so no
    // trailing newline is added.
    std::io::stdout().write_all(prompt.as_bytes()).context("cannot write to stdout")?;
    Ok(())
}

fn cmd_fetch(args: &FetchArgs) -> Result<()> {
    let config = LlmConfig::from_env()?;
    let raw = fs::read_to_string(&args.labels)
        .with_context(|| format!("cannot read labels file {}", args.labels.display()))?;
    let labels: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if labels.is_empty() {
        return Err(config_err(format!("labels file {} is empty", args.labels.display())));
    }

    let mut cache = load_description_cache(&args.out)?;
    let mut fetched = 0usize;
    let mut reused = 0usize;
    for label in labels {
        if find_cached(&cache, label, args.l).is_some() {
            reused += 1;
            continue;
        }
        let outcome = fetch_descriptions(&config, label, args.l)?;
        log::info!("fetched {label:?} with {} retries", outcome.retries);
        cache.push(outcome.descriptions);
        // Save after every success so an interrupted run resumes cheaply.
        save_description_cache(&args.out, &cache)?;
        fetched += 1;
    }
    if fetched == 0 {
        save_description_cache(&args.out, &cache)?;
    }
    eprintln!("{fetched} fetched, {reused} reused → {}", args.out.display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let store = generate_synthetic(&SynthConfig {
        classes: args.classes,
        videos_per_class: args.videos_per_class,
        frames: args.frames,
        dim: args.dim,
        phases: args.phases,
        noise_sigma: args.noise,
        phase_separation: args.separation,
        seed: args.seed,
        shared_direction_pool: args.shared_pool,
        with_text: !args.no_text,
    })?;
    let manifest = save_store(&store, &args.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let store = load_store(&args.store)?;
    let mut out = String::new();
    out.push_str(&format!("manifest: {}\n", args.store.display()));
    out.push_str(&format!("dim: {}\n", store.dim()));
    out.push_str(&format!(
        "classes: {}  videos: {}  text phases: {}\n",
        store.class_count(),
        store.video_count(),
        store.text_phases().map_or_else(|| "none".to_string(), |p| p.to_string())
    ));
    for class_id in store.class_ids() {
        let label = store.label(class_id).unwrap_or("?");
        let text = match store.text(class_id) {
            Some(t) => format!("{} phases", t.phases()),
            None => "no text".to_string(),
        };
        out.push_str(&format!(
            "  class {class_id} {label:?}: {} videos, {text}\n",
            store.class_videos(class_id).len()
        ));
    }
    print!("{out}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Exit-code classification
// ---------------------------------------------------------------------------

fn harness_code(err: &HarnessError) -> i32 {
    match err {
        HarnessError::BadArgs { .. } => 2,
        HarnessError::InsufficientClasses { .. }
        | HarnessError::InsufficientVideos { .. }
        | HarnessError::UnknownVideo { .. }
        | HarnessError::Store(_) => 3,
        HarnessError::Match(MatchError::BadConfig { .. }) => 2,
        HarnessError::Episode { source, .. } => harness_code(source),
        _ => 4,
    }
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if let Some(text) = err.downcast_ref::<TextError>() {
        return match text {
            TextError::MissingEnv { .. } | TextError::EmptyLabel | TextError::BadPhaseCount { .. } => 2,
            TextError::Io { .. } | TextError::BadCache { .. } => 3,
            _ => 4,
        };
    }
    if err.downcast_ref::<StoreError>().is_some() {
        return 3;
    }
    if let Some(fusion) = err.downcast_ref::<FusionError>() {
        return match fusion {
            FusionError::Io { .. }
            | FusionError::Corrupt { .. }
            | FusionError::UnsupportedVersion { .. } => 3,
            _ => 2,
        };
    }
    if let Some(harness) = err.downcast_ref::<HarnessError>() {
        return harness_code(harness);
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    4
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match &cli.command {
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Prompt(args) => cmd_prompt(args),
        Command::Fetch(args) => cmd_fetch(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code_for(&err));
    }
}
