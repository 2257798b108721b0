//! Command-line runner: synthetic worlds, meta-training, evaluation and
//! report tables.

pub mod inputs;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gpo::baselines::{ContextMeanBaseline, RewardMlpBaseline, RewardMlpConfig, UniformBaseline};
use gpo::metrics::Metric;
use gpo::model::{GpoModel, ModelConfig};
use gpo::report::{context_curve_csv, summary_csv, AlignmentReport};
use gpo::synth::{generate_world, SynthSpec, EMBEDDINGS_FILE, FACTORS};
use gpo::train::{evaluate_groups, meta_train, PreferencePredictor, TrainConfig};
use serde::{Deserialize, Serialize};

use inputs::Loader;
use manifest::{write_atomic, RunManifest};

pub const MODEL_FILE: &str = "model.gpo";
pub const HISTORY_FILE: &str = "history.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVE_FILE: &str = "context_curve.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] gpo::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(e) => e.kind(),
        }
    }

    /// One JSON object on one line, for scripts.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(gpo::Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(gpo::Error::Json(e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "gpo", version, about = "Few-shot group preference modeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world of group datasets and one embedding file.
    Synth(SynthArgs),
    /// Meta-train a model on training groups, selecting on validation groups.
    Train(TrainArgs),
    /// Score a model or baseline on held-out groups.
    Eval(EvalArgs),
    /// Merge evaluation reports into plot-ready CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub groups: usize,
    #[arg(long)]
    pub questions: usize,
    #[arg(long)]
    pub options: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub temp: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight of group-specific variation against the shared direction.
    #[arg(long, default_value_t = 0.6)]
    pub spread: f64,
    /// Dimension of the subspace group-specific variation lives in; 0 for all.
    #[arg(long, default_value_t = FACTORS)]
    pub factors: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with `model` and `train` sections.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub train_groups: Vec<String>,
    #[arg(long, num_args = 1.., required = true)]
    pub val_groups: Vec<String>,
    /// Embedding file; defaults to `embeddings.gpe` beside each dataset.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Wasserstein,
    Jsd,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Wasserstein => Metric::Wasserstein,
            MetricArg::Jsd => Metric::Jsd,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file, or one of `uniform`, `context-mean`, `reward-mlp`.
    #[arg(long)]
    pub model: String,
    #[arg(long, num_args = 1.., required = true)]
    pub test_groups: Vec<String>,
    #[arg(long)]
    pub context_questions: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value_t = MetricArg::Jsd)]
    pub metric: MetricArg,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Report JSON path; the per-question CSV goes beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report files or globs.
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Contents of the `train --config` file. `model.d_embed` may be omitted
/// and is then taken from the data.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Serialize)]
struct ResolvedTrain<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Report(a) => report(&a),
    }
}

/// Applies `GPO_THREADS` to the global worker pool.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GPO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Usage(format!("GPO_THREADS={raw:?} is not a positive integer")))?;
    #[cfg(feature = "parallel")]
    {
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let _ = n;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Runtime(gpo::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
    })
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let spec = SynthSpec {
        spread: a.spread,
        factors: a.factors,
        ..SynthSpec::new(a.groups, a.questions, a.options, a.dim, a.temp, a.seed)
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (_, datasets, store) = generate_world(&spec)?;
    ensure_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("synth", serde_json::to_value(&spec)?, vec![a.seed]);
    let emb = a.out_dir.join(EMBEDDINGS_FILE);
    write_atomic(&emb, &store.to_bytes())?;
    manifest.artifacts.push(emb.display().to_string());
    for ds in &datasets {
        let path = a.out_dir.join(format!("{}.json", ds.group_id));
        let mut text = ds.to_json()?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        manifest.artifacts.push(path.display().to_string());
    }
    manifest.duration_secs = start.elapsed().as_secs_f64();
    manifest.write(&a.out_dir.join(MANIFEST_FILE))?;
    Ok(())
}

fn resolve_model_config(
    raw: serde_json::Map<String, serde_json::Value>,
    d_embed: usize,
) -> Result<ModelConfig, CliError> {
    let mut raw = raw;
    match raw.get("d_embed").and_then(|v| v.as_u64()) {
        Some(d) if d as usize != d_embed => {
            return Err(gpo::Error::Validation(format!(
                "config d_embed {d} does not match the data's embedding dim {d_embed}"
            ))
            .into())
        }
        _ => {
            raw.insert("d_embed".into(), d_embed.into());
        }
    }
    let cfg: ModelConfig = serde_json::from_value(serde_json::Value::Object(raw))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let text = fs::read_to_string(&a.config).map_err(|e| {
        CliError::Runtime(gpo::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", a.config.display()))))
    })?;
    let run_cfg: RunConfig = serde_json::from_str(&text)?;
    run_cfg.train.validate()?;

    let mut loader = Loader::new(a.embeddings.clone());
    let train_groups = loader.load(&a.train_groups)?;
    let val_groups = loader.load(&a.val_groups)?;
    if let Some(g) = train_groups
        .iter()
        .find(|t| val_groups.iter().any(|v| v.group_id == t.group_id))
    {
        return Err(gpo::Error::Validation(format!(
            "group {} appears in both training and validation sets",
            g.group_id
        ))
        .into());
    }
    let model_cfg = resolve_model_config(run_cfg.model, train_groups[0].embedding_dim())?;
    let model: GpoModel = GpoModel::init(model_cfg.clone())?;
    let (best, history) = meta_train(model, &train_groups, &val_groups, &run_cfg.train)?;

    ensure_dir(&a.out)?;
    let resolved = ResolvedTrain {
        model: &model_cfg,
        train: &run_cfg.train,
    };
    let mut manifest = RunManifest::new(
        "train",
        serde_json::to_value(&resolved)?,
        vec![model_cfg.seed, run_cfg.train.seed],
    );
    manifest.add_input(&a.config)?;
    for f in &loader.files {
        manifest.add_input(f)?;
    }
    let model_path = a.out.join(MODEL_FILE);
    write_atomic(&model_path, &best.to_bytes()?)?;
    let history_path = a.out.join(HISTORY_FILE);
    let mut h = serde_json::to_string_pretty(&history)?;
    h.push('\n');
    write_atomic(&history_path, h.as_bytes())?;
    manifest.artifacts = vec![model_path.display().to_string(), history_path.display().to_string()];
    manifest.duration_secs = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    Ok(())
}

/// Sibling of `out` with a different suffix: `r.json` → `r.questions.csv`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let start = Instant::now();
    if a.seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let mut loader = Loader::new(a.embeddings.clone());
    let groups = loader.load(&a.test_groups)?;
    let mut manifest = RunManifest::new(
        "eval",
        serde_json::json!({
            "model": a.model,
            "context_questions": a.context_questions,
            "metric": Metric::from(a.metric),
            "seeds": a.seeds,
        }),
        a.seeds.clone(),
    );
    let metric = Metric::from(a.metric);
    let report = match a.model.as_str() {
        "uniform" => evaluate_groups(&UniformBaseline, &groups, a.context_questions, &a.seeds, metric)?,
        "context-mean" => evaluate_groups(&ContextMeanBaseline, &groups, a.context_questions, &a.seeds, metric)?,
        "reward-mlp" => {
            let b = RewardMlpBaseline::new(RewardMlpConfig::default());
            manifest.config["reward_mlp"] = serde_json::to_value(&b.config)?;
            evaluate_groups(&b, &groups, a.context_questions, &a.seeds, metric)?
        }
        path => {
            let p = Path::new(path);
            let model: GpoModel = GpoModel::load(p).map_err(|e| match e {
                gpo::Error::Io(io) => CliError::Runtime(gpo::Error::Io(std::io::Error::new(
                    io.kind(),
                    format!("{path}: {io} (expected a model file or uniform|context-mean|reward-mlp)"),
                ))),
                other => CliError::Runtime(other),
            })?;
            manifest.add_input(p)?;
            let d = model.config.d_embed;
            if let Some(g) = groups.iter().find(|g| g.embedding_dim() != d) {
                return Err(gpo::Error::Dimension(format!(
                    "group {} has embedding dim {}, model expects {d}",
                    g.group_id,
                    g.embedding_dim()
                ))
                .into());
            }
            evaluate_groups(&model as &dyn PreferencePredictor, &groups, a.context_questions, &a.seeds, metric)?
        }
    };
    for f in &loader.files {
        manifest.add_input(f)?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_atomic(&a.out, report.to_json()?.as_bytes())?;
    let csv_path = sibling(&a.out, "questions.csv");
    write_atomic(&csv_path, report.question_csv()?.as_bytes())?;
    manifest.artifacts = vec![a.out.display().to_string(), csv_path.display().to_string()];
    manifest.duration_secs = start.elapsed().as_secs_f64();
    manifest.write(&sibling(&a.out, "manifest.json"))?;
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let paths = inputs::expand(&a.reports)?;
    let mut manifest = RunManifest::new("report", serde_json::json!({ "reports": a.reports }), Vec::new());
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| {
            CliError::Runtime(gpo::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
        })?;
        let r = AlignmentReport::from_json(&text).map_err(|e| match e {
            gpo::Error::Format(m) => CliError::Runtime(gpo::Error::Format(format!("{}: {m}", p.display()))),
            other => CliError::Runtime(other),
        })?;
        manifest.add_input(p)?;
        reports.push(r);
    }
    ensure_dir(&a.out_dir)?;
    let summary = a.out_dir.join(SUMMARY_FILE);
    write_atomic(&summary, summary_csv(&reports)?.as_bytes())?;
    let curve = a.out_dir.join(CURVE_FILE);
    write_atomic(&curve, context_curve_csv(&reports)?.as_bytes())?;
    manifest.artifacts = vec![summary.display().to_string(), curve.display().to_string()];
    manifest.duration_secs = start.elapsed().as_secs_f64();
    manifest.write(&a.out_dir.join(MANIFEST_FILE))?;
    Ok(())
}
