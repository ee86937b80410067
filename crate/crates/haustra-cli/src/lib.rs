//! Command-line pipeline around the `haustra` library.
//!
//! Commands: `toy-data`, `train-translate`, `translate-dataset`,
//! `train-depth`, `evaluate`, `compare-grid`, `ablation-suite`, `rerun`.
//! Every command resolves its inputs to a self-contained invocation record,
//! writes it to `<out>/config.resolved.toml`, and then executes it; `rerun`
//! executes such a snapshot against a fresh output directory and reproduces
//! the original outputs byte for byte.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on usage or input
//! errors. The output root can be overridden with `HAUSTRA_OUT_ROOT`, which
//! re-bases relative `--out` paths.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub mod config;
pub mod grid;
pub mod ops;

use config::{absolutize, AblationId, ExperimentConfig};

/// Environment variable that re-bases relative `--out` paths.
pub const OUT_ROOT_ENV: &str = "HAUSTRA_OUT_ROOT";

/// Error split by exit code: usage/input problems exit 2, everything else 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn internal(err: anyhow::Error) -> Self {
        Self::Internal(err)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) => f.write_str(msg),
            Self::Internal(err) => write!(f, "{err:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<haustra::Error> for CliError {
    fn from(e: haustra::Error) -> Self {
        Self::Internal(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(e.into())
    }
}

#[derive(Parser)]
#[command(
    name = "haustra",
    version,
    about = "Structure-preserving image translation and monocular depth pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Subcommand)]
pub enum CommandArgs {
    /// Generate the synthetic tube-scene datasets (paired source domain,
    /// unpaired styled target domain, held-out paired eval split).
    ToyData(ToyDataArgs),
    /// Train the unpaired image translator.
    TrainTranslate(TrainTranslateArgs),
    /// Run a trained translator over a whole dataset.
    TranslateDataset(TranslateDatasetArgs),
    /// Train the supervised depth estimator on a paired dataset.
    TrainDepth(TrainDepthArgs),
    /// Score a depth checkpoint (median-rescaled metrics) and optionally
    /// the realism of a translated image set.
    Evaluate(EvaluateArgs),
    /// Render side-by-side comparison grids of model predictions.
    CompareGrid(CompareGridArgs),
    /// Run the full ablation grid (cells x seeds) and tabulate metrics.
    AblationSuite(AblationSuiteArgs),
    /// Re-execute a resolved-config snapshot into a new output directory.
    Rerun(RerunArgs),
}

/// A resolved command invocation: everything needed to reproduce a run
/// except the output directory. Serialized as `config.resolved.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    ToyData(ToyDataSpec),
    TrainTranslate(TrainTranslateSpec),
    TranslateDataset(TranslateDatasetSpec),
    TrainDepth(TrainDepthSpec),
    Evaluate(EvaluateSpec),
    CompareGrid(CompareGridSpec),
    AblationSuite(AblationSuiteSpec),
}

// ---------------------------------------------------------------------------
// toy-data
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ToyDataArgs {
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Square image side in pixels (>= 16).
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Training sequences per domain.
    #[arg(long, default_value_t = 4)]
    pub sequences: usize,
    /// Frames per training sequence.
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Held-out eval sequences.
    #[arg(long, default_value_t = 2)]
    pub eval_sequences: usize,
    /// Frames per eval sequence.
    #[arg(long, default_value_t = 12)]
    pub eval_frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataSpec {
    pub resolution: usize,
    pub sequences: usize,
    pub frames: usize,
    pub eval_sequences: usize,
    pub eval_frames: usize,
    pub seed: u64,
}

impl ToyDataArgs {
    fn resolve(self) -> Result<(Invocation, PathBuf), CliError> {
        let spec = ToyDataSpec {
            resolution: self.resolution,
            sequences: self.sequences,
            frames: self.frames,
            eval_sequences: self.eval_sequences,
            eval_frames: self.eval_frames,
            seed: self.seed,
        };
        Ok((Invocation::ToyData(spec), self.out))
    }
}

// ---------------------------------------------------------------------------
// train-translate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainTranslateArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Override translation.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override translation.lambda_mi.
    #[arg(long)]
    pub lambda_mi: Option<f64>,
    /// Override the ablation cell.
    #[arg(long, value_enum)]
    pub ablation: Option<AblationId>,
    /// Continue from a translation checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Save an intermediate checkpoint every N epochs (0 = final only).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Dump a depth/intensity joint-histogram heatmap of the first
    /// translated frame.
    #[arg(long)]
    pub dump_histograms: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTranslateSpec {
    pub resume: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub dump_histograms: bool,
    pub experiment: ExperimentConfig,
}

impl TrainTranslateArgs {
    fn resolve(self) -> Result<(Invocation, PathBuf), CliError> {
        let mut exp = ExperimentConfig::load(&self.config)?;
        if let Some(e) = self.epochs {
            exp.translation.epochs = e;
        }
        if let Some(s) = self.seed {
            exp.seed = s;
        }
        if let Some(l) = self.lambda_mi {
            exp.translation.lambda_mi = l;
        }
        if let Some(a) = self.ablation {
            exp.ablation = a;
        }
        exp.apply_ablation()?;
        if exp.ablation == AblationId::Baseline {
            return Err(CliError::usage(
                "the baseline cell skips translation entirely; run train-depth on the raw \
                 source manifest instead",
            ));
        }
        ExperimentConfig::require_path(&exp.data.domain_a, "domain_a")?;
        ExperimentConfig::require_path(&exp.data.domain_b, "domain_b")?;
        let spec = TrainTranslateSpec {
            resume: self.resume.as_deref().map(absolutize),
            checkpoint_every: self.checkpoint_every,
            dump_histograms: self.dump_histograms,
            experiment: exp,
        };
        Ok((Invocation::TrainTranslate(spec), self.out))
    }
}

// ---------------------------------------------------------------------------
// translate-dataset
// ---------------------------------------------------------------------------

/// Which generator to apply: source-to-target or target-to-source.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Translate source-domain (A) frames toward the target style.
    #[value(name = "a-to-b")]
    AToB,
    /// Translate target-domain (B) frames toward the source style.
    #[value(name = "b-to-a")]
    BToA,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AToB => "a-to-b",
            Direction::BToA => "b-to-a",
        })
    }
}

#[derive(Args)]
pub struct TranslateDatasetArgs {
    /// Translation checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of the dataset to translate.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Translation direction; the manifest's domain must match its source.
    #[arg(long, value_enum, default_value_t = Direction::AToB)]
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateDatasetSpec {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub direction: Direction,
}

impl TranslateDatasetArgs {
    fn resolve(self) -> Result<(Invocation, PathBuf), CliError> {
        require_file(&self.checkpoint, "checkpoint")?;
        require_file(&self.manifest, "manifest")?;
        let spec = TranslateDatasetSpec {
            checkpoint: absolutize(&self.checkpoint),
            manifest: absolutize(&self.manifest),
            direction: self.direction,
        };
        Ok((Invocation::TranslateDataset(spec), self.out))
    }
}

// ---------------------------------------------------------------------------
// train-depth
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainDepthArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Paired training manifest (translated or raw source data).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a depth checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Exit nonzero if the final epoch's mean loss exceeds
    /// depth.max_final_mse.
    #[arg(long)]
    pub strict: bool,
    /// Override depth.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDepthSpec {
    pub manifest: PathBuf,
    pub resume: Option<PathBuf>,
    pub strict: bool,
    pub experiment: ExperimentConfig,
}

impl TrainDepthArgs {
    fn resolve(self) -> Result<(Invocation, PathBuf), CliError> {
        let mut exp = ExperimentConfig::load(&self.config)?;
        if let Some(e) = self.epochs {
            exp.depth.epochs = e;
        }
        if let Some(s) = self.seed {
            exp.seed = s;
        }
        exp.apply_ablation()?;
        require_file(&self.manifest, "manifest")?;
        if self.strict && exp.depth.max_final_mse.is_none() {
            return Err(CliError::usage(
                "--strict needs depth.max_final_mse in the config",
            ));
        }
        let spec = TrainDepthSpec {
            manifest: absolutize(&self.manifest),
            resume: self.resume.as_deref().map(absolutize),
            strict: self.strict,
            experiment: exp,
        };
        Ok((Invocation::TrainDepth(spec), self.out))
    }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvaluateArgs {
    /// Depth checkpoint to score (omit with --identity-check).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Paired eval manifest with ground-truth depths.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Name recorded in the metrics report (default: checkpoint stem).
    #[arg(long)]
    pub model_id: Option<String>,
    /// Score ground truth against itself to validate the metric path.
    #[arg(long)]
    pub identity_check: bool,
    /// Image manifest of translated frames (translation realism metrics).
    #[arg(long)]
    pub translated: Option<PathBuf>,
    /// Image manifest of real target-domain frames to compare against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Seed of the frozen feature extractor.
    #[arg(long, default_value_t = 0)]
    pub extractor_seed: u64,
    /// Seed for kernel-distance subset draws.
    #[arg(long, default_value_t = 0)]
    pub kid_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSpec {
    pub manifest: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub model_id: String,
    pub identity_check: bool,
    pub translated: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub extractor_seed: u64,
    pub kid_seed: u64,
}

impl EvaluateArgs {
    fn resolve(self) -> Result<(Invocation, PathBuf), CliError> {
        require_file(&self.manifest, "manifest")?;
        let checkpoint = if self.identity_check {
            None
        } else {
            let c = self.checkpoint.as_deref().ok_or_else(|| {
                CliError::usage("--checkpoint is required unless --identity-check is set")
            })?;
            require_file(c, "checkpoint")?;
            Some(absolutize(c))
        };
        match (&self.translated, &self.reference) {
            (Some(t), Some(r)) => {
                require_file(t, "translated manifest")?;
                require_file(r, "reference manifest")?;
            }
            (None, None) => {}
            _ => {
                return Err(CliError::usage(
                    "translation metrics need both --translated and --reference",
                ))
            }
        }
        let model_id = self.model_id.unwrap_or_else(|| {
            if self.identity_check {
                "identity".to_string()
            } else {
                checkpoint
                    .as_deref()
                    .and_then(Path::file_stem)
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".to_string())
            }
        });
        let spec = EvaluateSpec {
            manifest: absolutize(&self.manifest),
            checkpoint,
            model_id,
            identity_check: self.identity_check,
            translated: self.translated.as_deref().map(absolutize),
            reference: self.reference.as_deref().map(absolutize),
            extractor_seed: self.extractor_seed,
            kid_seed: self.kid_seed,
        };
        Ok((Invocation::Evaluate(spec), self.out))
    }
}

// ---------------------------------------------------------------------------
// compare-grid
// ---------------------------------------------------------------------------

/// A named depth checkpoint, given on the command line as `NAME=PATH`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub name: String,
    pub checkpoint: PathBuf,
}

fn parse_model_ref(s: &str) -> Result<ModelRef, String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH, got '{s}'"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=PATH, got '{s}'"));
    }
    Ok(ModelRef {
        name: name.to_string(),
        checkpoint: PathBuf::from(path),
    })
}

#[derive(Args)]
pub struct CompareGridArgs {
    /// Paired eval manifest providing input frames and rescale references.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Depth model to include, as NAME=CHECKPOINT; repeatable.
    #[arg(long = "model", value_parser = parse_model_ref, required = true)]
    pub models: Vec<ModelRef>,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Render at most this many frames.
    #[arg(long)]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareGridSpec {
    pub manifest: PathBuf,
    pub max_frames: Option<usize>,
    pub models: Vec<ModelRef>,
}

impl CompareGridArgs {
    fn resolve(self) -> Result<(Invocation, PathBuf), CliError> {
        require_file(&self.manifest, "manifest")?;
        let mut models = Vec::new();
        for m in &self.models {
            require_file(&m.checkpoint, "model checkpoint")?;
            models.push(ModelRef {
                name: m.name.clone(),
                checkpoint: absolutize(&m.checkpoint),
            });
        }
        let spec = CompareGridSpec {
            manifest: absolutize(&self.manifest),
            max_frames: self.max_frames,
            models,
        };
        Ok((Invocation::CompareGrid(spec), self.out))
    }
}

// ---------------------------------------------------------------------------
// ablation-suite
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct AblationSuiteArgs {
    /// Experiment config file (TOML) with data paths and a [suite] section.
    #[arg(long)]
    pub config: PathBuf,
    /// Suite directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Run independent cells on worker threads.
    #[arg(long)]
    pub parallel: bool,
    /// Override suite.seeds (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Override suite.cells (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub cells: Vec<AblationId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSuiteSpec {
    pub parallel: bool,
    pub experiment: ExperimentConfig,
}

impl AblationSuiteArgs {
    fn resolve(self) -> Result<(Invocation, PathBuf), CliError> {
        let mut exp = ExperimentConfig::load(&self.config)?;
        if !self.seeds.is_empty() {
            exp.suite.seeds = self.seeds;
        }
        if !self.cells.is_empty() {
            exp.suite.cells = self.cells;
        }
        if exp.suite.seeds.is_empty() || exp.suite.cells.is_empty() {
            return Err(CliError::usage("the suite needs at least one seed and one cell"));
        }
        ExperimentConfig::require_path(&exp.data.domain_a, "domain_a")?;
        ExperimentConfig::require_path(&exp.data.domain_b, "domain_b")?;
        ExperimentConfig::require_path(&exp.data.eval, "eval")?;
        if exp.suite.cells.contains(&AblationId::OursAltB) {
            ExperimentConfig::require_path(&exp.data.domain_b_alt, "domain_b_alt")?;
        }
        let spec = AblationSuiteSpec {
            parallel: self.parallel,
            experiment: exp,
        };
        Ok((Invocation::AblationSuite(spec), self.out))
    }
}

// ---------------------------------------------------------------------------
// rerun
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct RerunArgs {
    /// A config.resolved.toml written by an earlier command.
    pub snapshot: PathBuf,
    /// Fresh output directory for the re-execution.
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::usage(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

/// Applies the output-root override: relative `--out` paths are re-based
/// under `HAUSTRA_OUT_ROOT` when it is set.
pub fn resolve_out_dir(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

/// Executes a parsed command line. Errors carry their intended exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let (invocation, out) = match cli.command {
        CommandArgs::ToyData(a) => a.resolve()?,
        CommandArgs::TrainTranslate(a) => a.resolve()?,
        CommandArgs::TranslateDataset(a) => a.resolve()?,
        CommandArgs::TrainDepth(a) => a.resolve()?,
        CommandArgs::Evaluate(a) => a.resolve()?,
        CommandArgs::CompareGrid(a) => a.resolve()?,
        CommandArgs::AblationSuite(a) => a.resolve()?,
        CommandArgs::Rerun(a) => {
            let invocation = ops::load_snapshot(&a.snapshot)?;
            (invocation, a.out)
        }
    };
    let out_dir = resolve_out_dir(&out);
    ops::execute(&invocation, &out_dir)
}
