//! The `gpr` command line: every pipeline step plus the review service.
//! Each command writes a [`RunManifest`](crate::manifest::RunManifest).

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::DataError;
use crate::evidence::EvidenceError;
use crate::manifest::ManifestError;
use crate::model::{ModelError, ModelKind};
use crate::service::ServiceError;
use crate::train::TrainError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvidenceError> for CliError {
    fn from(e: EvidenceError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(_) => CliError::Internal(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Tensor(_) | TrainError::NonFinite { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Data(d) => d.into(),
            ServiceError::DuplicateId(_) => CliError::Validation(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "gpr", version, about = "Gendered pronoun resolution with evidence pooling")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Root for relative input paths that do not exist under the working directory.
    #[arg(long = "data-root", env = "GREP_DATA_DIR", global = true)]
    pub data_root: Option<PathBuf>,
    /// Where to write the run manifest (default: next to --out).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Log more (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

impl Global {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() || p.exists() {
            return p.to_path_buf();
        }
        match &self.data_root {
            Some(root) => root.join(p),
            None => p.to_path_buf(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ModelOpts {
    /// Model kind: probert or grep.
    #[arg(long, default_value = "grep")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 80)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Full training configuration as JSON; overrides the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse, apply corrections, build the vocabulary and tokenize.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        /// Corrections ledger (JSON lines).
        #[arg(long)]
        corrections: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 256)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with gold clusters.
    GenSynth {
        #[arg(long, default_value_t = 2000)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        insufficient: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        prefix: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine NEITHER samples from documents with coreference clusters.
    GenNeither {
        #[arg(long)]
        documents: PathBuf,
        #[arg(long, default_value_t = 129)]
        quota_m: usize,
        #[arg(long, default_value_t = 124)]
        quota_f: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run coreference providers and/or import clusters from a file.
    Evidence {
        #[arg(long)]
        data: PathBuf,
        /// Providers as name or name=kind, kind one of heuristic, oracle, corrupt:RATE.
        #[arg(long, value_delimiter = ',')]
        providers: Vec<String>,
        /// Gold clusters for oracle providers (from gen-synth).
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Existing evidence JSON lines to merge.
        #[arg(long = "import")]
        import: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model with early stopping.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation set; without it a held-out fold of --data is used.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        providers: Vec<String>,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-fold training over several seeds, ensembling test predictions.
    CvEnsemble {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        providers: Vec<String>,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, value_delimiter = ',', default_value = "42,59,75,46,91")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction CSVs against a gold TSV.
    Score {
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class agreement of two prediction sets.
    Compare {
        /// Exactly two prediction CSVs (repeat the flag).
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "probert,grep")]
        names: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histograms of the probability given to the gold class.
    Histograms {
        #[arg(long = "pred")]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-sample attention traces from a checkpoint.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// HTTP review service.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        providers: Vec<String>,
        /// Traces from export-attention.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Prediction sets as name=path.csv (repeatable).
        #[arg(long = "pred")]
        preds: Vec<String>,
        #[arg(long)]
        corrections: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::GenSynth { .. } => "gen-synth",
            Command::GenNeither { .. } => "gen-neither",
            Command::Evidence { .. } => "evidence",
            Command::Train { .. } => "train",
            Command::CvEnsemble { .. } => "cv-ensemble",
            Command::Score { .. } => "score",
            Command::Compare { .. } => "compare",
            Command::Histograms { .. } => "histograms",
            Command::ExportAttention { .. } => "export-attention",
            Command::Serve { .. } => "serve",
        }
    }
}

/// Parse and run; returns the process exit code. Output goes to stdout,
/// diagnostics to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::execute(&cli, argv, &mut std::io::stdout()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run with output captured into `out`; for tests and embedding.
pub fn run_captured(argv: &[&str], out: &mut Vec<u8>) -> Result<(), CliError> {
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Validation(e.to_string()))?;
    commands::execute(&cli, argv.iter().map(|s| s.to_string()).collect(), out)
}
