//! `spikestage` command-line entry point.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use spikestage::evaluation::EvalError;
use spikestage::filterbank::FilterError;
use spikestage::model::ModelError;
use spikestage::signal_io::SignalIoError;
use spikestage::spike_encoder::EncoderError;

use crate::config::RunConfig;

/// Spike-train EEG encoding and transformer sleep staging.
#[derive(Parser, Debug)]
#[command(name = "spikestage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic data set (CSV records, annotations, manifest).
    Synth(Shared),
    /// Encode every scored epoch to a feature file.
    Encode(Shared),
    /// Train one model on all scored epochs.
    Train(Shared),
    /// Record-wise k-fold cross-validation.
    Cv(Shared),
    /// Cross-validate the half-Gaussian and fixed-threshold encoders side by side.
    Ablate(Shared),
    /// Print the metrics of a finished run directory.
    Report {
        /// Run directory written by `cv`, `ablate` or `train`.
        run_dir: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct Shared {
    /// JSON config with dotted keys, e.g. {"model.depth": 2}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// EEG channel to read.
    #[arg(long)]
    channel: Option<String>,
    /// Half-Gaussian spread.
    #[arg(long)]
    sigma: Option<f64>,
    /// Standardization window in samples.
    #[arg(long)]
    window_size: Option<usize>,
    /// Accumulation width in samples.
    #[arg(long)]
    accum_width: Option<usize>,
    /// Use the fixed-threshold encoder with this cutoff.
    #[arg(long)]
    ablation_threshold: Option<f64>,
    /// Number of cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Validate and print the resolved config without writing anything.
    #[arg(long)]
    dry_run: bool,
    /// Override any config key, e.g. --set model.depth=2. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_assignment)]
    set: Vec<(String, Value)>,
}

impl Shared {
    fn flag_layer(&self) -> BTreeMap<String, Value> {
        let mut m: BTreeMap<String, Value> = self.set.iter().cloned().collect();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("out", self.out.as_ref().map(|p| json!(p.display().to_string())));
        put("seed", self.seed.map(|v| json!(v)));
        put("channel", self.channel.as_ref().map(|v| json!(v)));
        put("encoder.sigma", self.sigma.map(|v| json!(v)));
        put("encoder.window_size", self.window_size.map(|v| json!(v)));
        put("encoder.accum_width", self.accum_width.map(|v| json!(v)));
        put("encoder.ablation_threshold", self.ablation_threshold.map(|v| json!(v)));
        put("folds.k", self.folds.map(|v| json!(v)));
        m
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(p) => config::read_config_file(p)?,
            None => BTreeMap::new(),
        };
        let flags = self.flag_layer();
        RunConfig::from_resolved(config::merge(&[&file, &flags])?)
    }
}

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss { .. } | ModelError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            ModelError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::TooFewSubjects { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        CliError::Validation(format!("filter design: {e}"))
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SignalIoError> for CliError {
    fn from(e: SignalIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (shared, name) = match &cli.command {
        Command::Report { run_dir } => return commands::report(run_dir),
        Command::Synth(s) => (s, "synth"),
        Command::Encode(s) => (s, "encode"),
        Command::Train(s) => (s, "train"),
        Command::Cv(s) => (s, "cv"),
        Command::Ablate(s) => (s, "ablate"),
    };
    let cfg = shared.resolve()?;
    if shared.dry_run {
        commands::check_data_source(&cfg, name)?;
        print!("{}", cfg.resolved_json());
        println!("dry run: {name} configuration is valid; nothing written");
        return Ok(());
    }
    match name {
        "synth" => commands::synth(&cfg),
        "encode" => commands::encode(&cfg),
        "train" => commands::train(&cfg),
        "cv" => commands::cv(&cfg),
        _ => commands::ablate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
