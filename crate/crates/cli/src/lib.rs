//! The `deepmri` command line: `synth`, `train-rbm`, `dbn-pretrain`,
//! `dbn-finetune`, `embed`, `eval` and `plot`.
//!
//! Every subcommand takes `--config <file>`, `--seed`, `--out` and
//! repeatable `--set section.key=value` overrides, plus a few typed flags.
//! Failures print one line, `error[validation]: ...` (exit 2) or
//! `error[runtime]: ...` (exit 3), to stderr.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Rejected before any computation.
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Self::Validation(m) => ("validation", m),
            Self::Runtime(m) => ("runtime", m),
        };
        let line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{kind}]: {line}")
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "deepmri",
    version,
    about = "Sparse RBMs, deep belief networks and embeddings for neuroimaging data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override any config key, e.g. `--set rbm.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sources, an overlap sweep, or labeled volumes.
    Synth {
        #[command(flatten)]
        common: Common,
        /// sources, sweep or labeled.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
    },
    /// Train a sparse RBM and write spatial maps and time courses.
    TrainRbm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        hidden_units: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Greedy layer-wise pretraining of a deep belief network.
    DbnPretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Comma-separated layer widths.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
    },
    /// Supervised fine-tuning of a pretrained network.
    DbnFinetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Divide-and-concur 2-D embedding of the rows of a matrix.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Component matching, classification scores or the depth experiment.
    Eval {
        #[command(flatten)]
        common: Common,
        /// match, classify or depth.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Scatter maps, heatmaps and sweep curves as SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// scatter, heatmap or sweep.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn path_set(key: &str, p: &Option<PathBuf>) -> Option<String> {
    p.as_ref()
        .map(|p| format!("{key}={}", quoted(&p.to_string_lossy())))
}

fn num_set<T: fmt::Display>(key: &str, v: &Option<T>) -> Option<String> {
    v.as_ref().map(|v| format!("{key}={v}"))
}

/// Float overrides always carry a decimal point so they parse as floats.
fn float_set(key: &str, v: &Option<f64>) -> Option<String> {
    v.map(|v| format!("{key}={v:?}"))
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::TrainRbm { common, .. }
            | Command::DbnPretrain { common, .. }
            | Command::DbnFinetune { common, .. }
            | Command::Embed { common, .. }
            | Command::Eval { common, .. }
            | Command::Plot { common, .. } => common,
        }
    }

    /// Typed flags as `key=value` overrides, applied after `--set`.
    fn flag_overrides(&self) -> Vec<String> {
        let sets = match self {
            Command::Synth { kind, snr, .. } => vec![
                kind.as_deref().map(|k| format!("synth.kind={}", quoted(k))),
                float_set("synth.snr", snr),
            ],
            Command::TrainRbm {
                input,
                hidden_units,
                epsilon,
                lambda,
                epochs,
                ..
            } => vec![
                path_set("rbm.input", input),
                num_set("rbm.hidden_units", hidden_units),
                float_set("rbm.epsilon", epsilon),
                float_set("rbm.lambda", lambda),
                num_set("rbm.epochs", epochs),
            ],
            Command::DbnPretrain { input, layers, .. } => vec![
                path_set("dbn.input", input),
                layers.as_ref().map(|l| format!("dbn.layers={l:?}")),
            ],
            Command::DbnFinetune {
                model,
                input,
                labels,
                epochs,
                learning_rate,
                ..
            } => vec![
                path_set("finetune.model", model),
                path_set("finetune.input", input),
                path_set("finetune.labels", labels),
                num_set("finetune.epochs", epochs),
                float_set("finetune.learning_rate", learning_rate),
            ],
            Command::Embed {
                input,
                k,
                beta,
                max_iters,
                ..
            } => vec![
                path_set("embed.input", input),
                num_set("embed.k", k),
                float_set("embed.beta", beta),
                num_set("embed.max_iters", max_iters),
            ],
            Command::Eval { kind, .. } => {
                vec![kind.as_deref().map(|k| format!("eval.kind={}", quoted(k)))]
            }
            Command::Plot {
                kind,
                input,
                labels,
                ..
            } => vec![
                kind.as_deref().map(|k| format!("plot.kind={}", quoted(k))),
                path_set("plot.input", input),
                path_set("plot.labels", labels),
            ],
        };
        sets.into_iter().flatten().collect()
    }

    /// The config file, then `--set`, then typed flags, then seed and out.
    pub fn effective_config(&self) -> Result<RunConfig, CliError> {
        let common = self.common();
        let base = match &common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut cfg = base
            .with_overrides(&common.set)?
            .with_overrides(&self.flag_overrides())?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.command.effective_config()?;
    match &cli.command {
        Command::Synth { .. } => commands::synth(&cfg),
        Command::TrainRbm { .. } => commands::train_rbm(&cfg),
        Command::DbnPretrain { .. } => commands::dbn_pretrain(&cfg),
        Command::DbnFinetune { .. } => commands::dbn_finetune(&cfg),
        Command::Embed { .. } => commands::embed(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Plot { .. } => commands::plot(&cfg),
    }
}

/// Parses `args`, runs, reports, and returns the process exit code.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let err = CliError::validation(first.trim_start_matches("error: "));
            eprintln!("{err}");
            return err.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{err}");
            err.exit_code()
        }
    }
}
