//! Command-line entry point.

mod commands;
mod input;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::model::Config;

pub use input::{load_cloud, parse_xyz};

#[derive(Debug, Parser)]
#[command(name = "gbnet", version, about = "Geometric back-projection network for point-cloud classification")]
pub struct Cli {
    /// Config file of `key=value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,

    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, checkpoints and a confusion matrix.
    Train,
    /// Evaluate a checkpoint on the configured test split or a pack.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled clouds to evaluate instead of the configured test split.
        #[arg(long)]
        pack: Option<PathBuf>,
    },
    /// Run the finite-difference gradient checks.
    Gradcheck {
        /// Only run this group or target.
        #[arg(long)]
        target: Option<String>,
        /// Corrupt every backward pass (harness check).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write the per-point geometric descriptor of a cloud as CSV.
    Describe {
        /// Cloud file: `.gbpc` pack, `.off` mesh (vertices) or `x y z` text.
        #[arg(long)]
        input: PathBuf,
        /// Descriptor form 1 to 8 (defaults to the configured one).
        #[arg(long)]
        form: Option<u8>,
        /// Cloud index inside a pack.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// CSV destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-point feature norms of every module as CSV.
    Features {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cloud file; meshes are surface-sampled.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time inference of a checkpoint.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
    },
    /// Write the synthetic benchmark as `train.gbpc` and `test.gbpc`.
    Synth,
    /// Sample OFF meshes into a pack. Inputs are `path` or `path:label`.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<String>,
        /// Label of inputs without an explicit one.
        #[arg(long, default_value_t = 0)]
        label: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut config = Config::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    for kv in &cli.overrides {
        config.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Runs one invocation, writing reports to `out`; returns the exit status.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = write!(out, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = resolve_config(cli)?;
    writeln!(out, "# resolved config")?;
    write!(out, "{}", config.to_text())?;
    writeln!(out, "# end config")?;
    let output = cli.output.clone();
    match &cli.command {
        Command::Train => commands::train(&config, output.as_deref(), out),
        Command::Eval { checkpoint, pack } => commands::eval(&config, checkpoint, pack.as_deref(), output.as_deref(), out),
        Command::Gradcheck { target, inject_fault } => commands::gradcheck(target.as_deref(), *inject_fault, out),
        Command::Describe {
            input,
            form,
            index,
            out: dest,
        } => commands::describe(&config, input, *form, *index, dest.as_deref(), out),
        Command::Features {
            checkpoint,
            input,
            index,
            out: dest,
        } => commands::features(&config, checkpoint, input, *index, dest.as_deref(), out),
        Command::Bench {
            checkpoint,
            batch,
            repeats,
            warmup,
        } => commands::bench(&config, checkpoint, *batch, *repeats, *warmup, out),
        Command::Synth => commands::synth(&config, output.as_deref(), out),
        Command::Ingest {
            inputs,
            label,
            out: dest,
        } => commands::ingest(&config, inputs, *label, dest, out),
    }
}
