mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Command-line problems that map to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "graphcliff", version, about = "Activity-cliff aware molecular property prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Precedence, lowest first: built-in defaults, `--config`, `--set`, the
/// dedicated flags below.
#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Dataset CSV (benchmark directory for `registry`).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-molecule structure summaries as JSON.
    Parse,
    /// ECFP bit vectors as hex.
    Fp,
    /// Flag activity cliffs; writes the augmented CSV and a summary.
    Annotate,
    /// Cliff-stratified train/test split (annotates first if flags are missing).
    Split,
    /// Train a model on the non-test records.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// RMSE and cliff RMSE of a checkpoint.
    Eval,
    /// Hop sensitivity, Dirichlet energy, Jacobian spectra and the
    /// embedding-vs-fingerprint slope.
    Analyze,
    /// Per-atom gate scores.
    ExportGates {
        /// Filter layer (0-based); defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Counts for every benchmark CSV in a directory.
    Registry,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Parse => "parse",
            Command::Fp => "fp",
            Command::Annotate => "annotate",
            Command::Split => "split",
            Command::Train { .. } => "train",
            Command::Eval => "eval",
            Command::Analyze => "analyze",
            Command::ExportGates { .. } => "export-gates",
            Command::Registry => "registry",
        }
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let c = &cli.common;
    let mut overrides = c.overrides.clone();
    let mut flag = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push(format!("{key}={v}"));
        }
    };
    let quoted = |p: &Option<PathBuf>| p.as_ref().map(|p| serde_json::to_string(&p.to_string_lossy()).unwrap());
    flag("paths.input", quoted(&c.input));
    flag("paths.output", quoted(&c.out));
    flag("paths.checkpoint", quoted(&c.checkpoint));
    flag("seed", c.seed.map(|s| s.to_string()));
    match &cli.command {
        Command::Train { epochs, hidden } => {
            flag("train.epochs", epochs.map(|v| v.to_string()));
            flag("model.hidden", hidden.map(|v| v.to_string()));
        }
        Command::ExportGates { layer } => flag("analysis.gate_layer", layer.map(|v| v.to_string())),
        _ => {}
    }
    RunConfig::resolve(c.config.as_deref(), &overrides).map_err(|e| UsageError(format!("{e:#}")).into())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve(cli)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Parse => commands::parse(&cfg, name),
        Command::Fp => commands::fingerprints(&cfg, name),
        Command::Annotate => commands::annotate(&cfg, name),
        Command::Split => commands::split(&cfg, name),
        Command::Train { .. } => commands::train(&cfg, name),
        Command::Eval => commands::eval(&cfg, name),
        Command::Analyze => commands::analyze(&cfg, name),
        Command::ExportGates { .. } => commands::export_gates(&cfg, name),
        Command::Registry => commands::registry(&cfg, name),
    }
}

/// 1 usage, 2 data, 3 numeric abort.
fn exit_code(err: &anyhow::Error) -> u8 {
    use graphcliff::Error;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::UnsupportedFilter(_) => 1,
                Error::NumericAbort(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
