//! `pau`: fit, derive, check, train and prune rational activation units.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pau::Error;

#[derive(Debug, Parser)]
#[command(name = "pau", version, about = "Rational (Padé) activation units")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Padé approximant of a smooth activation from its Taylor series.
    Pade {
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "5,4", value_parser = parse_orders)]
        orders: (usize, usize),
        /// Evaluate without the absolute value in the denominator.
        #[arg(long)]
        unsafe_mode: bool,
        /// Write the coefficient document here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Least-squares rational fit of an activation on a grid.
    #[command(group = clap::ArgGroup::new("source").required(true))]
    Fit {
        #[arg(long, group = "source")]
        target: Option<String>,
        /// Fit the curve of an existing coefficient document instead.
        #[arg(long, group = "source")]
        target_coeffs: Option<PathBuf>,
        #[arg(long, default_value = "-3,3", value_parser = parse_range, allow_hyphen_values = true)]
        range: (f64, f64),
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value = "5,4", value_parser = parse_orders)]
        orders: (usize, usize),
        /// Fit the safe form `P / (1 + |A|)`.
        #[arg(long)]
        safe: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, hide = true, value_parser = ["sign-flip"])]
        inject_fault: Option<String>,
    },
    /// Train a classifier and write its metrics history.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Save the trained network to this directory.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Test accuracy of a saved network.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Prune, rewind and retrain for each fraction of a schedule.
    Prune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6")]
        schedule: Vec<f64>,
        /// Unit score: `sum` (signed sum of incoming weights) or `l1`.
        #[arg(long, default_value = "sum")]
        score: String,
    },
    /// Sample a coefficient document's curve as CSV.
    ExportCurve {
        #[arg(long)]
        coeffs: PathBuf,
        #[arg(long, default_value = "-3,3", value_parser = parse_range, allow_hyphen_values = true)]
        range: (f64, f64),
        #[arg(long, default_value_t = 601)]
        points: usize,
        /// Add `min,max` columns over 1000 noisy coefficient draws.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Configuration shared by `train`, `eval` and `prune`. Later sources win:
/// preset, then `--config`, then individual flags.
#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    noise_alpha: Option<f64>,
    /// Keep rational-unit coefficients fixed at their initialization.
    #[arg(long)]
    frozen: bool,
    /// `pau`, or a fixed activation such as `lrelu(0.01)`.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    /// CSV destination.
    #[arg(long, alias = "out")]
    metrics_out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(&str, &str), String> {
    s.split_once(',')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| format!("expected two comma-separated values, got {s:?}"))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = parse_pair(s)?;
    let lo: f64 = a.parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: f64 = b.parse().map_err(|e| format!("{b:?}: {e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("range {lo},{hi} must be finite with lo < hi"));
    }
    Ok((lo, hi))
}

fn parse_orders(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = parse_pair(s)?;
    let m = a.parse().map_err(|e| format!("{a:?}: {e}"))?;
    let n = b.parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((m, n))
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(
                Error::FitNonConvergence { .. }
                | Error::Diverged { .. }
                | Error::Pole { .. }
                | Error::PoleAt { .. },
            ) => 3,
            Failure::Core(_) => 2,
            Failure::Verification(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Verification(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Some(raw) = std::env::var_os("PAU_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("PAU_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
