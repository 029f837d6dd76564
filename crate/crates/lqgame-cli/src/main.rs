mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

/// Exit codes. Clap's own usage errors also exit with 2.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_NEGATIVE: u8 = 4;

const EXIT_TABLE: &str = "\
Exit codes:
  0  command completed with a positive verdict
  2  invalid arguments, unreadable file or scenario schema error
  3  numerical failure
  4  command completed with a negative verdict (no solution, not certified)

Environment:
  MGARE_THREADS  caps the number of worker threads";

#[derive(Parser)]
#[command(name = "lqgame", version, about = "Stochastic zero-sum LQ games over fading channels")]
#[command(after_help = EXIT_TABLE)]
struct Cli {
    /// Write the report here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate the Riccati map from Q and report whether a stabilizing solution exists
    Check {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        iter: IterArgs,
    },
    /// Run the sufficient-condition certifier
    Certify {
        #[command(flatten)]
        src: Source,
    },
    /// Solve and report the fixed point, game value and stability margin
    Solve {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        iter: IterArgs,
        /// Prefix length T0 for the saddle-policy parameters α(T0), β(T0)
        #[arg(long, default_value_t = 10)]
        t0: usize,
    },
    /// Monte Carlo closed-loop cost under the equilibrium policy
    Simulate {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        iter: IterArgs,
        /// Averaged slots per run
        #[arg(long, default_value_t = 2000)]
        horizon: usize,
        /// Slots discarded before averaging (default horizon/10)
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, default_value_t = 32)]
        runs: usize,
        /// Use the finite saddle schedule with this prefix instead of the steady-state policy
        #[arg(long)]
        t0: Option<usize>,
        /// CSV trajectory of the first run
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate bounds and verdicts over a parameter grid (CSV)
    Sweep {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        iter: IterArgs,
        /// PARAM=a:b:step with PARAM one of delta, ra
        #[arg(long)]
        sweep: String,
    },
}

#[derive(Args, Clone)]
#[command(group(ArgGroup::new("input").required(true).args(["scenario", "example"])))]
pub struct Source {
    /// Scenario file (.toml or .json)
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Built-in example
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub example: Option<u8>,
    /// Access probability for the built-in examples
    #[arg(long, default_value_t = 0.8)]
    pub delta: f64,
    /// Overrides the scenario seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of channel samples M
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Args, Clone, Copy)]
pub struct IterArgs {
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub kmax: usize,
}

/// Bad flag values or unusable input.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<lqgame::Error>() {
        Some(lqgame::Error::Schema { .. } | lqgame::Error::Io(_) | lqgame::Error::StructureMismatch(_)) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("MGARE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| config_err(format!("MGARE_THREADS must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Check { src, iter } => commands::check(&src, iter, out),
        Command::Certify { src } => commands::certify(&src, out),
        Command::Solve { src, iter, t0 } => commands::solve(&src, iter, t0, out),
        Command::Simulate { src, iter, horizon, burn_in, runs, t0, trace } => {
            let sim = commands::SimArgs { horizon, burn_in, runs, t0, trace };
            commands::simulate(&src, iter, &sim, out)
        }
        Command::Sweep { src, iter, sweep } => commands::sweep(&src, iter, &sweep, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => ExitCode::from(EXIT_NEGATIVE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
