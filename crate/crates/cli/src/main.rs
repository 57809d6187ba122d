//! `skipstop`: smart-card data to a stop-skip operating plan.
//!
//! Exit codes: 0 success, 2 input missing or unreadable, 3 malformed data,
//! 4 invalid configuration or infeasible instance, 5 pattern violates an
//! operating rule. Every flag can also be set through an environment
//! variable named `SKIPSTOP_<FLAG>` (for example `SKIPSTOP_SEED`).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skipstop_core::{AcoParams, Error, LineConfig};

#[derive(Parser, Debug)]
#[command(name = "skipstop", version, about = "Stop-skip planning for an urban rail line")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, env = "SKIPSTOP_SEED")]
    seed: Option<u64>,
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true, env = "SKIPSTOP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic smart-card transactions and their ground truth.
    GenData(GenDataArgs),
    /// Pair raw transactions into trips and count hourly OD flows.
    Ingest(IngestArgs),
    /// Train the LSTM forecaster on an hourly OD series.
    Forecast(ForecastArgs),
    /// Search stop/skip patterns for one peak hour.
    Optimize(OptimizeArgs),
    /// Evaluate one given stop/skip pattern.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Generator spec (TOML).
    #[arg(long, env = "SKIPSTOP_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "SKIPSTOP_OUT")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// CSV with `card_id,timestamp,station,type`.
    #[arg(long)]
    transactions: PathBuf,
    #[arg(long, env = "SKIPSTOP_OUT")]
    out: PathBuf,
    /// Stations on the line (default: highest station seen).
    #[arg(long)]
    stations: Option<usize>,
    #[arg(long, default_value_t = 5)]
    first_hour: u32,
    /// End of service, exclusive.
    #[arg(long, default_value_t = 23)]
    end_hour: u32,
    #[arg(long, default_value_t = 50_000_000)]
    max_rows: usize,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long, env = "SKIPSTOP_EPOCHS", default_value_t = 500)]
    epochs: usize,
    #[arg(long, env = "SKIPSTOP_BATCH", default_value_t = 35)]
    batch: usize,
    #[arg(long, env = "SKIPSTOP_LR", default_value_t = 0.001)]
    lr: f64,
    #[arg(long, env = "SKIPSTOP_LOOKBACK", default_value_t = 4)]
    lookback: usize,
    #[arg(long, env = "SKIPSTOP_HIDDEN", default_value_t = 64)]
    hidden: usize,
    /// Width of the ReLU layer before the output head; 0 removes it.
    #[arg(long, env = "SKIPSTOP_DENSE", default_value_t = 32)]
    dense: usize,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Hourly OD matrix CSV (`hour,1-2,1-3,...`).
    #[arg(long)]
    series: PathBuf,
    #[arg(long, env = "SKIPSTOP_OUT")]
    out: PathBuf,
    /// Hour of day to forecast on the last day of the series.
    #[arg(long, default_value_t = 17)]
    peak_hour: u32,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct LineFlags {
    /// Line description (TOML).
    #[arg(long, env = "SKIPSTOP_CONFIG")]
    config: PathBuf,
    /// Treat enforced arrival gaps as infeasible.
    #[arg(long, env = "SKIPSTOP_STRICT_HEADWAY")]
    strict_headway: bool,
    /// Weight of waiting time in the objective.
    #[arg(long, env = "SKIPSTOP_GAMMA")]
    gamma: Option<f64>,
}

impl LineFlags {
    fn load(&self) -> Result<LineConfig, CliError> {
        let mut cfg = LineConfig::load(&self.config)?;
        if self.strict_headway {
            cfg.strict_headway = true;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct AcoFlags {
    #[arg(long, env = "SKIPSTOP_ANTS")]
    ants: Option<usize>,
    #[arg(long, env = "SKIPSTOP_ITERATIONS")]
    iterations: Option<usize>,
    /// Pheromone exponent.
    #[arg(long, env = "SKIPSTOP_ALPHA")]
    alpha: Option<f64>,
    /// Evaporation rate.
    #[arg(long, env = "SKIPSTOP_RHO")]
    rho: Option<f64>,
    /// Deposit constant and initial pheromone.
    #[arg(long, env = "SKIPSTOP_Q")]
    q: Option<f64>,
}

impl AcoFlags {
    fn params(&self, seed: u64) -> AcoParams {
        let d = AcoParams::default();
        AcoParams {
            num_ants: self.ants.unwrap_or(d.num_ants),
            max_iterations: self.iterations.unwrap_or(d.max_iterations),
            alpha: self.alpha.unwrap_or(d.alpha),
            initial_pheromone: self.q.unwrap_or(d.initial_pheromone),
            evaporation_rate: self.rho.unwrap_or(d.evaporation_rate),
            rng_seed: seed,
        }
    }
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct DemandSource {
    /// Peak-hour OD matrix CSV (`origin,dest,pax_per_hour`).
    #[arg(long)]
    demand: Option<PathBuf>,
    /// Forecaster checkpoint; needs `--history`.
    #[arg(long, requires = "history")]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    line: LineFlags,
    #[command(flatten)]
    source: DemandSource,
    /// Hourly OD series whose hours before `--peak-hour` on its last day feed the model.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 17)]
    peak_hour: u32,
    #[arg(long, env = "SKIPSTOP_OUT")]
    out: PathBuf,
    /// Forbid every skip (reproduces the all-stop operation).
    #[arg(long)]
    no_skip: bool,
    #[command(flatten)]
    aco: AcoFlags,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    line: LineFlags,
    #[arg(long)]
    demand: PathBuf,
    /// Pattern CSV (`train,1,2,...` with 0 = skip, 1 = stop).
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long, env = "SKIPSTOP_OUT")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    /// The pattern or run breaks operating rules; one entry per breach.
    Violations(Vec<String>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Io { .. }) => 2,
            CliError::Core(Error::Format { .. } | Error::Shape(_) | Error::Data(_)) => 3,
            CliError::Core(
                Error::InvalidConfig(_) | Error::NormalizationUndefined(_) | Error::Deposit(_),
            ) => 4,
            CliError::Violations(_) => 5,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(4);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(4);
        }
    }
    let seed = cli.seed;
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a, seed),
        Command::Ingest(a) => commands::ingest(a),
        Command::Forecast(a) => commands::forecast(a, seed.unwrap_or(0)),
        Command::Optimize(a) => commands::optimize(a, seed.unwrap_or(0)),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Core(err) => eprintln!("error: {err}"),
                CliError::Violations(list) => {
                    eprintln!("error: {} constraint violation(s)", list.len());
                    for v in list {
                        eprintln!("  {v}");
                    }
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
