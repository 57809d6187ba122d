//! Stop-skip planning for a single urban rail line.
//!
//! The pipeline runs from smart-card transactions to an operating plan:
//!
//! 1. [`smartcard`] pairs gate events into trips and aggregates hourly
//!    origin-destination counts (or generates a synthetic month of them).
//! 2. [`forecast`] trains an LSTM on consecutive hours and predicts the
//!    peak-hour OD matrix.
//! 3. [`sim`] plays a fleet through the line for a given stop/skip pattern
//!    and scores it against the all-stop operation.
//! 4. [`aco`] searches stop/skip patterns with a layered ant colony.

pub mod aco;
pub mod error;
pub mod forecast;
pub mod line;
pub mod sim;
pub mod smartcard;

pub use aco::{optimize, AcoParams, AcoRun, Colony, PheromoneField};
pub use error::{Error, Result};
pub use forecast::{baseline_average, predict_peak, LstmModel};
pub use line::{
    compute_skip_savings, validate_pattern, DemandMatrix, LineConfig, StopSkipPattern, Violation,
};
pub use sim::{
    export_schedule, nominal_baseline, normalize, simulate, NominalBaseline, SimulationResult,
    Summary,
};
pub use smartcard::{aggregate_hourly, generate_synthetic, pair_trips, OdSeries, SyntheticSpec};
