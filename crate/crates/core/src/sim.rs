//! Deterministic passenger-flow simulation of a fleet running a given
//! stop/skip pattern, and the normalised travel-time objective.
//!
//! Trains are processed in dispatch order and stations in line order. All
//! passenger quantities are real-valued (fluid approximation): arrivals are
//! `rate * elapsed` and left-behind passengers are split proportionally.
//!
//! A virtual train 0 is taken to depart every station at the horizon start
//! and leave nobody behind, so accumulation starts at the horizon.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::line::{validate_pattern, DemandMatrix, LineConfig, StopSkipPattern};

/// Dwell fixed-point tolerance, seconds.
pub const DWELL_TOLERANCE_S: f64 = 0.01;
/// Dwell fixed-point iteration cap.
pub const DWELL_MAX_ITERATIONS: usize = 20;

/// Everything known about train `i` at station `j` once it has departed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainStationState {
    pub arrival_s: f64,
    pub departure_s: f64,
    /// Effective dwell, zero when the station is skipped.
    pub dwell_s: f64,
    pub stopped: bool,
    pub n_alight: f64,
    pub n_board: f64,
    /// Free capacity after alighting, before boarding.
    pub n_remain_cap: f64,
    pub w_wait: f64,
    pub w_wait_by_dest: Vec<f64>,
    pub w_want2: f64,
    pub w_want2_by_dest: Vec<f64>,
    /// Left behind for lack of capacity.
    pub w_left: f64,
    /// Left behind for any reason (capacity, skipped origin or destination).
    pub w_left_by_dest: Vec<f64>,
    pub w_left_total: f64,
    pub n_onboard_after_dep: f64,
    pub board_by_dest: Vec<f64>,
    pub dwell_converged: bool,
}

/// The three raw components of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveParts {
    /// Passenger-seconds spent on board.
    pub in_vehicle_time_s: f64,
    /// Passenger-seconds spent on platforms.
    pub waiting_time_s: f64,
    /// Passengers the last train leaves behind for lack of capacity.
    pub last_train_left: f64,
}

impl ObjectiveParts {
    fn is_finite(&self) -> bool {
        self.in_vehicle_time_s.is_finite()
            && self.waiting_time_s.is_finite()
            && self.last_train_left.is_finite()
    }
}

/// Lean outcome of one evaluation, without the per-station trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub parts: ObjectiveParts,
    /// 1-based `(train, station)` where the minimum arrival gap was enforced.
    pub headway_violations: Vec<(usize, usize)>,
    /// 1-based `(train, station)` where the dwell iteration hit its cap.
    pub dwell_unconverged: Vec<(usize, usize)>,
    /// False when some dwell became non-finite.
    pub stable: bool,
    /// False under `strict_headway` with any enforced gap, or when unstable.
    pub feasible: bool,
}

/// Full trajectory plus objective components.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    num_trains: usize,
    num_stations: usize,
    states: Vec<TrainStationState>,
    pub in_vehicle_time_s: f64,
    pub waiting_time_s: f64,
    pub last_train_left: f64,
    pub headway_violations: Vec<(usize, usize)>,
    pub dwell_unconverged: Vec<(usize, usize)>,
    pub stable: bool,
    pub feasible: bool,
    /// Set once the result is normalised against a baseline.
    pub objective: Option<f64>,
}

impl SimulationResult {
    pub fn num_trains(&self) -> usize {
        self.num_trains
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    /// State of `train` at `station`, both 1-based.
    pub fn state(&self, train: usize, station: usize) -> &TrainStationState {
        &self.states[(train - 1) * self.num_stations + station - 1]
    }

    pub fn states(&self) -> &[TrainStationState] {
        &self.states
    }

    pub fn parts(&self) -> ObjectiveParts {
        ObjectiveParts {
            in_vehicle_time_s: self.in_vehicle_time_s,
            waiting_time_s: self.waiting_time_s,
            last_train_left: self.last_train_left,
        }
    }
}

/// Denominators of the normalised objective, taken from the all-stop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NominalBaseline {
    pub t_in_vehicle_nom: f64,
    pub t_wait_nom: f64,
    pub w_left_nom: f64,
}

fn check_inputs(config: &LineConfig, demand: &DemandMatrix, pattern: &StopSkipPattern) -> Result<()> {
    config.validate()?;
    if demand.num_stations() != config.num_stations {
        return Err(Error::shape(format!(
            "demand covers {} stations, line has {}",
            demand.num_stations(),
            config.num_stations
        )));
    }
    let violations = validate_pattern(pattern, config)?;
    if let Some(v) = violations.first() {
        return Err(Error::data(format!(
            "pattern violates {} constraint(s), first: {v}",
            violations.len()
        )));
    }
    Ok(())
}

/// Runs the full recursion and keeps every per-station state.
pub fn simulate(
    config: &LineConfig,
    demand: &DemandMatrix,
    pattern: &StopSkipPattern,
) -> Result<SimulationResult> {
    check_inputs(config, demand, pattern)?;
    let mut states = Vec::with_capacity(config.num_decisions());
    let eval = run(config, demand, pattern, Some(&mut states));
    Ok(SimulationResult {
        num_trains: config.num_trains,
        num_stations: config.num_stations,
        states,
        in_vehicle_time_s: eval.parts.in_vehicle_time_s,
        waiting_time_s: eval.parts.waiting_time_s,
        last_train_left: eval.parts.last_train_left,
        headway_violations: eval.headway_violations,
        dwell_unconverged: eval.dwell_unconverged,
        stable: eval.stable,
        feasible: eval.feasible,
        objective: None,
    })
}

/// Same recursion as [`simulate`] without materialising the trajectory.
pub fn evaluate(
    config: &LineConfig,
    demand: &DemandMatrix,
    pattern: &StopSkipPattern,
) -> Result<Evaluation> {
    check_inputs(config, demand, pattern)?;
    Ok(run(config, demand, pattern, None))
}

/// Inputs must already be validated.
pub(crate) fn evaluate_unchecked(
    config: &LineConfig,
    demand: &DemandMatrix,
    pattern: &StopSkipPattern,
) -> Evaluation {
    run(config, demand, pattern, None)
}

fn dwell(config: &LineConfig, t_acc: f64, alight: f64, board: f64, waiting: f64) -> f64 {
    let [a1, a2, a3, a4] = config.dwell.alpha;
    let per_door = waiting / f64::from(config.num_doors);
    let load = a1 + a2 * alight + a3 * board + a4 * per_door * per_door * per_door * board;
    load.max(config.dwell_criteria_s) + t_acc
}

fn run(
    config: &LineConfig,
    demand: &DemandMatrix,
    pattern: &StopSkipPattern,
    mut record: Option<&mut Vec<TrainStationState>>,
) -> Evaluation {
    let n = config.num_stations;
    let t_acc = config.t_acc();
    let h0 = config.min_arrival_gap_s;
    let cap = f64::from(config.capacity);
    let seed_dwell = config.dwell_criteria_s + t_acc;

    // departure of the preceding train at each station, and what it left behind
    let mut prev_dep = vec![config.horizon_start_s; n];
    let mut prev_left = vec![0.0; n * n];

    let mut wait_k = vec![0.0; n];
    let mut want_k = vec![0.0; n];
    let mut onboard_by_dest = vec![0.0; n];

    let mut parts = ObjectiveParts {
        in_vehicle_time_s: 0.0,
        waiting_time_s: 0.0,
        last_train_left: 0.0,
    };
    let mut headway_violations = Vec::new();
    let mut dwell_unconverged = Vec::new();
    let mut stable = true;

    for i in 0..config.num_trains {
        let y = pattern.train_row(i);
        onboard_by_dest.iter_mut().for_each(|v| *v = 0.0);
        let mut onboard = 0.0;
        let mut last_dep = f64::NAN;

        for j in 0..n {
            let stop = y[j];
            let u = demand.row(j);
            let left_row = &mut prev_left[j * n..(j + 1) * n];

            let alight = onboard_by_dest[j];
            let remain = cap - onboard + alight;

            let (mut base_wait, mut rate_total, mut base_want, mut rate_want) = (0.0, 0.0, 0.0, 0.0);
            for k in j + 1..n {
                base_wait += left_row[k];
                rate_total += u[k];
                if y[k] {
                    base_want += left_row[k];
                    rate_want += u[k];
                }
            }
            let left_prev_total = base_wait;
            if !stop {
                base_want = 0.0;
                rate_want = 0.0;
            }
            let load_dwell = |gap: f64| {
                let waiting = base_wait + rate_total * gap;
                let want = base_want + rate_want * gap;
                let board = remain.min(want);
                dwell(config, t_acc, alight, board, waiting)
            };

            let mut converged = true;
            let (arrival, departure, s_eff);
            if j == 0 {
                // dispatch time is fixed; the dwell sets the platform arrival
                departure = prev_dep[0] + config.dispatch_headway_s;
                let s = if stop { load_dwell(departure - prev_dep[0]) } else { 0.0 };
                arrival = departure - s;
                s_eff = s;
                if arrival < prev_dep[0] + h0 {
                    headway_violations.push((i + 1, 1));
                }
            } else {
                let mut a = last_dep + config.block_travel_time[j - 1];
                if a < prev_dep[j] + h0 {
                    a = prev_dep[j] + h0;
                    headway_violations.push((i + 1, j + 1));
                }
                arrival = a;
                if stop {
                    let mut s = seed_dwell;
                    converged = false;
                    for _ in 0..DWELL_MAX_ITERATIONS {
                        let next = load_dwell(a + s - prev_dep[j]);
                        let delta = (next - s).abs();
                        s = next;
                        if !s.is_finite() {
                            break;
                        }
                        if delta < DWELL_TOLERANCE_S {
                            converged = true;
                            break;
                        }
                    }
                    if !converged {
                        dwell_unconverged.push((i + 1, j + 1));
                    }
                    s_eff = s;
                } else {
                    s_eff = 0.0;
                }
                departure = arrival + s_eff;
            }
            if !s_eff.is_finite() {
                stable = false;
            }

            let gap = departure - prev_dep[j];
            let mut waiting = 0.0;
            let mut want = 0.0;
            for k in j + 1..n {
                let w = left_row[k] + u[k] * gap;
                wait_k[k] = w;
                waiting += w;
                // a passenger wants this train only if it serves both ends
                want_k[k] = if stop && y[k] { w } else { 0.0 };
                want += want_k[k];
            }
            let board = if stop { remain.min(want) } else { 0.0 };
            let w_left_cap = if stop { want - board } else { 0.0 };

            let mut w_left_total = 0.0;
            let mut board_by_dest = record.as_ref().map(|_| vec![0.0; n]);
            for k in j + 1..n {
                let left = if stop && y[k] {
                    if want > 0.0 {
                        w_left_cap * want_k[k] / want
                    } else {
                        0.0
                    }
                } else {
                    wait_k[k]
                };
                let b = wait_k[k] - left;
                onboard_by_dest[k] += b;
                if let Some(bd) = board_by_dest.as_mut() {
                    bd[k] = b;
                }
                left_row[k] = left;
                w_left_total += left;
            }
            onboard_by_dest[j] = 0.0;
            let onboard_before = onboard;
            onboard = onboard - alight + board;

            if j > 0 {
                let block = config.block_travel_time[j - 1];
                parts.in_vehicle_time_s += onboard_before * block + (onboard_before - alight) * s_eff;
            }
            parts.waiting_time_s += left_prev_total * gap + 0.5 * rate_total * gap * gap;
            if i + 1 == config.num_trains {
                parts.last_train_left += w_left_cap;
            }

            if let Some(states) = record.as_deref_mut() {
                let range = |v: &[f64]| {
                    let mut out = vec![0.0; n];
                    out[j + 1..].copy_from_slice(&v[j + 1..]);
                    out
                };
                states.push(TrainStationState {
                    arrival_s: arrival,
                    departure_s: departure,
                    dwell_s: s_eff,
                    stopped: stop,
                    n_alight: alight,
                    n_board: board,
                    n_remain_cap: remain,
                    w_wait: waiting,
                    w_wait_by_dest: range(&wait_k),
                    w_want2: want,
                    w_want2_by_dest: range(&want_k),
                    w_left: w_left_cap,
                    w_left_by_dest: range(left_row),
                    w_left_total,
                    n_onboard_after_dep: onboard,
                    board_by_dest: board_by_dest.unwrap_or_default(),
                    dwell_converged: converged,
                });
            }

            prev_dep[j] = departure;
            last_dep = departure;
        }
    }

    if !parts.is_finite() {
        stable = false;
    }
    if !stable {
        parts = ObjectiveParts {
            in_vehicle_time_s: f64::INFINITY,
            waiting_time_s: f64::INFINITY,
            last_train_left: f64::INFINITY,
        };
    }
    let feasible = stable && !(config.strict_headway && !headway_violations.is_empty());
    Evaluation {
        parts,
        headway_violations,
        dwell_unconverged,
        stable,
        feasible,
    }
}

/// Simulates the all-stop pattern and extracts the normalisation constants.
pub fn nominal_baseline(config: &LineConfig, demand: &DemandMatrix) -> Result<NominalBaseline> {
    let eval = evaluate(config, demand, &StopSkipPattern::for_config(config))?;
    Ok(NominalBaseline {
        t_in_vehicle_nom: eval.parts.in_vehicle_time_s,
        t_wait_nom: eval.parts.waiting_time_s,
        w_left_nom: eval.parts.last_train_left,
    })
}

impl NominalBaseline {
    /// Fails when a time denominator is zero or not finite.
    pub fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.t_in_vehicle_nom) || !ok(self.t_wait_nom) {
            return Err(Error::NormalizationUndefined(format!(
                "all-stop in-vehicle time {} and waiting time {} must both be positive",
                self.t_in_vehicle_nom, self.t_wait_nom
            )));
        }
        if !(self.w_left_nom.is_finite() && self.w_left_nom >= 0.0) {
            return Err(Error::NormalizationUndefined(format!(
                "all-stop leftover {} is not a valid count",
                self.w_left_nom
            )));
        }
        Ok(())
    }

    /// Normalised cost of `parts`. A pattern that strands passengers when the
    /// all-stop run strands none costs `+inf`.
    pub fn objective(&self, parts: &ObjectiveParts, gamma: f64) -> Result<f64> {
        self.check()?;
        if !parts.is_finite() {
            return Ok(f64::INFINITY);
        }
        let leftover = if self.w_left_nom > 0.0 {
            parts.last_train_left / self.w_left_nom
        } else if parts.last_train_left == 0.0 {
            0.0
        } else {
            return Ok(f64::INFINITY);
        };
        Ok(parts.in_vehicle_time_s / self.t_in_vehicle_nom
            + gamma * parts.waiting_time_s / self.t_wait_nom
            + leftover)
    }
}

/// Normalised objective of `result` against `baseline`.
pub fn normalize(result: &SimulationResult, baseline: &NominalBaseline, gamma: f64) -> Result<f64> {
    baseline.objective(&result.parts(), gamma)
}

/// One row of a time-distance diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub train: usize,
    pub station: usize,
    pub arrival_s: f64,
    pub departure_s: f64,
    pub stopped: bool,
}

/// Per-train station timings, ordered by train then station.
pub fn export_schedule(result: &SimulationResult) -> Vec<ScheduleRow> {
    let mut rows = Vec::with_capacity(result.states.len());
    for train in 1..=result.num_trains {
        for station in 1..=result.num_stations {
            let s = result.state(train, station);
            rows.push(ScheduleRow {
                train,
                station,
                arrival_s: s.arrival_s,
                departure_s: s.departure_s,
                stopped: s.stopped,
            });
        }
    }
    rows
}

/// `train,station,arrival_s,departure_s,stopped` with times to 2 decimals.
pub fn write_schedule_csv<W: Write>(rows: &[ScheduleRow], mut out: W) -> Result<()> {
    let io = |e| Error::io("<schedule>", e);
    writeln!(out, "train,station,arrival_s,departure_s,stopped").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.2},{:.2},{}",
            r.train,
            r.station,
            r.arrival_s,
            r.departure_s,
            u8::from(r.stopped)
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Objective breakdown of a pattern against the all-stop operation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub gamma: f64,
    pub objective: f64,
    pub baseline_objective: f64,
    pub objective_improvement_pct: f64,
    pub in_vehicle_time_s: f64,
    pub baseline_in_vehicle_time_s: f64,
    pub in_vehicle_improvement_pct: f64,
    pub waiting_time_s: f64,
    pub baseline_waiting_time_s: f64,
    pub waiting_improvement_pct: f64,
    pub last_train_left: f64,
    pub baseline_last_train_left: f64,
    pub num_skips: usize,
    pub feasible: bool,
    pub headway_violations: Vec<(usize, usize)>,
    pub dwell_unconverged: Vec<(usize, usize)>,
}

fn improvement_pct(base: f64, value: f64) -> f64 {
    if base == value {
        0.0
    } else {
        (base - value) / base * 100.0
    }
}

impl Summary {
    pub fn new(
        result: &SimulationResult,
        pattern: &StopSkipPattern,
        baseline: &NominalBaseline,
        gamma: f64,
    ) -> Result<Self> {
        let objective = normalize(result, baseline, gamma)?;
        let baseline_objective = baseline.objective(
            &ObjectiveParts {
                in_vehicle_time_s: baseline.t_in_vehicle_nom,
                waiting_time_s: baseline.t_wait_nom,
                last_train_left: baseline.w_left_nom,
            },
            gamma,
        )?;
        Ok(Summary {
            gamma,
            objective,
            baseline_objective,
            objective_improvement_pct: improvement_pct(baseline_objective, objective),
            in_vehicle_time_s: result.in_vehicle_time_s,
            baseline_in_vehicle_time_s: baseline.t_in_vehicle_nom,
            in_vehicle_improvement_pct: improvement_pct(baseline.t_in_vehicle_nom, result.in_vehicle_time_s),
            waiting_time_s: result.waiting_time_s,
            baseline_waiting_time_s: baseline.t_wait_nom,
            waiting_improvement_pct: improvement_pct(baseline.t_wait_nom, result.waiting_time_s),
            last_train_left: result.last_train_left,
            baseline_last_train_left: baseline.w_left_nom,
            num_skips: pattern.num_skips(),
            feasible: result.feasible,
            headway_violations: result.headway_violations.clone(),
            dwell_unconverged: result.dwell_unconverged.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary always serializes") + "\n"
    }

    /// Human-readable table comparing all-stop with the pattern.
    pub fn render_table(&self) -> String {
        format!(
            "{:<34}{:>16}{:>16}{:>12}\n\
             {:<34}{:>16.3}{:>16.3}{:>11.3}%\n\
             {:<34}{:>16.1}{:>16.1}{:>11.3}%\n\
             {:<34}{:>16.1}{:>16.1}{:>11.3}%\n\
             {:<34}{:>16.1}{:>16.1}\n",
            "",
            "all-stop",
            "pattern",
            "improvement",
            "objective",
            self.baseline_objective,
            self.objective,
            self.objective_improvement_pct,
            "waiting time (passenger-hours)",
            self.baseline_waiting_time_s / 3600.0,
            self.waiting_time_s / 3600.0,
            self.waiting_improvement_pct,
            "in-vehicle time (passenger-hours)",
            self.baseline_in_vehicle_time_s / 3600.0,
            self.in_vehicle_time_s / 3600.0,
            self.in_vehicle_improvement_pct,
            "left by last train",
            self.baseline_last_train_left,
            self.last_train_left,
        )
    }
}
