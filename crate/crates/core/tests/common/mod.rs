//! Instance builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skipstop_core::forecast::{loss_and_grad, Architecture, LstmParams, Sample};
use skipstop_core::line::{DwellCoefficients, Kinematics};
use skipstop_core::sim::evaluate;
use skipstop_core::{nominal_baseline, validate_pattern, DemandMatrix, LineConfig, StopSkipPattern};

pub fn line(stations: usize, trains: usize, transfers: &[usize]) -> LineConfig {
    LineConfig {
        num_stations: stations,
        num_trains: trains,
        block_travel_time: vec![100.0; stations - 1],
        transfer_stations: transfers.iter().copied().collect::<BTreeSet<_>>(),
        dispatch_headway_s: 300.0,
        min_arrival_gap_s: 60.0,
        capacity: 1348,
        num_doors: 28,
        dwell_criteria_s: 25.0,
        dwell_max_s: 120.0,
        gamma: 2.0,
        horizon_start_s: 0.0,
        strict_headway: false,
        kinematics: Kinematics {
            holding_speed_mps: 19.44,
            accel_mps2: 0.7,
            decel_mps2: 0.7,
        },
        dwell: DwellCoefficients::default(),
    }
}

/// Uniform random rates in `[0, max_per_second)` on every downstream pair.
pub fn random_demand(stations: usize, max_per_second: f64, rng: &mut impl Rng) -> DemandMatrix {
    let mut m = DemandMatrix::zeros(stations);
    for o in 1..=stations {
        for d in o + 1..=stations {
            m.set_rate(o, d, rng.random_range(0.0..max_per_second)).unwrap();
        }
    }
    m
}

/// Random pattern that respects every skipping rule.
pub fn random_feasible_pattern(config: &LineConfig, skip_prob: f64, rng: &mut impl Rng) -> StopSkipPattern {
    let (trains, stations) = (config.num_trains, config.num_stations);
    let mut p = StopSkipPattern::for_config(config);
    for i in 1..=trains {
        for j in 1..=stations {
            let free = !config.is_mandatory(j) && (i == 1 || p.stops_at(i - 1, j));
            if free && rng.random_bool(skip_prob) {
                p.set(i, j, false);
            }
        }
    }
    p
}

/// Random small line with random headway, blocks, capacity and transfers.
pub fn random_instance(seed: u64, max_trains: usize, max_stations: usize) -> (LineConfig, DemandMatrix, StopSkipPattern) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations = rng.random_range(3..=max_stations);
    let trains = rng.random_range(1..=max_trains);
    let mut cfg = line(stations, trains, &[]);
    for t in cfg.block_travel_time.iter_mut() {
        *t = rng.random_range(60.0..150.0);
    }
    if stations > 3 && rng.random_bool(0.5) {
        cfg.transfer_stations.insert(rng.random_range(2..stations));
    }
    cfg.dispatch_headway_s = rng.random_range(120.0..400.0);
    // small capacities force left-behind passengers
    cfg.capacity = rng.random_range(20..400);
    cfg.num_doors = 40;
    cfg.horizon_start_s = rng.random_range(0.0..1000.0);
    let demand = random_demand(stations, rng.random_range(0.005..0.08), &mut rng);
    let pattern = random_feasible_pattern(&cfg, 0.4, &mut rng);
    (cfg, demand, pattern)
}

/// Peak-shaped 12 x 30 instance: most trips run from the outer half into
/// the centre, a few stations are quiet, and cars are small enough that the
/// all-stop run leaves passengers behind.
pub fn peak_instance() -> (LineConfig, DemandMatrix) {
    let stations = 30;
    let mut cfg = line(stations, 12, &[11, 15, 17, 20]);
    cfg.block_travel_time = (0..stations - 1)
        .map(|b| 90.0 + ((b * 7) % 26) as f64)
        .collect();
    cfg.horizon_start_s = 61200.0;
    cfg.capacity = 300;
    let quiet = [3, 6, 8, 13, 22, 25, 27];
    let weight = |s: usize| if quiet.contains(&s) { 0.15 } else { 1.0 };
    let mut m = DemandMatrix::zeros(stations);
    for o in 1..=stations {
        for d in o + 1..=stations {
            let inbound = if o <= 18 && d >= 19 { 3.0 } else { 1.0 };
            m.set_rate(o, d, 8.0 * weight(o) * weight(d) * inbound / 3600.0).unwrap();
        }
    }
    (cfg, m)
}

/// Checks the per-train balance, per-station ledger, capacity bound and time
/// ordering of a finite run, all to `tol`.
pub fn check_conservation(
    cfg: &LineConfig,
    sim: &skipstop_core::SimulationResult,
    tol: f64,
) -> Result<(), String> {
    let (ni, nj) = (cfg.num_trains, cfg.num_stations);
    let cap = f64::from(cfg.capacity);
    for i in 1..=ni {
        let boarded: f64 = (1..=nj).map(|j| sim.state(i, j).n_board).sum();
        let alighted: f64 = (1..=nj).map(|j| sim.state(i, j).n_alight).sum();
        if (boarded - alighted).abs() > tol * (1.0 + boarded) {
            return Err(format!("train {i}: boarded {boarded}, alighted {alighted}"));
        }
        for j in 1..=nj {
            let st = sim.state(i, j);
            let at = format!("train {i} station {j}");
            if st.n_onboard_after_dep < -tol || st.n_onboard_after_dep > cap + tol {
                return Err(format!("{at}: onboard {} outside [0, {cap}]", st.n_onboard_after_dep));
            }
            if st.n_board < -tol || st.n_alight < -tol || st.w_left < -tol {
                return Err(format!("{at}: negative counter"));
            }
            let mut sum_wait = 0.0;
            let mut sum_left = 0.0;
            for k in j + 1..=nj {
                let (w, b, l) = (st.w_wait_by_dest[k - 1], st.board_by_dest[k - 1], st.w_left_by_dest[k - 1]);
                if (w - b - l).abs() > tol * (1.0 + w) {
                    return Err(format!("{at} -> {k}: waiting {w} != boarded {b} + left {l}"));
                }
                if st.w_want2_by_dest[k - 1] > w + tol {
                    return Err(format!("{at} -> {k}: want {} exceeds waiting {w}", st.w_want2_by_dest[k - 1]));
                }
                sum_wait += w;
                sum_left += l;
            }
            if (sum_wait - st.w_wait).abs() > tol * (1.0 + sum_wait)
                || (sum_left - st.w_left_total).abs() > tol * (1.0 + sum_left)
            {
                return Err(format!("{at}: destination vectors do not sum to totals"));
            }
            if st.departure_s < st.arrival_s || st.dwell_s < 0.0 {
                return Err(format!("{at}: departs before arriving"));
            }
            if j < nj && !(st.arrival_s < sim.state(i, j + 1).arrival_s) {
                return Err(format!("{at}: arrival not increasing along the line"));
            }
            if i > 1 && j > 1 {
                let gap = st.arrival_s - sim.state(i - 1, j).departure_s;
                if gap < cfg.min_arrival_gap_s - tol {
                    return Err(format!("{at}: arrival gap {gap} below minimum"));
                }
            }
        }
    }
    if sim.in_vehicle_time_s < 0.0 || sim.waiting_time_s < 0.0 || sim.last_train_left < -tol {
        return Err("negative objective component".into());
    }
    Ok(())
}

/// Lowest normalised cost over every feasible pattern, by enumeration of all
/// decisions at interior stations. Returns the cost and one optimal pattern.
pub fn brute_force(cfg: &LineConfig, demand: &DemandMatrix) -> (f64, StopSkipPattern) {
    let (ni, nj) = (cfg.num_trains, cfg.num_stations);
    let base = nominal_baseline(cfg, demand).unwrap();
    let cells: Vec<(usize, usize)> = (1..=ni).flat_map(|i| (2..nj).map(move |j| (i, j))).collect();
    assert!(cells.len() <= 20, "too many decisions to enumerate");
    let mut best = (f64::INFINITY, StopSkipPattern::for_config(cfg));
    for mask in 0u32..1 << cells.len() {
        let mut p = StopSkipPattern::for_config(cfg);
        for (bit, &(i, j)) in cells.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                p.set(i, j, false);
            }
        }
        if !validate_pattern(&p, cfg).unwrap().is_empty() {
            continue;
        }
        let eval = evaluate(cfg, demand, &p).unwrap();
        if !eval.feasible {
            continue;
        }
        let cost = base.objective(&eval.parts, cfg.gamma).unwrap();
        if cost < best.0 {
            best = (cost, p);
        }
    }
    best
}

fn random_batch(arch: Architecture, steps: usize, n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            inputs: (0..steps)
                .map(|_| (0..arch.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect(),
            // extreme targets keep the gradients well above round-off
            target: (0..arch.output_dim).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        })
        .collect()
}

/// Perturbs every parameter so biases are nonzero too.
pub fn jittered(arch: Architecture, seed: u64) -> LstmParams {
    let mut p = LstmParams::init(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    for k in 0..p.num_parameters() {
        p.set_flat(k, p.get_flat(k) + rng.random_range(-0.3..0.3));
    }
    p
}

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientCheck {
    pub raw: f64,
    /// After subtracting the round-off a central difference of this step
    /// size carries.
    pub adjusted: f64,
}

/// Compares gradients on `samples` randomly chosen parameters.
pub fn gradient_check(arch: Architecture, seed: u64, samples: usize) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = jittered(arch, seed);
    let batch = random_batch(arch, 4, 1, &mut rng);
    let (loss, grad) = loss_and_grad(&params, &batch).unwrap();
    let step = 1e-6;
    let round_off = 4.0 * f64::EPSILON * loss.abs().max(1.0) / step;
    let mut worst = GradientCheck::default();
    for _ in 0..samples {
        let k = rng.random_range(0..params.num_parameters());
        let mut plus = params.clone();
        plus.set_flat(k, params.get_flat(k) + step);
        let mut minus = params.clone();
        minus.set_flat(k, params.get_flat(k) - step);
        let numeric = (loss_and_grad(&plus, &batch).unwrap().0 - loss_and_grad(&minus, &batch).unwrap().0)
            / (2.0 * step);
        let analytic = grad.get_flat(k);
        let diff = (analytic - numeric).abs();
        let excess = (diff - round_off).max(0.0);
        let scale = analytic.abs().max(numeric.abs());
        if diff > 0.0 {
            worst.raw = worst.raw.max(diff / scale);
        }
        if excess > 0.0 {
            worst.adjusted = worst.adjusted.max(excess / scale);
        }
    }
    worst
}
