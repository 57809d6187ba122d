//! Shared fixtures for the benchmarks.

use std::collections::BTreeSet;

use skipstop_core::forecast::{Architecture, LstmParams, Sample};
use skipstop_core::line::{DwellCoefficients, Kinematics};
use skipstop_core::{DemandMatrix, LineConfig};

/// 12 trains on a 30-station line with a peak-shaped inbound demand that
/// overloads the all-stop operation.
pub fn peak_instance() -> (LineConfig, DemandMatrix) {
    let stations = 30;
    let cfg = LineConfig {
        num_stations: stations,
        num_trains: 12,
        block_travel_time: (0..stations - 1).map(|b| 90.0 + ((b * 7) % 26) as f64).collect(),
        transfer_stations: BTreeSet::from([11, 15, 17, 20]),
        dispatch_headway_s: 300.0,
        min_arrival_gap_s: 60.0,
        capacity: 300,
        num_doors: 28,
        dwell_criteria_s: 25.0,
        dwell_max_s: 120.0,
        gamma: 2.0,
        horizon_start_s: 61200.0,
        strict_headway: false,
        kinematics: Kinematics {
            holding_speed_mps: 19.44,
            accel_mps2: 0.7,
            decel_mps2: 0.7,
        },
        dwell: DwellCoefficients::default(),
    };
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

/// Forecaster sized for a 30-station line with one batch of 35 windows.
pub fn lstm_batch(hidden: usize) -> (LstmParams, Vec<Sample>) {
    let features = 30 * 29 / 2;
    let arch = Architecture {
        input_dim: features,
        hidden_dim: hidden,
        dense_dim: Some(32),
        output_dim: features,
    };
    let value = |n: usize, t: usize, k: usize| 0.5 + 0.4 * ((n * 31 + t * 7 + k) as f64 * 0.37).sin();
    let batch = (0..35)
        .map(|n| Sample {
            inputs: (0..4).map(|t| (0..features).map(|k| value(n, t, k)).collect()).collect(),
            target: (0..features).map(|k| value(n, 4, k)).collect(),
        })
        .collect();
    (LstmParams::init(arch, 1), batch)
}
