//! Independent reference evaluator for tiny instances.
//!
//! Written index-for-index against the model equations with 1-based
//! (train, station, destination) arrays and a real train 0 row, sharing no
//! code with the library simulator beyond the input types.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skipstop_core::{simulate, DemandMatrix, LineConfig, StopSkipPattern};

struct Oracle {
    a: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    alight: Vec<Vec<f64>>,
    board: Vec<Vec<f64>>,
    remain: Vec<Vec<f64>>,
    onboard: Vec<Vec<f64>>,
    wait: Vec<Vec<Vec<f64>>>,
    want2: Vec<Vec<Vec<f64>>>,
    left: Vec<Vec<Vec<f64>>>,
    left_cap: Vec<Vec<f64>>,
    in_vehicle: f64,
    waiting: f64,
    last_left: f64,
}

fn oracle(c: &LineConfig, u: &DemandMatrix, y: &StopSkipPattern) -> Oracle {
    let ni = c.num_trains;
    let nj = c.num_stations;
    let cap = c.capacity as f64;
    let [a1, a2, a3, a4] = c.dwell.alpha;
    let k = &c.kinematics;
    let t_acc = (k.holding_speed_mps / k.decel_mps2 - k.holding_speed_mps / (2.0 * k.decel_mps2))
        + (k.holding_speed_mps / k.accel_mps2 - k.holding_speed_mps / (2.0 * k.accel_mps2));
    let r = |j: usize| c.block_travel_time[j - 1];
    let yy = |i: usize, j: usize| if y.stops_at(i, j) { 1.0 } else { 0.0 };

    let grid = || vec![vec![0.0; nj + 1]; ni + 1];
    let cube = || vec![vec![vec![0.0; nj + 1]; nj + 1]; ni + 1];
    let mut o = Oracle {
        a: grid(),
        d: grid(),
        s: grid(),
        alight: grid(),
        board: grid(),
        remain: grid(),
        onboard: grid(),
        wait: cube(),
        want2: cube(),
        left: cube(),
        left_cap: grid(),
        in_vehicle: 0.0,
        waiting: 0.0,
        last_left: 0.0,
    };
    for j in 1..=nj {
        o.d[0][j] = c.horizon_start_s;
    }
    let mut board_od = vec![vec![vec![0.0; nj + 1]; nj + 1]; ni + 1];

    for i in 1..=ni {
        for j in 1..=nj {
            // alighting and free room do not depend on the dwell
            let alight: f64 = (1..j).map(|l| board_od[i][l][j]).sum();
            let remain = cap - o.onboard[i][j - 1] + alight;

            // quantities that depend on the departure time
            let at_departure = |dep: f64| {
                let gap = dep - o.d[i - 1][j];
                let mut w = vec![0.0; nj + 1];
                let mut want = vec![0.0; nj + 1];
                for kk in j + 1..=nj {
                    w[kk] = o.left[i - 1][j][kk] + u.rate(j, kk) * gap;
                    want[kk] = yy(i, j) * yy(i, kk) * w[kk];
                }
                let w_tot: f64 = w.iter().sum();
                let want_tot: f64 = want.iter().sum();
                let b = remain.min(want_tot);
                let s = (a1 + a2 * alight + a3 * b + a4 * (w_tot / c.num_doors as f64).powi(3) * b)
                    .max(c.dwell_criteria_s)
                    + t_acc;
                (w, want, b, s)
            };

            let (arr, dep, s);
            if j == 1 {
                dep = o.d[i - 1][1] + c.dispatch_headway_s;
                s = at_departure(dep).3 * yy(i, 1);
                arr = dep - s;
            } else {
                let mut cand = o.d[i][j - 1] + r(j - 1);
                cand = cand.max(o.d[i - 1][j] + c.min_arrival_gap_s);
                arr = cand;
                if yy(i, j) == 1.0 {
                    let mut cur = c.dwell_criteria_s + t_acc;
                    for _ in 0..20 {
                        let nxt = at_departure(arr + cur).3;
                        let done = (nxt - cur).abs() < 0.01;
                        cur = nxt;
                        if done {
                            break;
                        }
                    }
                    s = cur;
                } else {
                    s = 0.0;
                }
                dep = arr + s;
            }
            let (w, want, b, _) = at_departure(dep);
            let want_tot: f64 = want.iter().sum();
            let left_cap = yy(i, j) * (want_tot - remain.min(want_tot));
            for kk in j + 1..=nj {
                let share = if want_tot > 0.0 { want[kk] / want_tot } else { 0.0 };
                let l = yy(i, j) * (yy(i, kk) * left_cap * share + (1.0 - yy(i, kk)) * w[kk])
                    + (1.0 - yy(i, j)) * w[kk];
                o.left[i][j][kk] = l;
                board_od[i][j][kk] = w[kk] - l;
            }
            let b = b * yy(i, j);

            o.a[i][j] = arr;
            o.d[i][j] = dep;
            o.s[i][j] = s;
            o.alight[i][j] = alight;
            o.board[i][j] = b;
            o.remain[i][j] = remain;
            o.onboard[i][j] = o.onboard[i][j - 1] - alight + b;
            o.wait[i][j] = w;
            o.want2[i][j] = want;
            o.left_cap[i][j] = left_cap;
        }

        for j in 1..nj {
            o.in_vehicle += o.onboard[i][j] * r(j)
                + (o.onboard[i][j] - o.alight[i][j + 1]) * o.s[i][j + 1] * yy(i, j + 1);
            let gap = o.d[i][j] - o.d[i - 1][j];
            let prev_left: f64 = o.left[i - 1][j].iter().sum();
            let u_j: f64 = (j + 1..=nj).map(|kk| u.rate(j, kk)).sum();
            o.waiting += prev_left * gap + 0.5 * u_j * gap * gap;
        }
    }
    o.last_left = (1..=nj).map(|j| o.left_cap[ni][j]).sum();
    o
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Returns whether the run stayed finite.
fn assert_agrees(cfg: &LineConfig, demand: &DemandMatrix, pattern: &StopSkipPattern) -> bool {
    let sim = simulate(cfg, demand, pattern).unwrap();
    let o = oracle(cfg, demand, pattern);
    let oracle_finite = o.s.iter().flatten().all(|v| v.is_finite())
        && o.in_vehicle.is_finite()
        && o.waiting.is_finite();
    assert_eq!(sim.stable, oracle_finite);
    if !sim.stable {
        assert!(sim.in_vehicle_time_s.is_infinite());
        return false;
    }
    for i in 1..=cfg.num_trains {
        for j in 1..=cfg.num_stations {
            let st = sim.state(i, j);
            let ctx = format!("train {i} station {j}");
            assert!(close(st.arrival_s, o.a[i][j]), "arrival {ctx}: {} vs {}", st.arrival_s, o.a[i][j]);
            assert!(close(st.departure_s, o.d[i][j]), "departure {ctx}");
            assert!(close(st.dwell_s, o.s[i][j]), "dwell {ctx}");
            assert!(close(st.n_alight, o.alight[i][j]), "alight {ctx}");
            assert!(close(st.n_board, o.board[i][j]), "board {ctx}");
            assert!(close(st.n_remain_cap, o.remain[i][j]), "remain {ctx}");
            assert!(close(st.n_onboard_after_dep, o.onboard[i][j]), "onboard {ctx}");
            assert!(close(st.w_left, o.left_cap[i][j]), "left {ctx}");
            for k in j + 1..=cfg.num_stations {
                assert!(close(st.w_wait_by_dest[k - 1], o.wait[i][j][k]), "wait {ctx} -> {k}");
                assert!(close(st.w_want2_by_dest[k - 1], o.want2[i][j][k]), "want {ctx} -> {k}");
                assert!(close(st.w_left_by_dest[k - 1], o.left[i][j][k]), "left {ctx} -> {k}");
            }
        }
    }
    assert!(close(sim.in_vehicle_time_s, o.in_vehicle), "{} vs {}", sim.in_vehicle_time_s, o.in_vehicle);
    assert!(close(sim.waiting_time_s, o.waiting), "{} vs {}", sim.waiting_time_s, o.waiting);
    assert!(close(sim.last_train_left, o.last_left));
    sim.stable
}

#[test]
fn agrees_on_hand_instance() {
    let cfg = common::line(3, 1, &[]);
    let mut demand = DemandMatrix::zeros(3);
    demand.set_rate(1, 3, 0.1).unwrap();
    assert_agrees(&cfg, &demand, &StopSkipPattern::for_config(&cfg));
    let skip = StopSkipPattern::from_rows(&[vec![1u8, 0, 1]]).unwrap();
    assert_agrees(&cfg, &demand, &skip);
}

#[test]
fn agrees_on_random_small_instances() {
    let mut finite = 0;
    for seed in 0..300 {
        let (cfg, demand, pattern) = common::random_instance(seed, 3, 5);
        finite += assert_agrees(&cfg, &demand, &pattern) as usize;
    }
    println!("{finite} of 300 finite");
    assert!(finite >= 270, "only {finite} of 300 instances stayed finite");
}

#[test]
fn agrees_under_crowding_and_holding() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut finite = 0;
    for _ in 0..100 {
        let mut cfg = common::line(5, 3, &[3]);
        cfg.capacity = 30;
        cfg.dispatch_headway_s = 90.0;
        cfg.block_travel_time = vec![40.0, 200.0, 40.0, 60.0];
        let demand = common::random_demand(5, 0.25, &mut rng);
        let pattern = common::random_feasible_pattern(&cfg, 0.5, &mut rng);
        finite += assert_agrees(&cfg, &demand, &pattern) as usize;
    }
    println!("{finite} of 100 finite");
    assert!(finite >= 90);
}
