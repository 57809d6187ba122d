//! Layered ant colony search over stop/skip patterns.
//!
//! Every (train, station) decision is a layer with two nodes: node 0 skips,
//! node 1 stops. Layers are visited train-major, so when an ant decides
//! train `i` at station `j` it already knows what train `i-1` did there and
//! can mask the skip node whenever it would create two consecutive skips.
//! Terminals and transfer stations are masked the same way, so every ant
//! yields a feasible pattern.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`): the run seed selects the
//! key and each (iteration, ant) pair reads its own stream, so results do
//! not depend on how ants are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::line::{DemandMatrix, LineConfig, StopSkipPattern};
use crate::sim::{evaluate_unchecked, nominal_baseline, NominalBaseline};

const SKIP: usize = 0;
const STOP: usize = 1;

/// Pheromone on the skip and stop node of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PheromoneField {
    tau: Vec<[f64; 2]>,
}

impl PheromoneField {
    pub fn uniform(layers: usize, value: f64) -> Self {
        PheromoneField {
            tau: vec![[value; 2]; layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.tau.len()
    }

    /// `[skip, stop]` pheromone of a 0-based layer.
    pub fn layer(&self, layer: usize) -> [f64; 2] {
        self.tau[layer]
    }

    pub fn set_layer(&mut self, layer: usize, value: [f64; 2]) {
        self.tau[layer] = value;
    }

    /// Selection probabilities `[skip, stop]` for a layer. A masked skip node
    /// gets probability zero.
    pub fn probabilities(&self, layer: usize, alpha: f64, skip_allowed: bool) -> [f64; 2] {
        let [skip, stop] = self.tau[layer];
        let w_stop = stop.powf(alpha);
        let w_skip = if skip_allowed { skip.powf(alpha) } else { 0.0 };
        let total = w_skip + w_stop;
        [w_skip / total, w_stop / total]
    }

    /// Adds `q / cost` to every node on `pattern`'s path.
    pub fn deposit(&mut self, pattern: &StopSkipPattern, cost: f64, q: f64) -> Result<()> {
        if !(cost.is_finite() && cost > 0.0) {
            return Err(Error::Deposit(format!("cost must be finite and positive, got {cost}")));
        }
        if pattern.as_slice().len() != self.tau.len() {
            return Err(Error::shape(format!(
                "pattern has {} decisions, pheromone field {} layers",
                pattern.as_slice().len(),
                self.tau.len()
            )));
        }
        let amount = q / cost;
        for (layer, &stop) in self.tau.iter_mut().zip(pattern.as_slice()) {
            layer[if stop { STOP } else { SKIP }] += amount;
        }
        Ok(())
    }

    /// Elite update: the iteration-best and global-best ants both deposit,
    /// stacking when they are the same ant.
    pub fn deposit_elite(
        &mut self,
        iteration_best: (&StopSkipPattern, f64),
        global_best: (&StopSkipPattern, f64),
        q: f64,
    ) -> Result<()> {
        self.deposit(iteration_best.0, iteration_best.1, q)?;
        self.deposit(global_best.0, global_best.1, q)
    }

    pub fn evaporate(&mut self, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::config(format!("evaporation rate must be in (0, 1), got {rho}")));
        }
        let keep = 1.0 - rho;
        for layer in &mut self.tau {
            layer[SKIP] *= keep;
            layer[STOP] *= keep;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcoParams {
    pub num_ants: usize,
    pub max_iterations: usize,
    /// Pheromone exponent in the selection rule.
    pub alpha: f64,
    /// Deposit numerator; also the initial pheromone on every node.
    pub initial_pheromone: f64,
    pub evaporation_rate: f64,
    pub rng_seed: u64,
}

impl Default for AcoParams {
    fn default() -> Self {
        AcoParams {
            num_ants: 360,
            max_iterations: 30,
            alpha: 0.8,
            initial_pheromone: 7.0,
            evaporation_rate: 0.1,
            rng_seed: 0,
        }
    }
}

impl AcoParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_ants == 0 {
            return Err(Error::config("num_ants must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be positive"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        if !(self.initial_pheromone.is_finite() && self.initial_pheromone > 0.0) {
            return Err(Error::config("initial pheromone must be positive"));
        }
        if !(self.evaporation_rate > 0.0 && self.evaporation_rate < 1.0) {
            return Err(Error::config("evaporation rate must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Per-iteration costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub iteration_best: f64,
    pub global_best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcoRun {
    pub best_pattern: StopSkipPattern,
    pub best_cost: f64,
    pub baseline: NominalBaseline,
    /// Normalised cost of the all-stop pattern.
    pub baseline_cost: f64,
    pub history: Vec<IterationRecord>,
}

impl AcoRun {
    /// `it,iter_best,global_best` lines.
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<convergence log>", e);
        writeln!(out, "it,iter_best,global_best").map_err(io)?;
        for r in &self.history {
            writeln!(out, "{},{},{}", r.iteration, r.iteration_best, r.global_best).map_err(io)?;
        }
        Ok(())
    }
}

/// Whether the skip node of `train`/`station` (0-based) may be chosen given
/// the decisions made so far.
fn skip_allowed(mandatory: &[bool], decided: &[bool], num_stations: usize, train0: usize, station0: usize) -> bool {
    if mandatory[station0] {
        return false;
    }
    train0 == 0 || decided[(train0 - 1) * num_stations + station0]
}

fn mandatory_mask(config: &LineConfig, forbid_all: bool) -> Vec<bool> {
    (1..=config.num_stations)
        .map(|s| forbid_all || config.is_mandatory(s))
        .collect()
}

fn build_ant<R: Rng + ?Sized>(
    pheromone: &PheromoneField,
    alpha: f64,
    mandatory: &[bool],
    num_trains: usize,
    num_stations: usize,
    rng: &mut R,
) -> StopSkipPattern {
    let mut decided = Vec::with_capacity(num_trains * num_stations);
    for i in 0..num_trains {
        for j in 0..num_stations {
            let layer = i * num_stations + j;
            let stop = if skip_allowed(mandatory, &decided, num_stations, i, j) {
                let [p_skip, _] = pheromone.probabilities(layer, alpha, true);
                // roulette wheel over [skip, stop]
                rng.random::<f64>() >= p_skip
            } else {
                true
            };
            decided.push(stop);
        }
    }
    StopSkipPattern::from_flat(num_trains, num_stations, decided)
}

/// Builds one ant's pattern by walking the layers and sampling each node in
/// proportion to `pheromone^alpha`, with infeasible skips masked.
pub fn construct_ant<R: Rng + ?Sized>(
    pheromone: &PheromoneField,
    config: &LineConfig,
    alpha: f64,
    rng: &mut R,
) -> Result<StopSkipPattern> {
    if pheromone.num_layers() != config.num_decisions() {
        return Err(Error::shape(format!(
            "pheromone field has {} layers, line needs {}",
            pheromone.num_layers(),
            config.num_decisions()
        )));
    }
    Ok(build_ant(
        pheromone,
        alpha,
        &mandatory_mask(config, false),
        config.num_trains,
        config.num_stations,
        rng,
    ))
}

/// RNG for a given ant of a given iteration.
pub fn ant_rng(seed: u64, iteration: usize, ant: usize, num_ants: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration * num_ants + ant) as u64);
    rng
}

/// Colony bound to one problem instance.
pub struct Colony<'a> {
    config: &'a LineConfig,
    demand: &'a DemandMatrix,
    params: AcoParams,
    mandatory: Vec<bool>,
    baseline: NominalBaseline,
}

impl<'a> Colony<'a> {
    pub fn new(config: &'a LineConfig, demand: &'a DemandMatrix, params: AcoParams) -> Result<Self> {
        params.validate()?;
        let baseline = nominal_baseline(config, demand)?;
        baseline.check()?;
        Ok(Colony {
            config,
            demand,
            params,
            mandatory: mandatory_mask(config, false),
            baseline,
        })
    }

    /// Masks every skip node so the colony can only produce all-stop.
    pub fn forbid_all_skips(mut self) -> Self {
        self.mandatory = mandatory_mask(self.config, true);
        self
    }

    pub fn baseline(&self) -> &NominalBaseline {
        &self.baseline
    }

    /// Normalised cost, `+inf` for a pattern that strands passengers against
    /// a clean baseline. Infeasible evaluations return `None`.
    pub fn cost(&self, pattern: &StopSkipPattern) -> Option<f64> {
        let eval = evaluate_unchecked(self.config, self.demand, pattern);
        if !eval.feasible {
            return None;
        }
        Some(
            self.baseline
                .objective(&eval.parts, self.config.gamma)
                .expect("baseline checked at construction"),
        )
    }

    pub fn run(&self) -> Result<AcoRun> {
        let p = &self.params;
        let (trains, stations) = (self.config.num_trains, self.config.num_stations);
        let mut pheromone = PheromoneField::uniform(self.config.num_decisions(), p.initial_pheromone);
        let baseline_cost = self
            .cost(&StopSkipPattern::for_config(self.config))
            .unwrap_or(f64::INFINITY);

        let mut global: Option<(StopSkipPattern, f64)> = None;
        let mut history = Vec::with_capacity(p.max_iterations);

        for it in 0..p.max_iterations {
            let ants: Vec<(StopSkipPattern, Option<f64>)> = (0..p.num_ants)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ant_rng(p.rng_seed, it, k, p.num_ants);
                    let ant = build_ant(&pheromone, p.alpha, &self.mandatory, trains, stations, &mut rng);
                    let cost = self.cost(&ant);
                    (ant, cost)
                })
                .collect();

            // infeasible ants cost ten times the worst feasible one
            let worst = ants
                .iter()
                .filter_map(|(_, c)| *c)
                .filter(|c| c.is_finite())
                .fold(f64::NAN, f64::max);
            let sentinel = if worst.is_nan() { f64::INFINITY } else { worst * 10.0 };

            let mut iter_best: Option<(usize, f64)> = None;
            for (k, (_, cost)) in ants.iter().enumerate() {
                let c = cost.unwrap_or(sentinel);
                if c.is_finite() && iter_best.is_none_or(|(_, b)| c < b) {
                    iter_best = Some((k, c));
                }
            }

            let iter_best = iter_best.map(|(k, c)| (ants[k].0.clone(), c));
            if let Some((ant, c)) = &iter_best {
                if global.as_ref().is_none_or(|(_, g)| *c < *g) {
                    global = Some((ant.clone(), *c));
                }
            }
            if let (Some(ib), Some(gb)) = (&iter_best, &global) {
                pheromone.deposit_elite((&ib.0, ib.1), (&gb.0, gb.1), p.initial_pheromone)?;
            }
            pheromone.evaporate(p.evaporation_rate)?;

            history.push(IterationRecord {
                iteration: it + 1,
                iteration_best: iter_best.as_ref().map_or(f64::INFINITY, |b| b.1),
                global_best: global.as_ref().map_or(f64::INFINITY, |g| g.1),
            });
        }

        let (best_pattern, best_cost) = global.ok_or_else(|| {
            Error::config("no ant produced a finite-cost pattern; check the line and demand")
        })?;
        Ok(AcoRun {
            best_pattern,
            best_cost,
            baseline: self.baseline,
            baseline_cost,
            history,
        })
    }
}

/// Runs the colony with default masking.
pub fn optimize(config: &LineConfig, demand: &DemandMatrix, params: AcoParams) -> Result<AcoRun> {
    Colony::new(config, demand, params)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::tests::small_config;
    use crate::line::validate_pattern;

    #[test]
    fn equal_pheromone_gives_even_odds() {
        let f = PheromoneField::uniform(3, 4.2);
        for alpha in [0.3, 0.8, 1.0, 2.5] {
            assert_eq!(f.probabilities(1, alpha, true), [0.5, 0.5]);
        }
        assert_eq!(f.probabilities(1, 0.8, false), [0.0, 1.0]);
    }

    #[test]
    fn transfer_layers_always_stop() {
        let mut cfg = small_config(6, 4);
        cfg.transfer_stations.insert(3);
        let mut f = PheromoneField::uniform(cfg.num_decisions(), 1.0);
        for l in 0..f.num_layers() {
            f.set_layer(l, [1e6, 1e-6]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = construct_ant(&f, &cfg, 1.0, &mut rng).unwrap();
            for i in 1..=4 {
                assert!(p.stops_at(i, 3));
                assert!(p.stops_at(i, 1) && p.stops_at(i, 6));
            }
            assert!(validate_pattern(&p, &cfg).unwrap().is_empty());
        }
    }

    #[test]
    fn monte_carlo_matches_selection_rule() {
        let cfg = small_config(3, 1);
        let mut f = PheromoneField::uniform(3, 1.0);
        f.set_layer(1, [1.0, 9.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let stops = (0..draws)
            .filter(|_| construct_ant(&f, &cfg, 1.0, &mut rng).unwrap().stops_at(1, 2))
            .count();
        let freq = stops as f64 / draws as f64;
        assert!((freq - 0.9).abs() <= 0.01, "{freq}");
    }

    #[test]
    fn deposit_rules() {
        let p = StopSkipPattern::from_rows(&[vec![1u8, 0, 1]]).unwrap();
        let mut f = PheromoneField::uniform(3, 7.0);
        f.deposit_elite((&p, 3.5), (&p, 3.5), 7.0).unwrap();
        assert_eq!(f.layer(0), [7.0, 11.0]);
        assert_eq!(f.layer(1), [11.0, 7.0]);
        assert!(f.deposit(&p, 0.0, 7.0).is_err());
        assert!(f.deposit(&p, f64::INFINITY, 7.0).is_err());

        let mut g = PheromoneField::uniform(3, 7.0);
        g.deposit(&p, 3.839, 7.0).unwrap();
        assert!((g.layer(0)[1] - 7.0 - 1.8234).abs() < 1e-4);
    }

    #[test]
    fn evaporation() {
        let mut f = PheromoneField::uniform(2, 7.0);
        f.evaporate(0.1).unwrap();
        assert!((f.layer(0)[0] - 6.3).abs() < 1e-12);
        for _ in 0..9 {
            f.evaporate(0.1).unwrap();
        }
        assert!((f.layer(1)[1] - 7.0 * 0.9f64.powi(10)).abs() < 1e-12);
        assert!(f.evaporate(0.0).is_err());
        assert!(f.evaporate(1.0).is_err());
        let mut g = PheromoneField::uniform(1, 7.0);
        g.evaporate(1e-15).unwrap();
        assert!((g.layer(0)[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(AcoParams::default().validate().is_ok());
        let bad = AcoParams {
            evaporation_rate: 1.5,
            ..AcoParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
