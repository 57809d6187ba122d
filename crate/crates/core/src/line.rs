//! Static description of a single rail line direction and the shared domain
//! types consumed by the simulator and the optimiser.
//!
//! Station and train numbers are 1-based everywhere they cross a public
//! boundary (accessors, files, error messages). Storage is 0-based.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train kinematics used for the stop/skip time penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kinematics {
    pub holding_speed_mps: f64,
    pub accel_mps2: f64,
    /// Magnitude of the braking rate.
    pub decel_mps2: f64,
}

/// Coefficients of the load-dependent dwell model:
/// `a1 + a2*alight + a3*board + a4*(waiting/doors)^3*board`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellCoefficients {
    pub alpha: [f64; 4],
}

impl Default for DwellCoefficients {
    fn default() -> Self {
        DwellCoefficients {
            alpha: [2.0, 0.03, 0.05, 0.001],
        }
    }
}

fn default_min_gap() -> f64 {
    60.0
}

fn default_gamma() -> f64 {
    2.0
}

/// One direction of one line: geometry, fleet and operating rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub num_stations: usize,
    pub num_trains: usize,
    /// Constant-speed traversal time of block `j` (station `j` to `j+1`), seconds.
    pub block_travel_time: Vec<f64>,
    /// Stations shared with other lines; never skippable.
    #[serde(default)]
    pub transfer_stations: BTreeSet<usize>,
    pub dispatch_headway_s: f64,
    #[serde(default = "default_min_gap")]
    pub min_arrival_gap_s: f64,
    pub capacity: u32,
    pub num_doors: u32,
    pub dwell_criteria_s: f64,
    /// Stored for completeness; no constraint uses it.
    pub dwell_max_s: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub horizon_start_s: f64,
    /// Treat any enforced arrival gap as infeasibility instead of holding.
    #[serde(default)]
    pub strict_headway: bool,
    pub kinematics: Kinematics,
    #[serde(default)]
    pub dwell: DwellCoefficients,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be strictly positive, got {v}")))
    }
}

impl LineConfig {
    /// Checks every structural and numeric invariant.
    pub fn validate(&self) -> Result<()> {
        if self.num_stations < 2 {
            return Err(Error::config("num_stations must be at least 2"));
        }
        if self.num_trains < 1 {
            return Err(Error::config("num_trains must be at least 1"));
        }
        if self.block_travel_time.len() != self.num_stations - 1 {
            return Err(Error::config(format!(
                "block_travel_time has {} entries, expected {}",
                self.block_travel_time.len(),
                self.num_stations - 1
            )));
        }
        for (b, &t) in self.block_travel_time.iter().enumerate() {
            positive(&format!("block_travel_time[{}]", b + 1), t)?;
        }
        for &s in &self.transfer_stations {
            if s < 1 || s > self.num_stations {
                return Err(Error::config(format!(
                    "transfer station {s} outside 1..={}",
                    self.num_stations
                )));
            }
        }
        positive("dispatch_headway_s", self.dispatch_headway_s)?;
        positive("min_arrival_gap_s", self.min_arrival_gap_s)?;
        if self.dispatch_headway_s <= self.min_arrival_gap_s {
            return Err(Error::config(
                "dispatch_headway_s must exceed min_arrival_gap_s",
            ));
        }
        if self.capacity == 0 {
            return Err(Error::config("capacity must be positive"));
        }
        if self.num_doors == 0 {
            return Err(Error::config("num_doors must be positive"));
        }
        positive("dwell_criteria_s", self.dwell_criteria_s)?;
        positive("dwell_max_s", self.dwell_max_s)?;
        positive("gamma", self.gamma)?;
        if !self.horizon_start_s.is_finite() {
            return Err(Error::config("horizon_start_s must be finite"));
        }
        positive("holding_speed_mps", self.kinematics.holding_speed_mps)?;
        positive("accel_mps2", self.kinematics.accel_mps2)?;
        positive("decel_mps2", self.kinematics.decel_mps2)?;
        for (n, &a) in self.dwell.alpha.iter().enumerate() {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::config(format!(
                    "dwell alpha_{} must be nonnegative, got {a}",
                    n + 1
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LineConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("line config always serializes")
    }

    /// Time lost to one brake-to-stop plus one start-from-stop, relative to
    /// cruising through the station.
    pub fn t_acc(&self) -> f64 {
        let k = &self.kinematics;
        accel_decel_loss(k.holding_speed_mps, k.accel_mps2, k.decel_mps2)
    }

    /// Terminals and transfer stations must be served by every train.
    pub fn is_mandatory(&self, station: usize) -> bool {
        station == 1 || station == self.num_stations || self.transfer_stations.contains(&station)
    }

    /// Number of (train, station) decisions.
    pub fn num_decisions(&self) -> usize {
        self.num_trains * self.num_stations
    }
}

fn accel_decel_loss(v: f64, acc: f64, dec: f64) -> f64 {
    // each phase: time at rate minus time to cover the same distance at v
    let braking = v / dec - (v * v / (2.0 * dec)) / v;
    let starting = v / acc - (v * v / (2.0 * acc)) / v;
    braking + starting
}

/// Time a train saves by passing a station instead of serving it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipSavings {
    /// Acceleration plus deceleration loss.
    pub t_acc_s: f64,
    /// `t_acc_s` plus the minimum dwell.
    pub total_s: f64,
}

pub fn compute_skip_savings(
    holding_speed_mps: f64,
    accel_mps2: f64,
    decel_mps2: f64,
    dwell_criteria_s: f64,
) -> Result<SkipSavings> {
    positive("holding_speed_mps", holding_speed_mps)?;
    positive("accel_mps2", accel_mps2)?;
    positive("decel_mps2", decel_mps2)?;
    if !(dwell_criteria_s.is_finite() && dwell_criteria_s >= 0.0) {
        return Err(Error::config("dwell_criteria_s must be nonnegative"));
    }
    let t_acc_s = accel_decel_loss(holding_speed_mps, accel_mps2, decel_mps2);
    Ok(SkipSavings {
        t_acc_s,
        total_s: t_acc_s + dwell_criteria_s,
    })
}

/// Number of ordered station pairs `(o, d)` with `o < d`.
pub fn num_od_pairs(num_stations: usize) -> usize {
    num_stations * num_stations.saturating_sub(1) / 2
}

/// Inverse of [`num_od_pairs`], if `pairs` is a triangular number.
pub fn stations_for_pairs(pairs: usize) -> Option<usize> {
    (2..=4096).find(|&j| num_od_pairs(j) == pairs)
}

/// 1-based `(origin, dest)` pairs in the flattened feature order: row-major
/// over origins, destinations increasing.
pub fn od_pairs(num_stations: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=num_stations).flat_map(move |o| (o + 1..=num_stations).map(move |d| (o, d)))
}

/// Station-to-station arrival rates for one hour, passengers per second.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    num_stations: usize,
    rates: Vec<f64>,
}

impl DemandMatrix {
    pub fn zeros(num_stations: usize) -> Self {
        DemandMatrix {
            num_stations,
            rates: vec![0.0; num_stations * num_stations],
        }
    }

    /// Builds from a dense per-second matrix indexed `[origin-1][dest-1]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = DemandMatrix::zeros(n);
        for (o, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::shape(format!(
                    "demand row {} has {} entries, expected {n}",
                    o + 1,
                    row.len()
                )));
            }
            for (d, &r) in row.iter().enumerate() {
                if d <= o {
                    if r != 0.0 {
                        return Err(Error::data(format!(
                            "demand {}->{} is not downstream but has rate {r}",
                            o + 1,
                            d + 1
                        )));
                    }
                } else {
                    m.set_rate(o + 1, d + 1, r)?;
                }
            }
        }
        Ok(m)
    }

    /// Builds from hourly passenger counts in [`od_pairs`] order.
    pub fn from_hourly_counts(num_stations: usize, counts: &[f64]) -> Result<Self> {
        if counts.len() != num_od_pairs(num_stations) {
            return Err(Error::shape(format!(
                "{} hourly counts for {num_stations} stations, expected {}",
                counts.len(),
                num_od_pairs(num_stations)
            )));
        }
        let mut m = DemandMatrix::zeros(num_stations);
        for ((o, d), &c) in od_pairs(num_stations).zip(counts) {
            m.set_rate(o, d, c / 3600.0)?;
        }
        Ok(m)
    }

    /// Hourly counts in [`od_pairs`] order.
    pub fn to_hourly_counts(&self) -> Vec<f64> {
        od_pairs(self.num_stations)
            .map(|(o, d)| self.rate(o, d) * 3600.0)
            .collect()
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    pub fn set_rate(&mut self, origin: usize, dest: usize, per_second: f64) -> Result<()> {
        let n = self.num_stations;
        if origin < 1 || dest > n || dest <= origin {
            return Err(Error::data(format!(
                "demand pair {origin}->{dest} invalid on a {n}-station line"
            )));
        }
        if !(per_second.is_finite() && per_second >= 0.0) {
            return Err(Error::data(format!(
                "demand {origin}->{dest} must be nonnegative, got {per_second}"
            )));
        }
        self.rates[(origin - 1) * n + dest - 1] = per_second;
        Ok(())
    }

    /// Rate for 1-based stations; zero for non-downstream pairs.
    pub fn rate(&self, origin: usize, dest: usize) -> f64 {
        self.rates[(origin - 1) * self.num_stations + dest - 1]
    }

    /// Per-second rates leaving `origin` (0-based row, all `J` columns).
    pub(crate) fn row(&self, origin0: usize) -> &[f64] {
        let n = self.num_stations;
        &self.rates[origin0 * n..(origin0 + 1) * n]
    }

    /// Total arrival rate at `origin`.
    pub fn row_total(&self, origin: usize) -> f64 {
        self.row(origin - 1).iter().sum()
    }

    pub fn total_per_second(&self) -> f64 {
        self.rates.iter().sum()
    }

    /// Multiplies every rate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DemandMatrix {
            num_stations: self.num_stations,
            rates: self.rates.iter().map(|r| r * factor).collect(),
        }
    }

    /// Reads `origin,dest,pax_per_hour` rows.
    pub fn load_csv(path: impl AsRef<Path>, num_stations: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        expect_headers(path, rdr.headers().map_err(|e| csv_err(path, e))?, &["origin", "dest", "pax_per_hour"])?;
        let mut m = DemandMatrix::zeros(num_stations);
        for rec in rdr.deserialize::<(usize, usize, f64)>() {
            let (o, d, v) = rec.map_err(|e| Error::format(path, e))?;
            m.set_rate(o, d, v / 3600.0)
                .map_err(|e| Error::format(path, e))?;
        }
        Ok(m)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::data(e.to_string());
        w.write_record(["origin", "dest", "pax_per_hour"]).map_err(wrap)?;
        for (o, d) in od_pairs(self.num_stations) {
            w.write_record([o.to_string(), d.to_string(), format!("{}", self.rate(o, d) * 3600.0)])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub(crate) fn expect_headers(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::format(
            path,
            format!("expected header `{}`, found `{}`", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Stop (`true`) or skip decision for every (train, station).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StopSkipPattern {
    num_trains: usize,
    num_stations: usize,
    stops: Vec<bool>,
}

impl StopSkipPattern {
    pub fn all_stop(num_trains: usize, num_stations: usize) -> Self {
        StopSkipPattern {
            num_trains,
            num_stations,
            stops: vec![true; num_trains * num_stations],
        }
    }

    pub fn for_config(config: &LineConfig) -> Self {
        Self::all_stop(config.num_trains, config.num_stations)
    }

    /// Rows are trains, columns stations; nonzero means stop.
    pub fn from_rows<T: Copy + Into<u8>>(rows: &[Vec<T>]) -> Result<Self> {
        let num_trains = rows.len();
        let num_stations = rows.first().map_or(0, Vec::len);
        let mut stops = Vec::with_capacity(num_trains * num_stations);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != num_stations {
                return Err(Error::shape(format!(
                    "pattern row for train {} has {} entries, expected {num_stations}",
                    i + 1,
                    row.len()
                )));
            }
            stops.extend(row.iter().map(|&v| v.into() != 0));
        }
        Ok(StopSkipPattern {
            num_trains,
            num_stations,
            stops,
        })
    }

    pub(crate) fn from_flat(num_trains: usize, num_stations: usize, stops: Vec<bool>) -> Self {
        debug_assert_eq!(stops.len(), num_trains * num_stations);
        StopSkipPattern {
            num_trains,
            num_stations,
            stops,
        }
    }

    pub fn num_trains(&self) -> usize {
        self.num_trains
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    /// Whether `train` serves `station` (both 1-based).
    pub fn stops_at(&self, train: usize, station: usize) -> bool {
        self.stops[(train - 1) * self.num_stations + station - 1]
    }

    pub fn set(&mut self, train: usize, station: usize, stop: bool) {
        self.stops[(train - 1) * self.num_stations + station - 1] = stop;
    }

    /// Decisions in train-major order.
    pub fn as_slice(&self) -> &[bool] {
        &self.stops
    }

    pub(crate) fn train_row(&self, train0: usize) -> &[bool] {
        &self.stops[train0 * self.num_stations..(train0 + 1) * self.num_stations]
    }

    pub fn num_skips(&self) -> usize {
        self.stops.iter().filter(|s| !**s).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::data(e.to_string());
        let mut header = vec!["train".to_string()];
        header.extend((1..=self.num_stations).map(|j| j.to_string()));
        w.write_record(&header).map_err(wrap)?;
        for i in 1..=self.num_trains {
            let mut row = vec![i.to_string()];
            row.extend((1..=self.num_stations).map(|j| u8::from(self.stops_at(i, j)).to_string()));
            w.write_record(&row).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))?;
        Ok(())
    }

    /// Reads the matrix written by [`StopSkipPattern::write_csv`].
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.get(0).map(str::trim) != Some("train") {
            return Err(Error::format(path, "first column must be `train`"));
        }
        let num_stations = header.len() - 1;
        for (j, h) in header.iter().skip(1).enumerate() {
            if h.trim() != (j + 1).to_string() {
                return Err(Error::format(path, format!("station column {} labelled `{h}`", j + 1)));
            }
        }
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let train: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad train number `{}`", &rec[0])))?;
            if train != rows.len() + 1 {
                return Err(Error::format(path, format!("train rows out of order at {train}")));
            }
            let mut row = Vec::with_capacity(num_stations);
            for cell in rec.iter().skip(1) {
                match cell.trim() {
                    "0" => row.push(0),
                    "1" => row.push(1),
                    other => {
                        return Err(Error::format(
                            path,
                            format!("train {train}: decision `{other}` is not 0 or 1"),
                        ))
                    }
                }
            }
            rows.push(row);
        }
        Self::from_rows(&rows).map_err(|e| Error::format(path, e))
    }
}

/// A broken pattern rule, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    /// `train` and `train + 1` both skip `station`.
    ConsecutiveSkip { train: usize, station: usize },
    TransferSkip { train: usize, station: usize },
    TerminalSkip { train: usize, station: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::ConsecutiveSkip { train, station } => write!(
                f,
                "consecutive-skip at station {station}: trains {train} and {} both skip",
                train + 1
            ),
            Violation::TransferSkip { train, station } => {
                write!(f, "transfer-skip at station {station} by train {train}")
            }
            Violation::TerminalSkip { train, station } => {
                write!(f, "terminal-skip at station {station} by train {train}")
            }
        }
    }
}

/// Lists every rule the pattern breaks; empty means feasible.
pub fn validate_pattern(pattern: &StopSkipPattern, config: &LineConfig) -> Result<Vec<Violation>> {
    if pattern.num_trains != config.num_trains || pattern.num_stations != config.num_stations {
        return Err(Error::shape(format!(
            "pattern is {}x{}, line has {} trains x {} stations",
            pattern.num_trains, pattern.num_stations, config.num_trains, config.num_stations
        )));
    }
    let mut out = Vec::new();
    for train in 1..=pattern.num_trains {
        for station in 1..=pattern.num_stations {
            if pattern.stops_at(train, station) {
                continue;
            }
            if station == 1 || station == pattern.num_stations {
                out.push(Violation::TerminalSkip { train, station });
            } else if config.transfer_stations.contains(&station) {
                out.push(Violation::TransferSkip { train, station });
            }
            if train < pattern.num_trains && !pattern.stops_at(train + 1, station) {
                out.push(Violation::ConsecutiveSkip { train, station });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn small_config(stations: usize, trains: usize) -> LineConfig {
        LineConfig {
            num_stations: stations,
            num_trains: trains,
            block_travel_time: vec![100.0; stations - 1],
            transfer_stations: BTreeSet::new(),
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

    #[test]
    fn tehran_kinematics() {
        let s = compute_skip_savings(19.44, 0.7, 0.7, 25.0).unwrap();
        // v/(2a) per phase
        assert!((s.t_acc_s - 19.44 / 0.7).abs() < 1e-12);
        assert!((s.total_s - s.t_acc_s - 25.0).abs() < 1e-12);
    }

    #[test]
    fn skip_savings_rejects_nonpositive() {
        assert!(compute_skip_savings(0.0, 0.7, 0.7, 25.0).is_err());
        assert!(compute_skip_savings(19.0, -0.7, 0.7, 25.0).is_err());
        assert!(compute_skip_savings(19.0, 0.7, 0.0, 25.0).is_err());
    }

    #[test]
    fn skip_savings_vanishes_at_low_speed() {
        let s = compute_skip_savings(1e-9, 0.7, 0.7, 0.0).unwrap();
        assert!(s.t_acc_s < 1e-8);
    }

    #[test]
    fn all_stop_is_feasible() {
        let mut cfg = small_config(6, 4);
        cfg.transfer_stations.insert(3);
        let p = StopSkipPattern::for_config(&cfg);
        assert!(validate_pattern(&p, &cfg).unwrap().is_empty());
    }

    #[test]
    fn consecutive_skip_reported() {
        let cfg = small_config(8, 6);
        let mut p = StopSkipPattern::for_config(&cfg);
        p.set(3, 5, false);
        p.set(4, 5, false);
        assert_eq!(
            validate_pattern(&p, &cfg).unwrap(),
            vec![Violation::ConsecutiveSkip { train: 3, station: 5 }]
        );
    }

    #[test]
    fn transfer_and_terminal_skips_reported() {
        let mut cfg = small_config(8, 3);
        cfg.transfer_stations.insert(4);
        let mut p = StopSkipPattern::for_config(&cfg);
        p.set(2, 4, false);
        p.set(1, 8, false);
        let v = validate_pattern(&p, &cfg).unwrap();
        assert_eq!(
            v,
            vec![
                Violation::TerminalSkip { train: 1, station: 8 },
                Violation::TransferSkip { train: 2, station: 4 },
            ]
        );
        assert_eq!(v[1].to_string(), "transfer-skip at station 4 by train 2");
    }

    #[test]
    fn pattern_shape_mismatch() {
        let cfg = small_config(5, 3);
        let p = StopSkipPattern::all_stop(3, 4);
        assert!(matches!(validate_pattern(&p, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn config_rejects_bad_headway_and_unknown_keys() {
        let mut cfg = small_config(4, 2);
        cfg.min_arrival_gap_s = 300.0;
        assert!(cfg.validate().is_err());
        let good = small_config(4, 2).to_toml_string();
        assert_eq!(LineConfig::from_toml_str(&good).unwrap(), small_config(4, 2));
        let bad = format!("bogus_key = 1\n{good}");
        let err = LineConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn demand_rejects_lower_triangle() {
        let rows = vec![vec![0.0, 0.1], vec![0.2, 0.0]];
        assert!(DemandMatrix::from_rows(&rows).is_err());
        let rows = vec![vec![0.0, -0.1], vec![0.0, 0.0]];
        assert!(DemandMatrix::from_rows(&rows).is_err());
    }

    #[test]
    fn demand_row_total_and_flatten() {
        let counts: Vec<f64> = (0..num_od_pairs(5)).map(|v| v as f64 * 36.0).collect();
        let m = DemandMatrix::from_hourly_counts(5, &counts).unwrap();
        assert_eq!(m.row_total(4), 9.0 * 36.0 / 3600.0);
        let back = m.to_hourly_counts();
        for (a, b) in back.iter().zip(&counts) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(stations_for_pairs(435), Some(30));
        assert_eq!(stations_for_pairs(7), None);
    }
}
