//! Smart-card transactions, trip pairing, hourly OD aggregation and a seeded
//! synthetic transaction generator.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{csv_err, expect_headers, num_od_pairs, od_pairs, stations_for_pairs};

pub const SECONDS_PER_HOUR: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxKind {
    Entry,
    Exit,
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxKind::Entry => "entry",
            TxKind::Exit => "exit",
        })
    }
}

/// One gate event.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub card_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp_s: i64,
    pub station: usize,
    pub kind: TxKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trip {
    pub card_id: String,
    pub origin_station: usize,
    pub dest_station: usize,
    pub entry_s: i64,
    pub exit_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    /// Entry followed by another entry of the same card.
    DoubleEntry,
    ExitWithoutEntry,
    /// Entry never closed by an exit.
    UnmatchedEntry,
    /// Destination not downstream of the origin.
    WrongDirection,
    /// Exit not after entry.
    NonPositiveDuration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub record: Transaction,
    pub reason: RejectReason,
}

fn by_card_then_time(a: &Transaction, b: &Transaction) -> Ordering {
    a.card_id
        .cmp(&b.card_id)
        .then(a.timestamp_s.cmp(&b.timestamp_s))
}

/// Greedy per-card pairing: each entry is closed by the next exit of the
/// same card. Input order within a card is taken by timestamp; ties keep
/// their input order.
pub fn pair_trips(transactions: &[Transaction]) -> (Vec<Trip>, Vec<Rejected>) {
    let mut order: Vec<&Transaction> = transactions.iter().collect();
    order.sort_by(|a, b| by_card_then_time(a, b));

    let mut trips = Vec::new();
    let mut rejected = Vec::new();
    let mut pending: Option<&Transaction> = None;
    let reject = |out: &mut Vec<Rejected>, t: &Transaction, reason| {
        out.push(Rejected {
            record: t.clone(),
            reason,
        })
    };

    for (idx, tx) in order.iter().enumerate() {
        if let Some(open) = pending {
            if open.card_id != tx.card_id {
                reject(&mut rejected, open, RejectReason::UnmatchedEntry);
                pending = None;
            }
        }
        match tx.kind {
            TxKind::Entry => {
                if let Some(open) = pending.replace(tx) {
                    reject(&mut rejected, open, RejectReason::DoubleEntry);
                }
            }
            TxKind::Exit => match pending.take() {
                None => reject(&mut rejected, tx, RejectReason::ExitWithoutEntry),
                Some(open) => {
                    let reason = if tx.timestamp_s <= open.timestamp_s {
                        Some(RejectReason::NonPositiveDuration)
                    } else if tx.station <= open.station {
                        Some(RejectReason::WrongDirection)
                    } else {
                        None
                    };
                    match reason {
                        Some(r) => {
                            reject(&mut rejected, open, r);
                            reject(&mut rejected, tx, r);
                        }
                        None => trips.push(Trip {
                            card_id: tx.card_id.clone(),
                            origin_station: open.station,
                            dest_station: tx.station,
                            entry_s: open.timestamp_s,
                            exit_s: tx.timestamp_s,
                        }),
                    }
                }
            },
        }
        if idx + 1 == order.len() {
            if let Some(open) = pending.take() {
                reject(&mut rejected, open, RejectReason::UnmatchedEntry);
            }
        }
    }
    (trips, rejected)
}

/// Hour label: whole hours since the Unix epoch.
pub fn hour_label(timestamp_s: i64) -> i64 {
    timestamp_s.div_euclid(SECONDS_PER_HOUR)
}

pub fn hour_of_day(label: i64) -> u32 {
    label.rem_euclid(24) as u32
}

/// Hourly flattened OD vectors, in [`od_pairs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OdSeries {
    num_stations: usize,
    hours: Vec<(i64, Vec<f64>)>,
}

impl OdSeries {
    pub fn new(num_stations: usize, hours: Vec<(i64, Vec<f64>)>) -> Result<Self> {
        let width = num_od_pairs(num_stations);
        for (n, (label, v)) in hours.iter().enumerate() {
            if v.len() != width {
                return Err(Error::shape(format!(
                    "hour {label} has {} values, expected {width}",
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::data(format!("hour {label} holds invalid demand {bad}")));
            }
            if n > 0 && hours[n - 1].0 >= *label {
                return Err(Error::data(format!("hour labels not increasing at {label}")));
            }
        }
        Ok(OdSeries { num_stations, hours })
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    pub fn num_features(&self) -> usize {
        num_od_pairs(self.num_stations)
    }

    pub fn len(&self) -> usize {
        self.hours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hours.is_empty()
    }

    pub fn hours(&self) -> &[(i64, Vec<f64>)] {
        &self.hours
    }

    pub fn labels(&self) -> impl Iterator<Item = i64> + '_ {
        self.hours.iter().map(|(l, _)| *l)
    }

    pub fn get(&self, label: i64) -> Option<&[f64]> {
        self.hours
            .binary_search_by_key(&label, |(l, _)| *l)
            .ok()
            .map(|i| self.hours[i].1.as_slice())
    }

    /// The last `n` hours; they must be consecutive.
    pub fn last_consecutive(&self, n: usize) -> Result<Vec<&[f64]>> {
        if self.hours.len() < n {
            return Err(Error::data(format!(
                "need {n} hours of history, series has {}",
                self.hours.len()
            )));
        }
        let tail = &self.hours[self.hours.len() - n..];
        if tail.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
            return Err(Error::data(format!("the last {n} hours are not consecutive")));
        }
        Ok(tail.iter().map(|(_, v)| v.as_slice()).collect())
    }

    /// `hour,origin,dest,count` rows for nonzero cells.
    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::data(e.to_string());
        w.write_record(["hour", "origin", "dest", "count"]).map_err(wrap)?;
        for (label, v) in &self.hours {
            for ((o, d), &c) in od_pairs(self.num_stations).zip(v) {
                if c != 0.0 {
                    w.write_record([label.to_string(), o.to_string(), d.to_string(), c.to_string()])
                        .map_err(wrap)?;
                }
            }
        }
        w.flush().map_err(|e| Error::data(e.to_string()))?;
        Ok(())
    }

    /// Compact matrix: one row per hour, header `hour,1-2,1-3,...`.
    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::data(e.to_string());
        let mut header = vec!["hour".to_string()];
        header.extend(od_pairs(self.num_stations).map(|(o, d)| format!("{o}-{d}")));
        w.write_record(&header).map_err(wrap)?;
        for (label, v) in &self.hours {
            let mut row = vec![label.to_string()];
            row.extend(v.iter().map(|c| c.to_string()));
            w.write_record(&row).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))?;
        Ok(())
    }

    pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.get(0).map(str::trim) != Some("hour") {
            return Err(Error::format(path, "first column must be `hour`"));
        }
        let width = header.len() - 1;
        let num_stations = stations_for_pairs(width)
            .ok_or_else(|| Error::format(path, format!("{width} OD columns is not a triangular count")))?;
        let expected: Vec<String> = od_pairs(num_stations).map(|(o, d)| format!("{o}-{d}")).collect();
        if header.iter().skip(1).map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(Error::format(path, "OD columns must be `o-d` in row-major order"));
        }
        let mut hours = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let label: i64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad hour label `{}`", &rec[0])))?;
            let v = rec
                .iter()
                .skip(1)
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("hour {label}: {e}")))?;
            hours.push((label, v));
        }
        OdSeries::new(num_stations, hours).map_err(|e| Error::format(path, e))
    }
}

/// Which hours `aggregate_hourly` emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HourWindow {
    /// First hour label, inclusive.
    pub start: i64,
    /// Last hour label, exclusive.
    pub end: i64,
    /// Service hours of each day, `[first_hour, end_hour)`.
    pub first_hour: u32,
    pub end_hour: u32,
}

impl HourWindow {
    pub fn contains(&self, label: i64) -> bool {
        let h = hour_of_day(label);
        label >= self.start && label < self.end && h >= self.first_hour && h < self.end_hour
    }
}

/// Counts trips per (entry hour, OD pair). Trips outside the window or with
/// stations beyond the line are ignored.
pub fn aggregate_hourly(trips: &[Trip], num_stations: usize, window: HourWindow) -> OdSeries {
    let labels: Vec<i64> = (window.start..window.end).filter(|l| window.contains(*l)).collect();
    let width = num_od_pairs(num_stations);
    let mut hours: Vec<(i64, Vec<f64>)> = labels.iter().map(|&l| (l, vec![0.0; width])).collect();
    for t in trips {
        let label = hour_label(t.entry_s);
        if !window.contains(label)
            || t.origin_station < 1
            || t.dest_station > num_stations
            || t.dest_station <= t.origin_station
        {
            continue;
        }
        let idx = labels.binary_search(&label).expect("window label present");
        hours[idx].1[pair_index(num_stations, t.origin_station, t.dest_station)] += 1.0;
    }
    OdSeries {
        num_stations,
        hours,
    }
}

/// Position of `(origin, dest)` in [`od_pairs`] order.
pub fn pair_index(num_stations: usize, origin: usize, dest: usize) -> usize {
    let o = origin - 1;
    o * num_stations - o * (o + 1) / 2 + (dest - origin - 1)
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Reads `card_id,timestamp,station,type`. Timestamps may be epoch seconds
/// or ISO-8601 (naive values are UTC). Files with more than `max_rows`
/// records are refused.
pub fn read_transactions(path: impl AsRef<Path>, max_rows: usize) -> Result<Vec<Transaction>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    expect_headers(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &["card_id", "timestamp", "station", "type"],
    )?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        if n >= max_rows {
            return Err(Error::format(
                path,
                format!("more than {max_rows} rows; raise the row limit to load this file"),
            ));
        }
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = n + 2;
        let bad = |what: &str| Error::format(path, format!("line {line}: {what}"));
        let timestamp_s = parse_timestamp(&rec[1]).ok_or_else(|| bad("unreadable timestamp"))?;
        let station: usize = rec[2].trim().parse().map_err(|_| bad("bad station"))?;
        if station == 0 {
            return Err(bad("stations are numbered from 1"));
        }
        let kind = match rec[3].trim().to_ascii_lowercase().as_str() {
            "entry" => TxKind::Entry,
            "exit" => TxKind::Exit,
            _ => return Err(bad("type must be entry or exit")),
        };
        out.push(Transaction {
            card_id: rec[0].trim().to_string(),
            timestamp_s,
            station,
            kind,
        });
    }
    Ok(out)
}

pub fn write_transactions<W: Write>(txs: &[Transaction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::data(e.to_string());
    w.write_record(["card_id", "timestamp", "station", "type"]).map_err(wrap)?;
    for t in txs {
        w.write_record([
            t.card_id.clone(),
            t.timestamp_s.to_string(),
            t.station.to_string(),
            t.kind.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::data(e.to_string()))?;
    Ok(())
}

/// Gaussian-shaped daily peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakProfile {
    /// Centre, in fractional hour of day.
    pub hour: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl PeakProfile {
    fn at(&self, hour_mid: f64) -> f64 {
        let z = (hour_mid - self.hour) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Parameters of the synthetic demand generator.
///
/// The expected hourly count for `(o, d)` is
/// `base_rate * day_scale * w_o * w_d * (offpeak + morning(h) * north(d) +
/// evening(h) * north(o) * south(d))`, where `north(s)` falls linearly from 1
/// at station 1 to 0 at the last station and `south = 1 - north`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_days: usize,
    pub num_stations: usize,
    pub rng_seed: u64,
    /// Days since the Unix epoch of the first day.
    #[serde(default = "default_start_day")]
    pub start_day: i64,
    #[serde(default = "default_first_hour")]
    pub first_hour: u32,
    #[serde(default = "default_end_hour")]
    pub end_hour: u32,
    /// Expected trips per hour per OD pair at unit profile.
    pub base_rate: f64,
    #[serde(default = "default_offpeak")]
    pub offpeak: f64,
    pub morning: PeakProfile,
    pub evening: PeakProfile,
    /// Each day is scaled by a uniform factor in `1 ± day_variation`.
    #[serde(default)]
    pub day_variation: f64,
    /// Per-station popularity weights; drawn log-normally when absent.
    #[serde(default)]
    pub station_weights: Option<Vec<f64>>,
    #[serde(default = "default_weight_spread")]
    pub station_weight_spread: f64,
}

fn default_start_day() -> i64 {
    // 2018-04-21
    17642
}
fn default_first_hour() -> u32 {
    5
}
fn default_end_hour() -> u32 {
    23
}
fn default_offpeak() -> f64 {
    0.3
}
fn default_weight_spread() -> f64 {
    0.5
}

/// Generator output: raw events plus the ground truth behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub transactions: Vec<Transaction>,
    /// Trips in card order.
    pub trips: Vec<Trip>,
    /// Sampled counts per hour.
    pub counts: OdSeries,
    /// Expected counts per hour (the Poisson means).
    pub rates: OdSeries,
    pub station_weights: Vec<f64>,
}

impl SyntheticSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be nonnegative, got {v}")))
            }
        };
        if self.num_days == 0 {
            return Err(Error::config("num_days must be positive"));
        }
        if self.num_stations < 2 {
            return Err(Error::config("num_stations must be at least 2"));
        }
        if self.first_hour >= self.end_hour || self.end_hour > 24 {
            return Err(Error::config("service hours must satisfy first_hour < end_hour <= 24"));
        }
        nonneg("base_rate", self.base_rate)?;
        nonneg("offpeak", self.offpeak)?;
        nonneg("station_weight_spread", self.station_weight_spread)?;
        for (name, p) in [("morning", &self.morning), ("evening", &self.evening)] {
            nonneg(&format!("{name}.amplitude"), p.amplitude)?;
            if !(p.width.is_finite() && p.width > 0.0) {
                return Err(Error::config(format!("{name}.width must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.day_variation) {
            return Err(Error::config("day_variation must be in [0, 1)"));
        }
        if let Some(w) = &self.station_weights {
            if w.len() != self.num_stations {
                return Err(Error::config(format!(
                    "{} station weights for {} stations",
                    w.len(),
                    self.num_stations
                )));
            }
            for &x in w {
                nonneg("station weight", x)?;
            }
        }
        Ok(())
    }

    pub fn window(&self) -> HourWindow {
        HourWindow {
            start: self.start_day * 24,
            end: (self.start_day + self.num_days as i64) * 24,
            first_hour: self.first_hour,
            end_hour: self.end_hour,
        }
    }

    fn expected_counts(&self, day_scale: f64, hour: u32, weights: &[f64]) -> Vec<f64> {
        let n = self.num_stations;
        let north = |s: usize| 1.0 - (s - 1) as f64 / (n - 1) as f64;
        let mid = f64::from(hour) + 0.5;
        let (m, e) = (self.morning.at(mid), self.evening.at(mid));
        od_pairs(n)
            .map(|(o, d)| {
                let shape = self.offpeak + m * north(d) + e * north(o) * (1.0 - north(d));
                self.base_rate * day_scale * weights[o - 1] * weights[d - 1] * shape
            })
            .collect()
    }
}

/// Samples Poisson trip counts per (hour, OD pair) and emits one entry/exit
/// pair per trip. Each trip uses its own card.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let n = spec.num_stations;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let weights: Vec<f64> = match &spec.station_weights {
        Some(w) => w.clone(),
        None => (0..n)
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (spec.station_weight_spread * z).exp()
            })
            .collect(),
    };

    let window = spec.window();
    let mut counts = Vec::new();
    let mut rates = Vec::new();
    let mut trips = Vec::new();
    for day in 0..spec.num_days as i64 {
        let scale = 1.0 + spec.day_variation * (2.0 * rng.random::<f64>() - 1.0);
        for hour in spec.first_hour..spec.end_hour {
            let label = (spec.start_day + day) * 24 + i64::from(hour);
            debug_assert!(window.contains(label));
            let lambda = spec.expected_counts(scale, hour, &weights);
            let mut sampled = Vec::with_capacity(lambda.len());
            for ((o, d), &l) in od_pairs(n).zip(&lambda) {
                let k = if l > 0.0 {
                    Poisson::new(l)
                        .map_err(|e| Error::config(format!("rate {l} for {o}->{d}: {e}")))?
                        .sample(&mut rng) as u64
                } else {
                    0
                };
                for _ in 0..k {
                    let entry_s = label * SECONDS_PER_HOUR + rng.random_range(0..SECONDS_PER_HOUR);
                    let ride = 60 + 110 * (d - o) as i64 + rng.random_range(0..120);
                    trips.push(Trip {
                        card_id: format!("c{:09}", trips.len()),
                        origin_station: o,
                        dest_station: d,
                        entry_s,
                        exit_s: entry_s + ride,
                    });
                }
                sampled.push(k as f64);
            }
            counts.push((label, sampled));
            rates.push((label, lambda));
        }
    }

    let mut transactions = Vec::with_capacity(trips.len() * 2);
    for t in &trips {
        transactions.push(Transaction {
            card_id: t.card_id.clone(),
            timestamp_s: t.entry_s,
            station: t.origin_station,
            kind: TxKind::Entry,
        });
        transactions.push(Transaction {
            card_id: t.card_id.clone(),
            timestamp_s: t.exit_s,
            station: t.dest_station,
            kind: TxKind::Exit,
        });
    }

    Ok(SyntheticData {
        transactions,
        trips,
        counts: OdSeries::new(n, counts)?,
        rates: OdSeries::new(n, rates)?,
        station_weights: weights,
    })
}
