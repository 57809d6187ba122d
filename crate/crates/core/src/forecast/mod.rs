//! Peak-hour OD demand forecasting.
//!
//! A model reads `lookback` consecutive hourly OD vectors (flattened in
//! [`od_pairs`](crate::line::od_pairs) order, min-max scaled to `[0, 1]`) and
//! predicts the next hour's vector.

mod lstm;
mod train;

pub use lstm::{
    forward_normalized, loss_and_grad, lstm_cell_step, mse, sigmoid, Architecture, Dense, Gate,
    LstmParams, Matrix, Sample,
};
pub use train::{
    accuracy, split_random, train, Accuracy, Adam, EpochLoss, Hyper, LossCurve,
};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{stations_for_pairs, DemandMatrix};
use crate::smartcard::{hour_of_day, OdSeries};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Per-feature min-max scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScale {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScale {
    pub fn identity(dim: usize) -> Self {
        MinMaxScale {
            min: vec![0.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut it = vectors.into_iter();
        let first = it.next().ok_or_else(|| Error::data("cannot fit scale on no data"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for v in it {
            if v.len() != min.len() {
                return Err(Error::shape("vectors of different lengths"));
            }
            for k in 0..v.len() {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        Ok(MinMaxScale { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Constant features map to 0.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, v)| {
                let span = self.max[k] - self.min[k];
                if span > 0.0 {
                    (v - self.min[k]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn denormalize(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(k, v)| self.min[k] + v * (self.max[k] - self.min[k]))
            .collect()
    }
}

/// Trained forecaster: weights plus the scaling and window length it was
/// trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub lookback: usize,
    pub scale: MinMaxScale,
    pub params: LstmParams,
}

/// Raw (unscaled) training window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub target_label: i64,
    pub inputs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

/// All windows of `lookback` consecutive hours followed by a target hour.
/// With `target_hours`, only targets at those hours of day are kept.
pub fn windows(series: &OdSeries, lookback: usize, target_hours: Option<&[u32]>) -> Vec<Window> {
    let hours = series.hours();
    let mut out = Vec::new();
    if lookback == 0 {
        return out;
    }
    for end in lookback..hours.len() {
        let span = &hours[end - lookback..=end];
        if span.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
            continue;
        }
        let label = hours[end].0;
        if let Some(filter) = target_hours {
            if !filter.contains(&hour_of_day(label)) {
                continue;
            }
        }
        out.push(Window {
            target_label: label,
            inputs: span[..lookback].iter().map(|(_, v)| v.clone()).collect(),
            target: hours[end].1.clone(),
        });
    }
    out
}

/// Scale fitted on every vector appearing in `windows`.
pub fn fit_scale(windows: &[Window]) -> Result<MinMaxScale> {
    MinMaxScale::fit(
        windows
            .iter()
            .flat_map(|w| w.inputs.iter().map(Vec::as_slice).chain(std::iter::once(w.target.as_slice()))),
    )
}

impl LstmModel {
    /// Fresh model for `features`-wide OD vectors.
    pub fn new(
        scale: MinMaxScale,
        lookback: usize,
        hidden_dim: usize,
        dense_dim: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if lookback == 0 || hidden_dim == 0 || dense_dim == Some(0) {
            return Err(Error::config("lookback and layer widths must be positive"));
        }
        let features = scale.dim();
        let arch = Architecture {
            input_dim: features,
            hidden_dim,
            dense_dim,
            output_dim: features,
        };
        Ok(LstmModel {
            lookback,
            scale,
            params: LstmParams::init(arch, seed),
        })
    }

    pub fn normalize_window(&self, w: &Window) -> Sample {
        Sample {
            inputs: w.inputs.iter().map(|x| self.scale.normalize(x)).collect(),
            target: self.scale.normalize(&w.target),
        }
    }

    /// Predicted raw counts for the hour after `sequence`.
    pub fn forward(&self, sequence: &[&[f64]]) -> Result<Vec<f64>> {
        if sequence.len() != self.lookback {
            return Err(Error::shape(format!(
                "model expects {} hours, got {}",
                self.lookback,
                sequence.len()
            )));
        }
        let seq: Vec<Vec<f64>> = sequence
            .iter()
            .map(|x| {
                if x.len() == self.scale.dim() {
                    Ok(self.scale.normalize(x))
                } else {
                    Err(Error::shape(format!(
                        "hour vector has {} features, model expects {}",
                        x.len(),
                        self.scale.dim()
                    )))
                }
            })
            .collect::<Result<_>>()?;
        let out = forward_normalized(&self.params, &seq)?;
        Ok(self.scale.denormalize(&out))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(&mut f).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let doc = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: self.params.architecture(),
            model: self.clone(),
        };
        serde_json::to_writer(&mut out, &doc).map_err(|e| Error::data(e.to_string()))?;
        writeln!(out).map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if doc.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {}", doc.format_version),
            ));
        }
        let arch = doc.model.params.architecture();
        let consistent = arch == doc.architecture
            && doc.model.scale.dim() == arch.input_dim
            && doc.model.scale.max.len() == arch.input_dim
            && arch.output_dim == arch.input_dim
            && LstmParams::zeros(arch)
                .tensors()
                .iter()
                .zip(doc.model.params.tensors())
                .all(|(a, b)| a.len() == b.len());
        if !consistent {
            return Err(Error::format(path, "checkpoint dimensions are inconsistent"));
        }
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    architecture: Architecture,
    model: LstmModel,
}

/// Forecast for the hour after the series ends, as per-second rates.
pub fn predict_peak(model: &LstmModel, history: &OdSeries) -> Result<DemandMatrix> {
    let last = history.last_consecutive(model.lookback)?;
    let counts: Vec<f64> = model.forward(&last)?.into_iter().map(|c| c.max(0.0)).collect();
    let stations = stations_for_pairs(counts.len())
        .ok_or_else(|| Error::shape(format!("{} outputs do not form an OD triangle", counts.len())))?;
    DemandMatrix::from_hourly_counts(stations, &counts)
}

/// Mean of every earlier hour in `series` at the same hour of day as
/// `hour_label`.
pub fn baseline_average(series: &OdSeries, hour_label: i64) -> Result<DemandMatrix> {
    let hod = hour_of_day(hour_label);
    let mut sum = vec![0.0; series.num_features()];
    let mut n = 0usize;
    for (label, v) in series.hours() {
        if *label < hour_label && hour_of_day(*label) == hod {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::data(format!("no history for hour {hod}:00 before label {hour_label}")));
    }
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
    DemandMatrix::from_hourly_counts(series.num_stations(), &mean)
}
