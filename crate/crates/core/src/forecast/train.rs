use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{loss_and_grad, mse, LstmParams, Sample};
use super::{LstmModel, Window};
use crate::error::{Error, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Shuffling seed.
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            batch_size: 35,
            epochs: 500,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

/// Adaptive-moment optimiser with the usual decay constants
/// (beta1 = 0.9, beta2 = 0.999, epsilon = 1e-7).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: LstmParams,
    v: LstmParams,
}

impl Adam {
    pub fn new(like: &LstmParams, lr: f64) -> Self {
        let zeros = LstmParams::zeros(like.architecture());
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut LstmParams, grad: &LstmParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LossCurve {
    /// `epoch,train_mse,valid_mse` lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<loss curve>", e);
        writeln!(out, "epoch,train_mse,valid_mse").map_err(io)?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.train_mse, e.valid_mse).map_err(io)?;
        }
        Ok(())
    }
}

/// Shuffles `items` with `seed` and splits off the first
/// `round(train_fraction * n)` for training.
pub fn split_random<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (items.len() as f64 * train_fraction).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| items[i].clone()).collect();
    (pick(&idx[..n_train]), pick(&idx[n_train..]))
}

/// Mini-batch training on the model's normalised scale. Losses are
/// evaluated on the full training and validation sets after every epoch.
pub fn train(
    mut model: LstmModel,
    train_set: &[Window],
    valid_set: &[Window],
    hyper: Hyper,
) -> Result<(LstmModel, LossCurve)> {
    if !(hyper.learning_rate.is_finite() && hyper.learning_rate >= 0.0) {
        return Err(Error::config(format!(
            "learning rate must be nonnegative, got {}",
            hyper.learning_rate
        )));
    }
    if hyper.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::data("training and validation sets must both be non-empty"));
    }
    let train_s: Vec<Sample> = train_set.iter().map(|w| model.normalize_window(w)).collect();
    let valid_s: Vec<Sample> = valid_set.iter().map(|w| model.normalize_window(w)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam = Adam::new(&model.params, hyper.learning_rate);
    let mut order: Vec<usize> = (0..train_s.len()).collect();
    let mut curve = LossCurve::default();
    let mut batch = Vec::with_capacity(hyper.batch_size);

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_s[i].clone()));
            let (_, grad) = loss_and_grad(&model.params, &batch)?;
            adam.update(&mut model.params, &grad);
        }
        curve.epochs.push(EpochLoss {
            epoch,
            train_mse: mse(&model.params, &train_s)?,
            valid_mse: mse(&model.params, &valid_s)?,
        });
    }
    Ok((model, curve))
}

/// Agreement between forecasts and observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    /// `1 - MAE / mean(observed)`.
    pub mae_accuracy: f64,
    /// Coefficient of determination.
    pub r_squared: f64,
    pub mse: f64,
}

pub fn accuracy(predicted: &[f64], observed: &[f64]) -> Result<Accuracy> {
    if predicted.len() != observed.len() || observed.is_empty() {
        return Err(Error::shape("prediction and observation lengths differ or are empty"));
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let mae = predicted.iter().zip(observed).map(|(p, o)| (p - o).abs()).sum::<f64>() / n;
    let sse: f64 = predicted.iter().zip(observed).map(|(p, o)| (p - o) * (p - o)).sum();
    let sst: f64 = observed.iter().map(|o| (o - mean) * (o - mean)).sum();
    Ok(Accuracy {
        mae_accuracy: 1.0 - mae / mean,
        r_squared: 1.0 - sse / sst,
        mse: sse / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::MinMaxScale;

    fn toy_windows(n: usize) -> Vec<Window> {
        (0..n)
            .map(|i| {
                let base = (i % 7) as f64;
                Window {
                    target_label: i as i64,
                    inputs: (0..4).map(|t| vec![base + t as f64, 2.0 * base, 1.0]).collect(),
                    target: vec![base + 4.0, 2.0 * base, 1.0],
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let w = toy_windows(20);
        let scale = crate::forecast::fit_scale(&w).unwrap();
        let model = LstmModel::new(scale, 4, 6, Some(4), 3).unwrap();
        let hyper = Hyper {
            learning_rate: 0.0,
            epochs: 3,
            ..Hyper::default()
        };
        let (trained, curve) = train(model.clone(), &w[..14], &w[14..], hyper).unwrap();
        assert_eq!(trained, model);
        assert_eq!(curve.epochs.len(), 3);
        assert!(curve.epochs.windows(2).all(|e| e[0].train_mse == e[1].train_mse));
    }

    #[test]
    fn zero_epochs_and_bad_hyper() {
        let w = toy_windows(10);
        let model = LstmModel::new(MinMaxScale::identity(3), 4, 3, None, 1).unwrap();
        let hyper = Hyper {
            epochs: 0,
            ..Hyper::default()
        };
        let (m, curve) = train(model.clone(), &w[..7], &w[7..], hyper).unwrap();
        assert_eq!(m, model);
        assert!(curve.epochs.is_empty());
        let bad = Hyper {
            learning_rate: -1.0,
            ..Hyper::default()
        };
        assert!(train(model.clone(), &w[..7], &w[7..], bad).is_err());
        assert!(train(model, &w, &[], Hyper::default()).is_err());
    }

    #[test]
    fn split_counts_are_exact() {
        let items: Vec<usize> = (0..30).collect();
        let (a, b) = split_random(&items, 0.7, 5);
        assert_eq!((a.len(), b.len()), (21, 9));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, items);
    }

    #[test]
    fn training_is_seed_deterministic_and_reduces_loss() {
        let w = toy_windows(40);
        let scale = crate::forecast::fit_scale(&w).unwrap();
        let model = LstmModel::new(scale, 4, 8, Some(8), 3).unwrap();
        let hyper = Hyper {
            epochs: 40,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 4,
        };
        let (a, ca) = train(model.clone(), &w[..28], &w[28..], hyper).unwrap();
        let (b, cb) = train(model, &w[..28], &w[28..], hyper).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(ca.epochs.last().unwrap().train_mse < 0.5 * ca.epochs[0].train_mse);
    }

    #[test]
    fn accuracy_metrics() {
        let a = accuracy(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.mae_accuracy, 1.0);
        assert_eq!(a.r_squared, 1.0);
        let b = accuracy(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((b.mae_accuracy - (1.0 - (2.0 / 3.0) / 2.0)).abs() < 1e-12);
        assert!(b.r_squared.abs() < 1e-12);
    }
}
