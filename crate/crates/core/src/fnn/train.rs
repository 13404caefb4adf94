//! Mini-batch Adam with validation early stopping.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{Gradients, Mlp};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement tolerated before stopping.
    pub patience: usize,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

/// Per-epoch losses. Index 0 holds the losses at initialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn new(net: &Mlp) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }

    fn update(&mut self, net: &mut Mlp, g: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let grads = g.weights[l].iter().chain(g.bias[l].iter());
            let ms = self.m.weights[l].iter_mut().chain(self.m.bias[l].iter_mut());
            let vs = self.v.weights[l].iter_mut().chain(self.v.bias[l].iter_mut());
            for (((p, &gi), m), v) in params.zip(grads).zip(ms).zip(vs) {
                *m = BETA1 * *m + (1.0 - BETA1) * gi;
                *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
            }
        }
    }
}

fn columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_columns(idx)
}

/// Trains `net` on column-major inputs. Returns the parameters of the epoch
/// with the lowest validation MSE.
pub fn train_network(
    mut net: Mlp,
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    y_val: &[f64],
    settings: &TrainSettings,
) -> Result<(Mlp, TrainHistory)> {
    if y_train.is_empty() || y_val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    if settings.batch_size == 0 || !(settings.learning_rate > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let mut shuffle_rng = stream_rng(settings.seed, &[1]);
    let mut adam = Adam::new(&net);
    let mut history = TrainHistory::default();
    let start_val = net.mse(x_val, y_val).unwrap_or(f64::INFINITY);
    history.train_mse.push(net.mse(x_train, y_train).unwrap_or(f64::INFINITY));
    history.val_mse.push(start_val);
    let mut best = (start_val, net.clone(), 0usize);
    let mut waited = 0usize;
    let mut order: Vec<usize> = (0..y_train.len()).collect();
    let mut lr = settings.learning_rate;

    for epoch in 1..=settings.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(settings.batch_size) {
            let xb = columns(x_train, chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y_train[i]).collect();
            let cache = match net.forward(&xb) {
                Ok(c) => c,
                Err(_) => {
                    history.train_mse.push(f64::NAN);
                    history.val_mse.push(f64::NAN);
                    history.stopped_epoch = epoch;
                    return Err(Error::Diverged { epoch, history: Box::new(history) });
                }
            };
            let g = net.gradient(&cache, &yb);
            adam.update(&mut net, &g, lr);
        }
        lr *= settings.lr_decay;
        let train = net.mse(x_train, y_train).unwrap_or(f64::NAN);
        let val = net.mse(x_val, y_val).unwrap_or(f64::NAN);
        history.train_mse.push(train);
        history.val_mse.push(val);
        history.stopped_epoch = epoch;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, history: Box::new(history) });
        }
        if val < best.0 {
            best = (val, net.clone(), epoch);
            waited = 0;
        } else {
            waited += 1;
            if waited > settings.patience {
                break;
            }
        }
    }
    history.best_epoch = best.2;
    Ok((best.1, history))
}
