//! Dense feed-forward network with exact reverse-mode gradients.
//!
//! Batches are column-major: an `inputs x batch` matrix holds one sample per
//! column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
    Softmax,
}

impl Activation {
    fn apply(self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Sigmoid => z.map(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Tanh => z.map(f64::tanh),
            Activation::Linear => z.clone(),
            Activation::Softmax => {
                let mut out = z.clone();
                for mut col in out.column_iter_mut() {
                    let max = col.max();
                    col.apply(|v| *v = (*v - max).exp());
                    let total = col.sum();
                    col /= total;
                }
                out
            }
        }
    }

    /// Pulls `∂L/∂a` back to `∂L/∂z` given pre-activation `z` and output `a`.
    fn backward(self, z: &DMatrix<f64>, a: &DMatrix<f64>, grad_a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            // subgradient 0 at the kink
            Activation::Relu => grad_a.zip_map(z, |g, v| if v > 0.0 { g } else { 0.0 }),
            Activation::Sigmoid => grad_a.zip_map(a, |g, s| g * s * (1.0 - s)),
            Activation::Tanh => grad_a.zip_map(a, |g, t| g * (1.0 - t * t)),
            Activation::Linear => grad_a.clone(),
            Activation::Softmax => {
                let mut out = grad_a.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    let s = a.column(j);
                    let dot = s.dot(&grad_a.column(j));
                    for i in 0..col.len() {
                        col[i] = s[i] * (grad_a[(i, j)] - dot);
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `outputs x inputs`.
    #[serde(with = "crate::persist::matrix")]
    pub weights: DMatrix<f64>,
    #[serde(with = "crate::persist::vector")]
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Xavier-uniform weights on `(-a, a)` with `a = √(6 / (fan_in + fan_out))`;
    /// zero biases.
    pub fn xavier<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-bound..bound));
        Self {
            weights,
            bias: DVector::zeros(outputs),
            activation,
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Pre-activations and activations of every layer for one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: DMatrix<f64>,
    pub pre: Vec<DMatrix<f64>>,
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().expect("network has at least one layer")
    }
}

/// Parameter-shaped container, used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub bias: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols())).collect(),
            bias: net.layers.iter().map(|l| DVector::zeros(l.bias.len())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.amax())
            .chain(self.bias.iter().map(|b| b.amax()))
            .fold(0.0, f64::max)
    }
}

impl Mlp {
    /// `widths[0]` is the input dimension; one activation per later width.
    pub fn xavier<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::xavier(w[0], w[1], act, rng))
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> Result<ForwardCache> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = if l == 0 { input } else { &post[l - 1] };
            let mut z = &layer.weights * prev;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            let a = layer.activation.apply(&z);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { layer: l + 1 });
            }
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            input: input.clone(),
            pre,
            post,
        })
    }

    /// First output row for every column of `input`.
    pub fn predict(&self, input: &DMatrix<f64>) -> Result<Vec<f64>> {
        let cache = self.forward(input)?;
        Ok(cache.output().row(0).iter().cloned().collect())
    }

    /// Gradient of the batch-mean squared error `(1/B) Σ (ŷ - y)²`.
    pub fn gradient(&self, cache: &ForwardCache, y: &[f64]) -> Gradients {
        let out = cache.output();
        let batch = y.len() as f64;
        let mut grad_a = DMatrix::from_fn(out.nrows(), out.ncols(), |i, j| {
            if i == 0 {
                2.0 * (out[(0, j)] - y[j]) / batch
            } else {
                0.0
            }
        });
        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let grad_z = layer.activation.backward(&cache.pre[l], &cache.post[l], &grad_a);
            let prev = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grads.weights[l] = &grad_z * prev.transpose();
            grads.bias[l] = grad_z.column_sum();
            if l > 0 {
                grad_a = layer.weights.transpose() * &grad_z;
            }
        }
        grads
    }

    pub fn mse(&self, input: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        let pred = self.predict(input)?;
        Ok(pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64)
    }
}
