//! Functional neural network.
//!
//! The first hidden layer takes functional covariates through weight
//! functions `γ_kp(t) = Σ_m c_kpm ζ_m(t)` expanded on a small B-spline basis.
//! Exchanging the sum and the integral gives
//!
//! ```text
//! ∫ γ_kp(t) X_p(t) dt = Σ_m c_kpm ∫ ζ_m(t) X_p(t) dt
//! ```
//!
//! so once the integrals `∫ ζ_m X_p` are computed for every sample, the
//! functional layer is an ordinary dense layer over those features and the
//! coefficients `c_kpm` are its weights. Everything downstream (backprop,
//! Adam, early stopping) works on a plain [`Mlp`].

mod net;
mod train;
mod tune;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, FunctionalData, Grid, QuadratureRule};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub use net::{Activation, Dense, ForwardCache, Gradients, Mlp};
pub use train::{train_network, TrainHistory, TrainSettings};
pub use tune::{cross_validate, fold_assignment, CvResult, TuneReport, N_FOLDS};

fn default_patience() -> usize {
    20
}

fn default_lr_decay() -> f64 {
    1.0
}

/// Architecture and optimizer settings. `layers[0]` is the width of the
/// functional layer; the last width must be 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnnConfig {
    pub layers: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weight_basis: BSplineBasis,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FnnConfig {
    /// Functional layer of 8 relu neurons, a second relu layer of 8, linear
    /// output; weight functions on 5 cubic B-splines.
    fn default() -> Self {
        Self {
            layers: vec![8, 8, 1],
            activations: vec![Activation::Relu, Activation::Relu, Activation::Linear],
            weight_basis: BSplineBasis::new(4, 5).expect("valid basis"),
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: default_patience(),
            lr_decay: default_lr_decay(),
            seed: 0,
        }
    }
}

impl FnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if *self.layers.last().unwrap() != 1 {
            return Err(Error::Config("the output layer must have width 1".into()));
        }
        if self.activations.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.layers.len()
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and max_epochs must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn settings(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr_decay: self.lr_decay,
            seed,
        }
    }

    /// Xavier-initialized network over `n_inputs` features.
    pub fn init_network(&self, n_inputs: usize, seed: u64) -> Mlp {
        let mut widths = vec![n_inputs];
        widths.extend(&self.layers);
        Mlp::xavier(&widths, &self.activations, &mut stream_rng(seed, &[0]))
    }

    /// Parameter count of the network over `n_inputs` features.
    pub fn n_params(&self, n_inputs: usize) -> usize {
        let mut prev = n_inputs;
        let mut total = 0;
        for &w in &self.layers {
            total += (prev + 1) * w;
            prev = w;
        }
        total
    }
}

/// `B_pᵀ diag(w) Z` for data basis `B_p` and weight basis `Z`, both on the
/// rule's grid: maps data coefficients to the integrals `∫ ζ_m X_p`.
fn integrated_basis(data_basis: &BSplineBasis, weight_basis: &BSplineBasis, rule: &QuadratureRule) -> DMatrix<f64> {
    rule.weighted_gram(&data_basis.eval_basis(&rule.grid), &weight_basis.eval_basis(&rule.grid))
}

/// Features `∫ ζ_m(t) X_ip(t) dt` for every covariate, stacked
/// covariate-major into a `(Σ_p M_p) x n` matrix (one column per sample).
pub fn precompute_functional_features(
    fds: &[FunctionalData],
    weight_bases: &[BSplineBasis],
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    if fds.is_empty() || fds.len() != weight_bases.len() {
        return Err(Error::Schema(format!(
            "{} covariates for {} weight bases",
            fds.len(),
            weight_bases.len()
        )));
    }
    let n = fds[0].n_samples();
    let dim: usize = weight_bases.iter().map(|b| b.n_basis()).sum();
    let mut out = DMatrix::zeros(dim, n);
    let mut offset = 0;
    for (fd, wb) in fds.iter().zip(weight_bases) {
        if fd.n_samples() != n {
            return Err(Error::Schema("covariates have different sample counts".into()));
        }
        let proj = integrated_basis(&fd.basis, wb, rule);
        let block = (&fd.coefficients * proj).transpose();
        out.view_mut((offset, 0), (wb.n_basis(), n)).copy_from(&block);
        offset += wb.n_basis();
    }
    Ok(out)
}

/// Fitted functional neural network. Layer 1 of `net` holds the functional
/// coefficients `c_kpm` in its first `Σ_p M_p` columns, followed by the
/// weights of the scalar covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnModel {
    pub config: FnnConfig,
    pub covariate_ids: Vec<String>,
    pub weight_bases: Vec<BSplineBasis>,
    pub n_scalar: usize,
    pub rule: QuadratureRule,
    pub net: Mlp,
}

impl FnnModel {
    /// Xavier initialization, deterministic in `config.seed`.
    pub fn init(config: &FnnConfig, covariate_ids: Vec<String>, n_scalar: usize, rule: QuadratureRule) -> Result<Self> {
        config.validate()?;
        if covariate_ids.is_empty() {
            return Err(Error::Config("at least one functional covariate is required".into()));
        }
        let weight_bases = vec![config.weight_basis.clone(); covariate_ids.len()];
        let n_inputs = weight_bases.iter().map(|b| b.n_basis()).sum::<usize>() + n_scalar;
        Ok(Self {
            config: config.clone(),
            net: config.init_network(n_inputs, config.seed),
            covariate_ids,
            weight_bases,
            n_scalar,
            rule,
        })
    }

    fn n_functional_inputs(&self) -> usize {
        self.weight_bases.iter().map(|b| b.n_basis()).sum()
    }

    /// Network input: functional features stacked over scalar covariates
    /// (`n_scalar x n`, or `None` when there are none).
    pub fn features(&self, fds: &[FunctionalData], scalars: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        let func = precompute_functional_features(fds, &self.weight_bases, &self.rule)?;
        let n = func.ncols();
        match (scalars, self.n_scalar) {
            (None, 0) => Ok(func),
            (Some(z), j) if z.nrows() == j && z.ncols() == n => {
                let mut x = DMatrix::zeros(func.nrows() + j, n);
                x.rows_mut(0, func.nrows()).copy_from(&func);
                x.rows_mut(func.nrows(), j).copy_from(z);
                Ok(x)
            }
            _ => Err(Error::Schema(format!("model expects {} scalar covariates", self.n_scalar))),
        }
    }

    pub fn predict(&self, fds: &[FunctionalData], scalars: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
        self.net.predict(&self.features(fds, scalars)?)
    }

    /// Trains from the current parameters; returns the best-epoch model.
    pub fn train(
        self,
        train: (&[FunctionalData], Option<&DMatrix<f64>>, &[f64]),
        validation: (&[FunctionalData], Option<&DMatrix<f64>>, &[f64]),
    ) -> Result<(Self, TrainHistory)> {
        let x_train = self.features(train.0, train.1)?;
        let x_val = self.features(validation.0, validation.1)?;
        let settings = self.config.settings(self.config.seed);
        let (net, history) = train_network(self.net.clone(), &x_train, train.2, &x_val, validation.2, &settings)?;
        Ok((Self { net, ..self }, history))
    }

    /// `(Σ_p M_p + J + 1) · n⁽¹⁾`.
    pub fn first_layer_params(&self) -> usize {
        self.net.layers[0].n_params()
    }

    /// Per-neuron weight functions `γ_kp` on a grid: for each covariate an
    /// `n⁽¹⁾ x |grid|` matrix.
    pub fn neuron_weight_functions(&self, grid: &Grid) -> Vec<DMatrix<f64>> {
        let w = &self.net.layers[0].weights;
        let mut offset = 0;
        self.weight_bases
            .iter()
            .map(|b| {
                let k = b.n_basis();
                let c = w.columns(offset, k);
                offset += k;
                c * b.eval_basis(grid).transpose()
            })
            .collect()
    }

    /// Averaged functional weight `γ̂_p(t) = Σ_k γ_kp(t) / n⁽¹⁾` per covariate.
    pub fn functional_weights(&self, grid: &Grid) -> Vec<Vec<f64>> {
        debug_assert_eq!(self.net.layers[0].weights.ncols(), self.n_functional_inputs() + self.n_scalar);
        self.neuron_weight_functions(grid)
            .iter()
            .map(|g| g.row_mean().iter().cloned().collect())
            .collect()
    }
}
