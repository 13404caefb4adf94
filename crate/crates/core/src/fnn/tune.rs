//! K-fold grid search over network configurations.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::train_network;
use super::FnnConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

pub const N_FOLDS: usize = 5;

/// Fraction of each training fold held back for early stopping.
const INNER_VALIDATION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config_index: usize,
    /// `Σ_b Σ_{i ∈ S_b} (ŷ_i - y_i)² / N`; infinite when any fold diverged.
    pub cv_mse: f64,
    pub n_params: usize,
    /// Out-of-fold prediction for every sample, `NaN` for diverged folds.
    pub predictions: Vec<f64>,
    pub diverged_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best: usize,
    pub folds: Vec<usize>,
    pub results: Vec<CvResult>,
}

impl TuneReport {
    pub fn best_result(&self) -> &CvResult {
        &self.results[self.best]
    }
}

/// Fold index of every sample, from a seeded shuffle.
pub fn fold_assignment(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &[2]));
    let mut folds = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        folds[i] = rank % N_FOLDS;
    }
    folds
}

fn fold_predictions(
    config: &FnnConfig,
    x: &DMatrix<f64>,
    y: &[f64],
    folds: &[usize],
    fold: usize,
    stream: u64,
) -> Result<Vec<(usize, f64)>> {
    let held_out: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == fold).collect();
    let mut fit: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != fold).collect();
    fit.shuffle(&mut stream_rng(stream, &[5]));
    let n_val = ((fit.len() as f64 * INNER_VALIDATION).round() as usize).clamp(1, fit.len() - 1);
    let (val, train) = fit.split_at(n_val);
    let pick = |idx: &[usize]| (x.select_columns(idx), idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let (xt, yt) = pick(train);
    let (xv, yv) = pick(val);
    let net = config.init_network(x.nrows(), stream);
    let (net, _) = train_network(net, &xt, &yt, &xv, &yv, &config.settings(stream))?;
    let pred = net.predict(&x.select_columns(&held_out))?;
    Ok(held_out.into_iter().zip(pred).collect())
}

/// Scores every configuration by 5-fold cross-validated MSE. `features`
/// maps a configuration to its network input (`dims x N`), which lets the
/// weight basis vary across the grid. Ties go to the configuration with
/// fewer parameters, then to the earlier one.
pub fn cross_validate<F>(configs: &[FnnConfig], y: &[f64], seed: u64, features: F) -> Result<TuneReport>
where
    F: Fn(&FnnConfig) -> Result<DMatrix<f64>> + Sync,
{
    if configs.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    if y.len() < 50 {
        return Err(Error::Data(format!("cross-validation needs at least 50 samples, got {}", y.len())));
    }
    for c in configs {
        c.validate()?;
    }
    let folds = fold_assignment(y.len(), seed);
    let inputs: Vec<DMatrix<f64>> = configs.iter().map(&features).collect::<Result<_>>()?;
    for x in &inputs {
        if x.ncols() != y.len() {
            return Err(Error::Schema(format!("{} feature columns for {} responses", x.ncols(), y.len())));
        }
    }

    let cells: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..N_FOLDS).map(move |f| (c, f)))
        .collect();
    let outcomes: Vec<Result<Vec<(usize, f64)>>> = cells
        .par_iter()
        .map(|&(c, f)| {
            let stream = derive_seed(seed, &[3, c as u64, f as u64]);
            fold_predictions(&configs[c], &inputs[c], y, &folds, f, stream)
        })
        .collect();

    let mut results: Vec<CvResult> = configs
        .iter()
        .enumerate()
        .map(|(c, cfg)| CvResult {
            config_index: c,
            cv_mse: 0.0,
            n_params: cfg.n_params(inputs[c].nrows()),
            predictions: vec![f64::NAN; y.len()],
            diverged_folds: Vec::new(),
        })
        .collect();
    for (&(c, f), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(pairs) => {
                for (i, p) in pairs {
                    results[c].predictions[i] = p;
                }
            }
            Err(Error::Diverged { .. } | Error::Numeric { .. }) => {
                log::warn!("configuration {c} diverged on fold {f}");
                results[c].diverged_folds.push(f);
            }
            Err(e) => return Err(e),
        }
    }
    for r in &mut results {
        r.cv_mse = if r.diverged_folds.is_empty() {
            let sse: f64 = r.predictions.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
            if sse.is_finite() {
                sse / y.len() as f64
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
    }
    let best = results
        .iter()
        .min_by(|a, b| {
            a.cv_mse
                .total_cmp(&b.cv_mse)
                .then(a.n_params.cmp(&b.n_params))
                .then(a.config_index.cmp(&b.config_index))
        })
        .map(|r| r.config_index)
        .expect("non-empty grid");
    Ok(TuneReport { best, folds, results })
}
