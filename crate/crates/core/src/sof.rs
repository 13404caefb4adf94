//! Linear scalar-on-function regression on MFPC scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{FunctionalData, Grid};
use crate::error::{Error, Result};
use crate::fpca::MfpcaModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SofModel {
    pub alpha: f64,
    /// Coefficients of the first `b.len()` score columns.
    pub b: Vec<f64>,
    pub mfpca: MfpcaModel,
}

/// `α̂ = ȳ`, `b̂_m = Σ y_i ξ_im / Σ ξ_im²` on the first `m` score columns.
///
/// The closed forms equal OLS when the score columns are centred and
/// mutually orthogonal, which holds exactly on the sample the MFPCA was fitted
/// on. A general least-squares solve is run alongside and disagreement beyond
/// `1e-8` (relative) is logged.
pub fn fit_sof(y: &[f64], scores: &DMatrix<f64>, m: usize, mfpca: MfpcaModel) -> Result<SofModel> {
    let n = y.len();
    if scores.nrows() != n {
        return Err(Error::Schema(format!("{} responses for {} score rows", n, scores.nrows())));
    }
    if m == 0 || m > scores.ncols() || m > mfpca.n_components() {
        return Err(Error::Config(format!(
            "cannot fit {m} components from {} scores",
            scores.ncols()
        )));
    }
    if n < m + 1 {
        return Err(Error::Data(format!("{n} samples cannot determine {m} coefficients")));
    }
    let alpha = y.iter().sum::<f64>() / n as f64;
    let mut b = Vec::with_capacity(m);
    for col in 0..m {
        let xi = scores.column(col);
        let ss: f64 = xi.iter().map(|v| v * v).sum();
        if !(ss > 0.0) {
            return Err(Error::Rank { column: col });
        }
        b.push(xi.iter().zip(y).map(|(a, yi)| a * yi).sum::<f64>() / ss);
    }
    if let Some((ols_alpha, ols_b)) = ols(y, scores, m) {
        let scale = 1.0 + b.iter().chain(std::iter::once(&alpha)).fold(0.0f64, |a, v| a.max(v.abs()));
        let gap = b
            .iter()
            .zip(&ols_b)
            .map(|(a, o)| (a - o).abs())
            .fold((alpha - ols_alpha).abs(), f64::max);
        if gap > 1e-8 * scale {
            log::warn!("closed-form SOF coefficients differ from OLS by {gap:.3e}; score columns are not orthogonal");
        }
    }
    Ok(SofModel { alpha, b, mfpca })
}

/// Least squares of `y` on an intercept and the first `m` score columns.
pub fn ols(y: &[f64], scores: &DMatrix<f64>, m: usize) -> Option<(f64, Vec<f64>)> {
    let n = y.len();
    let design = DMatrix::from_fn(n, m + 1, |i, j| if j == 0 { 1.0 } else { scores[(i, j - 1)] });
    let chol = (design.transpose() * &design).cholesky()?;
    let coef = chol.solve(&(design.transpose() * DVector::from_column_slice(y)));
    Some((coef[0], coef.iter().skip(1).cloned().collect()))
}

impl SofModel {
    pub fn n_components(&self) -> usize {
        self.b.len()
    }

    pub fn predict_scores(&self, scores: &DMatrix<f64>) -> Vec<f64> {
        scores
            .row_iter()
            .map(|row| self.alpha + row.iter().zip(&self.b).map(|(x, b)| x * b).sum::<f64>())
            .collect()
    }

    /// Predictions for standardized functional data.
    pub fn predict(&self, fds: &[FunctionalData]) -> Result<Vec<f64>> {
        let scores = self.mfpca.compute_scores(fds)?;
        Ok(self.predict_scores(&scores))
    }

    /// `α̂ + Σ_p ∫ X_p β̂_p` evaluated with the model's quadrature rule.
    pub fn predict_integral(&self, fds: &[FunctionalData]) -> Result<Vec<f64>> {
        let rule = &self.mfpca.rule;
        let betas = self.beta_hat(&rule.grid);
        let n = fds[0].n_samples();
        let mut out = vec![self.alpha; n];
        for (fd, beta) in fds.iter().zip(&betas) {
            let x = fd.eval(&rule.grid);
            for (i, row) in x.row_iter().enumerate() {
                let row: Vec<f64> = row.iter().cloned().collect();
                out[i] += rule.inner(&row, beta);
            }
        }
        Ok(out)
    }

    /// `β̂_p(t) = Σ_m b̂_m ψ_mp(t)` on a grid, one vector per covariate.
    pub fn beta_hat(&self, grid: &Grid) -> Vec<Vec<f64>> {
        let m = self.n_components();
        let b = DVector::from_column_slice(&self.b);
        self.mfpca
            .eval_eigenfunctions(grid)
            .iter()
            .map(|psi| (psi.rows(0, m).transpose() * &b).iter().cloned().collect())
            .collect()
    }
}
