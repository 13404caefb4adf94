//! Empirical standardization and multivariate functional principal
//! component analysis.
//!
//! The covariance operator of the standardized coefficient process is
//! discretized through the quadrature Gram matrix `G = Bᵀ diag(w) B`; the
//! symmetric problem `G^½ Σ G^½ u = λ u` is solved and eigenfunction
//! coefficients are recovered as `a = G^-½ u`, which makes them orthonormal
//! under the same quadrature rule used for scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, FunctionalData, Grid, QuadratureRule};
use crate::error::{Error, Result};

/// Pointwise mean and standard deviation functions, one per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationFns {
    pub grid: Grid,
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

impl StandardizationFns {
    /// Pointwise moments of grid values (`n x C` per covariate). The SD
    /// uses the `1/n` normalization.
    pub fn from_values(grid: &Grid, values: &[DMatrix<f64>]) -> Result<Self> {
        let mut mean = Vec::with_capacity(values.len());
        let mut sd = Vec::with_capacity(values.len());
        for (p, v) in values.iter().enumerate() {
            let n = v.nrows();
            if n < 2 {
                return Err(Error::Degenerate("standardization needs at least 2 samples".into()));
            }
            let mu: Vec<f64> = v.column_iter().map(|c| c.sum() / n as f64).collect();
            let s: Vec<f64> = v
                .column_iter()
                .zip(&mu)
                .map(|(c, m)| (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt())
                .collect();
            let scale = mu.iter().map(|m| m.abs()).fold(1.0, f64::max);
            if let Some(j) = s.iter().position(|&x| !(x > 1e-12 * scale)) {
                return Err(Error::Degenerate(format!(
                    "covariate {p} has zero pointwise variance at grid point {j}"
                )));
            }
            mean.push(mu);
            sd.push(s);
        }
        Ok(Self {
            grid: grid.clone(),
            mean,
            sd,
        })
    }

    pub fn standardize_values(&self, p: usize, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            (values[(i, j)] - self.mean[p][j]) / self.sd[p][j]
        })
    }

    pub fn unstandardize_values(&self, p: usize, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            values[(i, j)] * self.sd[p][j] + self.mean[p][j]
        })
    }

    /// Standardizes on the grid and re-projects onto each input's basis.
    pub fn apply(&self, fds: &[FunctionalData]) -> Result<Vec<FunctionalData>> {
        if fds.len() != self.mean.len() {
            return Err(Error::Schema(format!(
                "{} covariates, standardization fitted on {}",
                fds.len(),
                self.mean.len()
            )));
        }
        fds.iter()
            .enumerate()
            .map(|(p, fd)| {
                let z = self.standardize_values(p, &fd.eval(&self.grid));
                project(&fd.basis, &self.grid, &z, &fd.covariate_id)
            })
            .collect()
    }
}

/// Unpenalized least-squares projection of grid values onto a basis.
pub fn project(basis: &BSplineBasis, grid: &Grid, values: &DMatrix<f64>, id: &str) -> Result<FunctionalData> {
    let b = basis.eval_basis(grid);
    let chol = (b.transpose() * &b)
        .cholesky()
        .ok_or_else(|| Error::IllPosed("basis is not identifiable on the grid".into()))?;
    let coefs = chol.solve(&(b.transpose() * values.transpose())).transpose();
    FunctionalData::new(basis.clone(), coefs, id)
}

/// Fits the standardization on `fds` and applies it.
pub fn standardize(fds: &[FunctionalData], grid: &Grid) -> Result<(Vec<FunctionalData>, StandardizationFns)> {
    let values: Vec<DMatrix<f64>> = fds.iter().map(|fd| fd.eval(grid)).collect();
    let fns = StandardizationFns::from_values(grid, &values)?;
    let out = fns.apply(fds)?;
    Ok((out, fns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfpcaModel {
    /// Non-increasing, non-negative.
    pub eigenvalues: Vec<f64>,
    /// Per covariate, an `M x K_p` matrix whose row `m` holds the basis
    /// coefficients of `ψ_mp`.
    #[serde(with = "matrix_list")]
    pub eigenfunctions: Vec<DMatrix<f64>>,
    pub bases: Vec<BSplineBasis>,
    pub covariate_ids: Vec<String>,
    pub standardization: StandardizationFns,
    pub rule: QuadratureRule,
}

pub(crate) mod matrix_list {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "crate::persist::matrix")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|m| Wrapped(m.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Ok(Vec::<Wrapped>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

fn block_grams(bases: &[BSplineBasis], rule: &QuadratureRule) -> Vec<DMatrix<f64>> {
    bases
        .iter()
        .map(|b| {
            let e = b.eval_basis(&rule.grid);
            rule.weighted_gram(&e, &e)
        })
        .collect()
}

fn concat_coefficients(fds: &[FunctionalData]) -> DMatrix<f64> {
    let n = fds[0].n_samples();
    let dim: usize = fds.iter().map(|f| f.basis.n_basis()).sum();
    let mut c = DMatrix::zeros(n, dim);
    let mut offset = 0;
    for fd in fds {
        let k = fd.basis.n_basis();
        c.view_mut((0, offset), (n, k)).copy_from(&fd.coefficients);
        offset += k;
    }
    c
}

fn sym_sqrt_and_inv(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&d| d <= 1e-14 * max) {
        return Err(Error::IllPosed(
            "quadrature Gram matrix is singular; use a finer grid".into(),
        ));
    }
    let v = &eig.eigenvectors;
    let sqrt = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    let inv = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|d| 1.0 / d.sqrt())) * v.transpose();
    Ok((sqrt, inv))
}

/// Eigen-decomposition of the covariance operator of standardized data.
/// `max_components` defaults to `min(n - 1, total basis dimension)`.
pub fn fit_mfpca(
    fds: &[FunctionalData],
    standardization: StandardizationFns,
    rule: &QuadratureRule,
    max_components: Option<usize>,
) -> Result<MfpcaModel> {
    if fds.is_empty() {
        return Err(Error::Config("no covariates".into()));
    }
    let n = fds[0].n_samples();
    if n < 2 || fds.iter().any(|f| f.n_samples() != n) {
        return Err(Error::Data("need at least 2 samples per covariate, equal across covariates".into()));
    }
    let coefs = concat_coefficients(fds);
    if coefs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Data("non-finite covariance".into()));
    }
    let dim = coefs.ncols();
    let max_m = max_components.unwrap_or(dim).min(n - 1).min(dim);
    if max_m == 0 {
        return Err(Error::Config("no components to retain".into()));
    }
    let bases: Vec<BSplineBasis> = fds.iter().map(|f| f.basis.clone()).collect();
    let grams = block_grams(&bases, rule);
    let mut gram = DMatrix::zeros(dim, dim);
    let mut offset = 0;
    for g in &grams {
        let k = g.nrows();
        gram.view_mut((offset, offset), (k, k)).copy_from(g);
        offset += k;
    }
    let (g_half, g_inv_half) = sym_sqrt_and_inv(&gram)?;

    let mean = coefs.row_mean();
    let mut centered = coefs.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let h = &g_half * cov * &g_half;
    let h = (&h + h.transpose()) * 0.5;
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite covariance".into()));
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = Vec::with_capacity(max_m);
    let mut coef_rows = DMatrix::zeros(max_m, dim);
    for (m, &idx) in order.iter().take(max_m).enumerate() {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        let mut a: DVector<f64> = &g_inv_half * eig.eigenvectors.column(idx);
        let pivot = a.iter().cloned().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap_or(1.0);
        if pivot < 0.0 {
            a = -a;
        }
        coef_rows.row_mut(m).copy_from(&a.transpose());
    }
    let mut eigenfunctions = Vec::with_capacity(fds.len());
    let mut offset = 0;
    for b in &bases {
        let k = b.n_basis();
        eigenfunctions.push(coef_rows.columns(offset, k).into_owned());
        offset += k;
    }
    Ok(MfpcaModel {
        eigenvalues,
        eigenfunctions,
        bases,
        covariate_ids: fds.iter().map(|f| f.covariate_id.clone()).collect(),
        standardization,
        rule: rule.clone(),
    })
}

impl MfpcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    fn grams(&self) -> Vec<DMatrix<f64>> {
        block_grams(&self.bases, &self.rule)
    }

    /// `Σ_p ⟨ψ_ap, ψ_bp⟩` for every pair of retained components.
    pub fn eigenfunction_gram(&self) -> DMatrix<f64> {
        self.grams()
            .iter()
            .zip(&self.eigenfunctions)
            .map(|(g, a)| a * g * a.transpose())
            .fold(DMatrix::zeros(self.n_components(), self.n_components()), |acc, x| acc + x)
    }

    /// Eigenfunction values on a grid, one `M x |grid|` matrix per covariate.
    pub fn eval_eigenfunctions(&self, grid: &Grid) -> Vec<DMatrix<f64>> {
        self.bases
            .iter()
            .zip(&self.eigenfunctions)
            .map(|(b, a)| a * b.eval_basis(grid).transpose())
            .collect()
    }

    /// Scores `ξ_im = Σ_p ⟨X_ip, ψ_mp⟩` of already standardized data.
    pub fn compute_scores(&self, fds: &[FunctionalData]) -> Result<DMatrix<f64>> {
        if fds.len() != self.bases.len() {
            return Err(Error::Schema(format!(
                "{} covariates, model fitted on {}",
                fds.len(),
                self.bases.len()
            )));
        }
        let n = fds[0].n_samples();
        let mut scores = DMatrix::zeros(n, self.n_components());
        for (((fd, a), g), basis) in fds.iter().zip(&self.eigenfunctions).zip(self.grams()).zip(&self.bases) {
            if &fd.basis != basis || fd.n_samples() != n {
                return Err(Error::Schema("functional data basis differs from the model basis".into()));
            }
            scores += &fd.coefficients * g * a.transpose();
        }
        Ok(scores)
    }

    /// Truncated expansion `Σ_{m ≤ M} ξ_im ψ_mp` (standardized scale).
    pub fn reconstruct(&self, scores: &DMatrix<f64>, m: usize) -> Result<Vec<FunctionalData>> {
        if m > self.n_components() || m > scores.ncols() {
            return Err(Error::Config(format!(
                "cannot reconstruct with {m} of {} components",
                self.n_components()
            )));
        }
        self.bases
            .iter()
            .zip(&self.eigenfunctions)
            .zip(&self.covariate_ids)
            .map(|((b, a), id)| {
                let coefs = scores.columns(0, m) * a.rows(0, m);
                FunctionalData::new(b.clone(), coefs, id.clone())
            })
            .collect()
    }
}

/// Integrated squared distance per sample, summed over covariates.
pub fn integrated_squared_error(a: &[FunctionalData], b: &[FunctionalData], rule: &QuadratureRule) -> Vec<f64> {
    let n = a[0].n_samples();
    let mut out = vec![0.0; n];
    for (fa, fb) in a.iter().zip(b) {
        let diff = fa.eval(&rule.grid) - fb.eval(&rule.grid);
        for (i, row) in diff.row_iter().enumerate() {
            out[i] += row.iter().zip(&rule.weights).map(|(d, w)| w * d * d).sum::<f64>();
        }
    }
    out
}

/// Leave-one-out PRESS of the least-squares fit of `y` on an intercept and
/// the first `m` score columns, through `e_i / (1 - h_ii)`.
pub fn press(y: &[f64], scores: &DMatrix<f64>, m: usize) -> Result<f64> {
    let n = y.len();
    let design = DMatrix::from_fn(n, m + 1, |i, j| if j == 0 { 1.0 } else { scores[(i, j - 1)] });
    let xtx = design.transpose() * &design;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Rank { column: m.saturating_sub(1) })?;
    let yv = DVector::from_column_slice(y);
    let coef = chol.solve(&(design.transpose() * &yv));
    let resid = &yv - &design * coef;
    let inv = chol.inverse();
    let mut total = 0.0;
    for i in 0..n {
        let x = design.row(i).transpose();
        let h = (x.transpose() * &inv * &x)[(0, 0)];
        total += (resid[i] / (1.0 - h)).powi(2);
    }
    Ok(total)
}

/// Number of components to retain from the PRESS curve `P(0..=max)`: the
/// smallest `M` such that no larger count lowers PRESS by at least
/// `reduction_threshold` relative to `P(M)`. Zero means the intercept-only
/// model is preferred. Values below `1e-12 · P(0)` count as zero, so an
/// exact fit is not improved upon by rounding noise.
pub fn select_components_press(
    y: &[f64],
    scores: &DMatrix<f64>,
    reduction_threshold: f64,
    max_components: Option<usize>,
) -> Result<(usize, Vec<f64>)> {
    let n = y.len();
    if n < 10 {
        return Err(Error::Data(format!("PRESS selection needs at least 10 samples, got {n}")));
    }
    if !(0.0..1.0).contains(&reduction_threshold) {
        return Err(Error::Config("PRESS reduction threshold must lie in [0, 1)".into()));
    }
    let max_m = max_components
        .unwrap_or(scores.ncols())
        .min(scores.ncols())
        .min(n - 2);
    let curve: Vec<f64> = (0..=max_m).map(|m| press(y, scores, m)).collect::<Result<_>>()?;
    let floor = 1e-12 * curve[0];
    let selected = (0..=max_m)
        .find(|&m| {
            let target = (1.0 - reduction_threshold) * curve[m] - floor;
            curve[m] <= floor || curve[m + 1..].iter().all(|&later| later > target)
        })
        .unwrap_or(max_m);
    Ok((selected, curve))
}
