//! B-spline bases, roughness-penalized smoothing and grid quadrature.
//!
//! All functional objects in the crate live on the unit interval. A
//! [`BSplineBasis`] is clamped (order-fold boundary knots) with equally
//! spaced interior knots, and smoothed profiles are stored as basis
//! coefficients in a [`FunctionalData`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered evaluation points on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Config(format!(
                "grid needs at least 4 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("grid contains non-finite points".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("grid must be strictly increasing".into()));
        }
        let (first, last) = (points[0], points[points.len() - 1]);
        if first.abs() > 1e-12 || (last - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "grid must span [0, 1], got [{first}, {last}]"
            )));
        }
        Ok(Self { points })
    }

    /// `n` equally spaced points including both end points.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::Config(format!("grid needs at least 4 points, got {n}")));
        }
        let step = (n - 1) as f64;
        Self::new((0..n).map(|i| i as f64 / step).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let h = 1.0 / (self.len() - 1) as f64;
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        Grid::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.points
    }
}

/// Clamped B-spline basis on `[0, 1]` with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BSplineBasis {
    order: usize,
    n_basis: usize,
    knots: Vec<f64>,
}

/// Serialized form of a basis; knots are rebuilt on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub order: usize,
    pub n_basis: usize,
}

impl TryFrom<BasisSpec> for BSplineBasis {
    type Error = Error;
    fn try_from(spec: BasisSpec) -> Result<Self> {
        BSplineBasis::new(spec.order, spec.n_basis)
    }
}

impl From<BSplineBasis> for BasisSpec {
    fn from(b: BSplineBasis) -> Self {
        BasisSpec {
            order: b.order,
            n_basis: b.n_basis,
        }
    }
}

impl BSplineBasis {
    /// `order` 4 is cubic. Interior knot count is `n_basis - order`.
    pub fn new(order: usize, n_basis: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("spline order must be at least 1".into()));
        }
        if n_basis < order {
            return Err(Error::Config(format!(
                "n_basis ({n_basis}) must be at least the spline order ({order})"
            )));
        }
        let n_interior = n_basis - order;
        let mut knots = Vec::with_capacity(n_basis + order);
        knots.extend(std::iter::repeat_n(0.0, order));
        let segments = (n_interior + 1) as f64;
        knots.extend((1..=n_interior).map(|i| i as f64 / segments));
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            n_basis,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.order..self.n_basis]
    }

    /// Knot span index `i` with `knots[i] <= t < knots[i+1]`; the right end
    /// point is folded into the last non-degenerate span.
    fn find_span(&self, t: f64) -> usize {
        let last = self.n_basis - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        if t <= self.knots[self.order - 1] {
            return self.order - 1;
        }
        let (mut lo, mut hi) = (self.order - 1, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Non-zero basis values of degree `degree` at `t` for the given span,
    /// i.e. functions `span - degree ..= span`.
    fn local_values(&self, span: usize, degree: usize, t: f64) -> Vec<f64> {
        let u = &self.knots;
        let mut values = vec![0.0; degree + 1];
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        values[0] = 1.0;
        for j in 1..=degree {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        values
    }

    /// All `n_basis` values at `t`.
    pub fn eval_point(&self, t: f64) -> Vec<f64> {
        self.eval_deriv_point(t, 0)
    }

    /// All `n_basis` values of the `deriv`-th derivative at `t`.
    pub fn eval_deriv_point(&self, t: f64, deriv: usize) -> Vec<f64> {
        let t = t.clamp(0.0, 1.0);
        if deriv >= self.order {
            return vec![0.0; self.n_basis];
        }
        let span = self.find_span(t);
        let base_order = self.order - deriv;
        let degree = base_order - 1;
        let mut values = vec![0.0; self.knots.len() - base_order];
        for (r, v) in self.local_values(span, degree, t).into_iter().enumerate() {
            values[span - degree + r] = v;
        }
        // raise the order one step at a time through the derivative recurrence
        for k in (base_order + 1)..=self.order {
            let u = &self.knots;
            let scale = (k - 1) as f64;
            values = (0..u.len() - k)
                .map(|i| {
                    let a = u[i + k - 1] - u[i];
                    let b = u[i + k] - u[i + 1];
                    let lhs = if a > 0.0 { values[i] / a } else { 0.0 };
                    let rhs = if b > 0.0 { values[i + 1] / b } else { 0.0 };
                    scale * (lhs - rhs)
                })
                .collect();
        }
        values
    }

    /// `|points| x n_basis` evaluation matrix.
    pub fn eval_points(&self, points: &[f64], deriv: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(points.len(), self.n_basis);
        for (i, &t) in points.iter().enumerate() {
            for (j, v) in self.eval_deriv_point(t, deriv).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn eval_basis(&self, grid: &Grid) -> DMatrix<f64> {
        self.eval_points(grid.points(), 0)
    }

    /// Exact `∫ B_i^(d) B_j^(d) dt` by Gauss-Legendre on every knot span.
    pub fn derivative_gram(&self, deriv: usize) -> DMatrix<f64> {
        let k = self.n_basis;
        let mut gram = DMatrix::zeros(k, k);
        if deriv >= self.order {
            return gram;
        }
        let degree = self.order - 1 - deriv;
        let (nodes, weights) = gauss_legendre(degree + 1);
        for span in self.order - 1..self.n_basis {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in nodes.iter().zip(&weights) {
                let vals = self.eval_deriv_point(mid + half * x, deriv);
                let lo = span + 1 - self.order;
                for i in lo..=span {
                    for j in lo..=span {
                        gram[(i, j)] += half * w * vals[i] * vals[j];
                    }
                }
            }
        }
        gram
    }

    /// Roughness penalty `∫ B_i'' B_j''`.
    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        self.derivative_gram(2)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureMethod {
    Simpson,
    Trapezoid,
}

/// Quadrature weights over a grid on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub grid: Grid,
    pub method: QuadratureMethod,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(grid: &Grid, method: QuadratureMethod) -> Result<Self> {
        let weights = quadrature_weights(grid, method)?;
        Ok(Self {
            grid: grid.clone(),
            method,
            weights,
        })
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// `Σ_j w_j f(t_j) g(t_j)`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// `Bᵀ diag(w) B` for a basis evaluated on this rule's grid.
    pub fn weighted_gram(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = right.clone();
        for (mut row, w) in scaled.row_iter_mut().zip(&self.weights) {
            row *= *w;
        }
        left.transpose() * scaled
    }
}

/// Composite Simpson (trapezoid closure on the last interval for an even
/// point count) or composite trapezoid weights.
pub fn quadrature_weights(grid: &Grid, method: QuadratureMethod) -> Result<Vec<f64>> {
    let t = grid.points();
    let n = t.len();
    let mut w = vec![0.0; n];
    match method {
        QuadratureMethod::Trapezoid => {
            for j in 0..n - 1 {
                let h = t[j + 1] - t[j];
                w[j] += 0.5 * h;
                w[j + 1] += 0.5 * h;
            }
        }
        QuadratureMethod::Simpson => {
            if n < 3 {
                return Err(Error::Config("simpson needs at least 3 points".into()));
            }
            if !grid.is_uniform() {
                return Err(Error::Config(
                    "simpson requires an equally spaced grid; use the trapezoid rule".into(),
                ));
            }
            let h = 1.0 / (n - 1) as f64;
            let intervals = n - 1;
            let simpson_intervals = intervals - intervals % 2;
            for p in (0..simpson_intervals).step_by(2) {
                w[p] += h / 3.0;
                w[p + 1] += 4.0 * h / 3.0;
                w[p + 2] += h / 3.0;
            }
            if simpson_intervals < intervals {
                w[n - 2] += 0.5 * h;
                w[n - 1] += 0.5 * h;
            }
        }
    }
    Ok(w)
}

/// Smoothed profiles of one covariate: one coefficient row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalData {
    pub basis: BSplineBasis,
    #[serde(with = "crate::persist::matrix")]
    pub coefficients: DMatrix<f64>,
    pub covariate_id: String,
}

impl FunctionalData {
    pub fn new(basis: BSplineBasis, coefficients: DMatrix<f64>, covariate_id: impl Into<String>) -> Result<Self> {
        if coefficients.ncols() != basis.n_basis() {
            return Err(Error::Config(format!(
                "coefficient matrix has {} columns, basis has {} functions",
                coefficients.ncols(),
                basis.n_basis()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Data("non-finite basis coefficient".into()));
        }
        Ok(Self {
            basis,
            coefficients,
            covariate_id: covariate_id.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.coefficients.nrows()
    }

    /// `n x |grid|` values.
    pub fn eval(&self, grid: &Grid) -> DMatrix<f64> {
        &self.coefficients * self.basis.eval_basis(grid).transpose()
    }

    pub fn eval_points(&self, points: &[f64]) -> DMatrix<f64> {
        &self.coefficients * self.basis.eval_points(points, 0).transpose()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            basis: self.basis.clone(),
            coefficients: self.coefficients.select_rows(rows),
            covariate_id: self.covariate_id.clone(),
        }
    }
}

/// Inner products `⟨f_i, g_j⟩` of every sample pair under a quadrature rule.
pub fn inner_products(f: &FunctionalData, g: &FunctionalData, rule: &QuadratureRule) -> DMatrix<f64> {
    let bf = f.basis.eval_basis(&rule.grid);
    let bg = g.basis.eval_basis(&rule.grid);
    let gram = rule.weighted_gram(&bf, &bg);
    &f.coefficients * gram * g.coefficients.transpose()
}

/// Smoothing parameter choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Fixed(f64),
    Gcv(Vec<f64>),
}

impl Penalty {
    /// 25 log-spaced values in `[1e-8, 1e2]`.
    pub fn default_gcv() -> Self {
        Penalty::Gcv(log_space(-8.0, 2.0, 25))
    }
}

pub fn log_space(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(lo_exp)];
    }
    (0..n)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Result of [`smooth_profiles`].
#[derive(Debug, Clone)]
pub struct Smoothed {
    pub data: FunctionalData,
    pub lambda: f64,
    pub df: f64,
    pub sse: f64,
    /// `(λ, GCV)` for every candidate; empty in fixed mode.
    pub gcv: Vec<(f64, f64)>,
}

/// Penalized least-squares solver for one design, diagonalized so that
/// every λ costs one diagonal scaling.
struct PenalizedSolver {
    design: DMatrix<f64>,
    kind: SolverKind,
}

enum SolverKind {
    /// `A(λ)^{-1} = T (I + λ D)^{-1} Tᵀ` with `T = L^{-T} U`.
    Diagonal { transform: DMatrix<f64>, eigen: DVector<f64> },
    /// Rank-deficient design; solve `ΦᵀΦ + λR` directly for each λ.
    Direct { gram: DMatrix<f64>, penalty: DMatrix<f64> },
}

impl PenalizedSolver {
    fn new(design: DMatrix<f64>, penalty: &DMatrix<f64>) -> Self {
        let gram = design.transpose() * &design;
        let kind = match (design.nrows() >= design.ncols())
            .then(|| gram.clone().cholesky())
            .flatten()
        {
            Some(chol) => {
                let l = chol.l();
                let l_inv = l
                    .clone()
                    .try_inverse()
                    .expect("cholesky factor is invertible");
                let m = &l_inv * penalty * l_inv.transpose();
                let m = (&m + m.transpose()) * 0.5;
                let eig = SymmetricEigen::new(m);
                let dmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
                // the second-derivative null space is exact; drop rounding noise
                let eigen = eig
                    .eigenvalues
                    .map(|d| if d <= 1e-10 * dmax { 0.0 } else { d });
                SolverKind::Diagonal {
                    transform: l_inv.transpose() * eig.eigenvectors,
                    eigen,
                }
            }
            None => SolverKind::Direct {
                gram,
                penalty: penalty.clone(),
            },
        };
        Self { design, kind }
    }

    /// Coefficients (one row per sample) and effective degrees of freedom.
    fn solve(&self, raw: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, f64)> {
        let rhs = self.design.transpose() * raw.transpose();
        match &self.kind {
            SolverKind::Diagonal { transform, eigen } => {
                let shrink = eigen.map(|d| 1.0 / (1.0 + lambda * d));
                let mut projected = transform.transpose() * rhs;
                for (mut row, s) in projected.row_iter_mut().zip(shrink.iter()) {
                    row *= *s;
                }
                let coefs = transform * projected;
                Ok((coefs.transpose(), shrink.sum()))
            }
            SolverKind::Direct { gram, penalty } => {
                if lambda <= 0.0 {
                    return Err(Error::IllPosed(format!(
                        "unpenalized fit with {} basis functions on {} points",
                        self.design.ncols(),
                        self.design.nrows()
                    )));
                }
                let a = gram + penalty * lambda;
                let chol = a.cholesky().ok_or_else(|| {
                    Error::IllPosed("penalized normal equations are singular".into())
                })?;
                let coefs = chol.solve(&rhs);
                let df = chol.solve(gram).trace();
                Ok((coefs.transpose(), df))
            }
        }
    }
}

fn sum_squared_residuals(raw: &DMatrix<f64>, fitted: &DMatrix<f64>) -> f64 {
    raw.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Roughness-penalized least squares of every row of `raw` (n x C) onto the
/// basis. In GCV mode one λ is shared by all rows and chosen to minimize
/// `C · (SSE/n) / (C - df)²`.
pub fn smooth_profiles(
    raw: &DMatrix<f64>,
    grid: &Grid,
    basis: &BSplineBasis,
    penalty: &Penalty,
    covariate_id: &str,
) -> Result<Smoothed> {
    if raw.ncols() != grid.len() {
        return Err(Error::Config(format!(
            "profiles have {} columns but the grid has {} points",
            raw.ncols(),
            grid.len()
        )));
    }
    if raw.nrows() == 0 {
        return Err(Error::Data("no profiles to smooth".into()));
    }
    let design = basis.eval_basis(grid);
    let solver = PenalizedSolver::new(design.clone(), &basis.penalty_matrix());
    let n_points = grid.len() as f64;
    let n = raw.nrows() as f64;

    let fit = |lambda: f64| -> Result<(DMatrix<f64>, f64, f64)> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("invalid smoothing parameter {lambda}")));
        }
        let (coefs, df) = solver.solve(raw, lambda)?;
        let fitted = &coefs * design.transpose();
        Ok((coefs, df, sum_squared_residuals(raw, &fitted)))
    };

    let (lambda, coefs, df, sse, gcv) = match penalty {
        Penalty::Fixed(lambda) => {
            let (coefs, df, sse) = fit(*lambda)?;
            (*lambda, coefs, df, sse, Vec::new())
        }
        Penalty::Gcv(candidates) => {
            if candidates.is_empty() {
                return Err(Error::Config("empty GCV grid".into()));
            }
            let mut scores = Vec::with_capacity(candidates.len());
            let mut best: Option<(f64, DMatrix<f64>, f64, f64, f64)> = None;
            for &lambda in candidates {
                let (coefs, df, sse) = fit(lambda)?;
                let score = gcv_score(n_points, n, sse, df);
                scores.push((lambda, score));
                if best.as_ref().is_none_or(|b| score < b.4) {
                    best = Some((lambda, coefs, df, sse, score));
                }
            }
            let (lambda, coefs, df, sse, _) = best.expect("non-empty grid");
            (lambda, coefs, df, sse, scores)
        }
    };
    Ok(Smoothed {
        data: FunctionalData::new(basis.clone(), coefs, covariate_id)?,
        lambda,
        df,
        sse,
        gcv,
    })
}

/// Pooled GCV criterion for `n` curves of `n_points` points sharing one λ.
pub fn gcv_score(n_points: f64, n: f64, sse: f64, df: f64) -> f64 {
    let denom = n_points - df;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    n_points * (sse / n) / (denom * denom)
}

/// Smoothing of samples observed on their own point sets. The λ minimizing
/// the summed per-sample GCV is shared by all samples.
pub fn smooth_irregular(
    samples: &[(Vec<f64>, Vec<f64>)],
    basis: &BSplineBasis,
    penalty: &Penalty,
    covariate_id: &str,
) -> Result<Smoothed> {
    if samples.is_empty() {
        return Err(Error::Data("no profiles to smooth".into()));
    }
    let pen = basis.penalty_matrix();
    let solvers: Vec<(PenalizedSolver, DMatrix<f64>)> = samples
        .iter()
        .map(|(t, v)| {
            let design = basis.eval_points(t, 0);
            (
                PenalizedSolver::new(design, &pen),
                DMatrix::from_row_slice(1, v.len(), v),
            )
        })
        .collect();
    let fit_all = |lambda: f64| -> Result<(DMatrix<f64>, f64, f64, f64)> {
        let mut coefs = DMatrix::zeros(samples.len(), basis.n_basis());
        let (mut sse_total, mut df_total, mut gcv_total) = (0.0, 0.0, 0.0);
        for (i, (solver, raw)) in solvers.iter().enumerate() {
            let (c, df) = solver.solve(raw, lambda)?;
            let fitted = &c * solver.design.transpose();
            let sse = sum_squared_residuals(raw, &fitted);
            gcv_total += gcv_score(raw.ncols() as f64, 1.0, sse, df);
            sse_total += sse;
            df_total += df;
            coefs.row_mut(i).copy_from(&c.row(0));
        }
        Ok((coefs, df_total / samples.len() as f64, sse_total, gcv_total))
    };
    let candidates = match penalty {
        Penalty::Fixed(l) => vec![*l],
        Penalty::Gcv(c) if c.is_empty() => return Err(Error::Config("empty GCV grid".into())),
        Penalty::Gcv(c) => c.clone(),
    };
    let mut scores = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>, f64, f64, f64)> = None;
    for lambda in candidates {
        let (coefs, df, sse, gcv) = fit_all(lambda)?;
        scores.push((lambda, gcv));
        if best.as_ref().is_none_or(|b| gcv < b.4) {
            best = Some((lambda, coefs, df, sse, gcv));
        }
    }
    let (lambda, coefs, df, sse, _) = best.expect("at least one candidate");
    if matches!(penalty, Penalty::Fixed(_)) {
        scores.clear();
    }
    Ok(Smoothed {
        data: FunctionalData::new(basis.clone(), coefs, covariate_id)?,
        lambda,
        df,
        sse,
        gcv: scores,
    })
}

/// Frozen smoothing recipe, reapplied to new profiles at monitoring time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    pub basis: BSplineBasis,
    pub lambda: f64,
}

impl Smoother {
    pub fn apply(&self, raw: &DMatrix<f64>, grid: &Grid, covariate_id: &str) -> Result<FunctionalData> {
        Ok(smooth_profiles(raw, grid, &self.basis, &Penalty::Fixed(self.lambda), covariate_id)?.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Textbook recursive Cox-de Boor definition.
    fn cox_de_boor(knots: &[f64], i: usize, k: usize, t: f64) -> f64 {
        if k == 1 {
            return if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let a = knots[i + k - 1] - knots[i];
        if a > 0.0 {
            v += (t - knots[i]) / a * cox_de_boor(knots, i, k - 1, t);
        }
        let b = knots[i + k] - knots[i + 1];
        if b > 0.0 {
            v += (knots[i + k] - t) / b * cox_de_boor(knots, i + 1, k - 1, t);
        }
        v
    }

    #[test]
    fn bernstein_case_interpolates_boundary() {
        let b = BSplineBasis::new(4, 4).unwrap();
        assert!(b.interior_knots().is_empty());
        let v0 = b.eval_point(0.0);
        assert_eq!(v0, vec![1.0, 0.0, 0.0, 0.0]);
        let v1 = b.eval_point(1.0);
        assert_abs_diff_eq!(v1[3], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn simulation_bases_have_expected_size() {
        let smoothing = BSplineBasis::new(4, 30).unwrap();
        assert_eq!(smoothing.interior_knots().len(), 26);
        assert_eq!(smoothing.knots().len(), 34);
        let weights = BSplineBasis::new(4, 5).unwrap();
        assert_eq!(weights.interior_knots(), &[0.5]);
    }

    #[test]
    fn too_few_functions_is_a_config_error() {
        assert!(matches!(BSplineBasis::new(4, 3), Err(Error::Config(_))));
    }

    #[test]
    fn piecewise_constant_is_indicator() {
        let b = BSplineBasis::new(1, 4).unwrap();
        let v = b.eval_point(0.6);
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0]);
        let v = b.eval_point(1.0);
        assert_eq!(v, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn matches_recursive_definition() {
        let b = BSplineBasis::new(4, 6).unwrap();
        for &t in &[0.0, 0.13, 0.5, 0.77, 0.999] {
            let fast = b.eval_point(t);
            for (i, v) in fast.iter().enumerate() {
                let slow = cox_de_boor(b.knots(), i, 4, t);
                assert_abs_diff_eq!(*v, slow, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = BSplineBasis::new(4, 9).unwrap();
        let h = 1e-6;
        for &t in &[0.1, 0.31, 0.62, 0.9] {
            let d1 = b.eval_deriv_point(t, 1);
            let d2 = b.eval_deriv_point(t, 2);
            let (p, m) = (b.eval_point(t + h), b.eval_point(t - h));
            let (dp, dm) = (b.eval_deriv_point(t + h, 1), b.eval_deriv_point(t - h, 1));
            for i in 0..9 {
                assert_abs_diff_eq!(d1[i], (p[i] - m[i]) / (2.0 * h), epsilon = 1e-5);
                assert_abs_diff_eq!(d2[i], (dp[i] - dm[i]) / (2.0 * h), epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn penalty_annihilates_linear_functions() {
        let b = BSplineBasis::new(4, 12).unwrap();
        let r = b.penalty_matrix();
        // coefficients of t in a clamped cubic basis are the Greville abscissae
        let u = b.knots();
        let greville = DVector::from_iterator(12, (0..12).map(|i| (u[i + 1] + u[i + 2] + u[i + 3]) / 3.0));
        let ones = DVector::from_element(12, 1.0);
        assert!((&r * &greville).amax() < 1e-9);
        assert!((&r * &ones).amax() < 1e-9);
    }

    #[test]
    fn simpson_weights_cover_even_grids() {
        let g = Grid::uniform(150).unwrap();
        let w = quadrature_weights(&g, QuadratureMethod::Simpson).unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let five = Grid::uniform(5).unwrap();
        let rule = QuadratureRule::new(&five, QuadratureMethod::Simpson).unwrap();
        let cube: Vec<f64> = five.points().iter().map(|t| t.powi(3)).collect();
        assert_abs_diff_eq!(rule.integrate(&cube), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn simpson_rejects_non_uniform_grid() {
        let g = Grid::new(vec![0.0, 0.1, 0.5, 0.7, 1.0]).unwrap();
        assert!(matches!(
            quadrature_weights(&g, QuadratureMethod::Simpson),
            Err(Error::Config(_))
        ));
        let w = quadrature_weights(&g, QuadratureMethod::Trapezoid).unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inner_product_edge_cases() {
        let g = Grid::uniform(41).unwrap();
        let rule = QuadratureRule::new(&g, QuadratureMethod::Simpson).unwrap();
        let f: Vec<f64> = g.points().iter().map(|t| (3.0 * t).sin()).collect();
        assert_eq!(rule.inner(&f, &vec![0.0; 41]), 0.0);
        assert_abs_diff_eq!(rule.inner(&vec![1.0; 41], &vec![1.0; 41]), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unpenalized_fit_with_too_many_functions_is_ill_posed() {
        let g = Grid::uniform(10).unwrap();
        let b = BSplineBasis::new(4, 14).unwrap();
        let raw = DMatrix::from_fn(2, 10, |i, j| (i + j) as f64);
        assert!(matches!(
            smooth_profiles(&raw, &g, &b, &Penalty::Fixed(0.0), "x"),
            Err(Error::IllPosed(_))
        ));
        // a positive penalty makes the same problem well posed
        assert!(smooth_profiles(&raw, &g, &b, &Penalty::Fixed(1e-3), "x").is_ok());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![0.0, 0.5, 1.0]).is_err());
        assert!(Grid::new(vec![0.0, 0.5, 0.4, 1.0]).is_err());
        assert!(Grid::new(vec![0.1, 0.5, 0.7, 1.0]).is_err());
        assert!(Grid::uniform(150).unwrap().is_uniform());
    }
}
