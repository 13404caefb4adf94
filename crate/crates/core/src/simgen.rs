//! Scenario data for the run-length study.
//!
//! Covariates are Gaussian processes around a polynomial-plus-bumps mean
//! with a Bessel correlation, observed with noise on an equally spaced grid.
//! The response is a function `G` of a linear predictor
//! `L = α + ∫ β(t) X̃(t) dt`, where `X̃` is the smoothed covariate
//! standardized by its population moments. Because smoothing with a fixed
//! λ is linear, `L` is a fixed linear functional of the raw profile, and its
//! population variance is known in closed form; `β` is rescaled so that the
//! linear model hits the target `R²` exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, Grid, QuadratureMethod, QuadratureRule};
use crate::data::{Dataset, ProfileSet};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// `J₀(x)`: power series up to 20, Hankel asymptotics beyond.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 20.0 {
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= -q / (k as f64 * k as f64);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        let y = 8.0 / x;
        let y2 = y * y;
        // P and Q series in (8/x)²
        let p = 1.0 - 0.1098628627e-2 * y2 + 0.2734510407e-4 * y2 * y2 - 0.2073370639e-5 * y2.powi(3)
            + 0.2093887211e-6 * y2.powi(4);
        let q = -0.1562499995e-1 + 0.1430488765e-3 * y2 - 0.6911147651e-5 * y2 * y2
            + 0.7621095161e-6 * y2.powi(3)
            - 0.934935152e-7 * y2.powi(4);
        let chi = x - std::f64::consts::FRAC_PI_4;
        (std::f64::consts::FRAC_2_PI / x).sqrt() * (chi.cos() * p - y * chi.sin() * q)
    }
}

/// `f(z) = a z² + b z + (c + δ) + r Σ_i φ(z; m_i, s_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `(mean, sd)` of each normal-density bump.
    pub bumps: Vec<(f64, f64)>,
    pub r: f64,
    #[serde(default)]
    pub delta: f64,
}

impl Default for MeanModel {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: -0.3,
            c: 0.2,
            bumps: vec![(0.25, 0.05), (0.75, 0.05)],
            r: 0.2,
            delta: 0.0,
        }
    }
}

impl MeanModel {
    pub fn eval(&self, z: f64) -> f64 {
        let bumps: f64 = self
            .bumps
            .iter()
            .map(|&(m, s)| (-0.5 * ((z - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()))
            .sum();
        self.a * z * z + self.b * z + self.c + self.delta + self.r * bumps
    }

    fn validate(&self) -> Result<()> {
        if self.bumps.iter().any(|&(_, s)| !(s > 0.0)) {
            return Err(Error::Config("bump standard deviations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    A,
    B,
    C,
    D,
    E,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [ScenarioKind::A, ScenarioKind::B, ScenarioKind::C, ScenarioKind::D, ScenarioKind::E];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::A => "A",
            ScenarioKind::B => "B",
            ScenarioKind::C => "C",
            ScenarioKind::D => "D",
            ScenarioKind::E => "E",
        }
    }
}

fn default_u() -> f64 {
    2.0
}
fn default_r2() -> f64 {
    0.97
}
fn default_vy() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Offset inside the logarithm of scenario D.
    #[serde(default = "default_u")]
    pub u: f64,
    #[serde(default = "default_r2")]
    pub target_r2: f64,
    #[serde(default)]
    pub mu_y: f64,
    #[serde(default = "default_vy")]
    pub v_y: f64,
    /// Standard deviation of the noise added after `G` in scenarios B-E.
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            u: default_u(),
            target_r2: default_r2(),
            mu_y: 0.0,
            v_y: default_vy(),
            noise_sd: default_noise(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.u > 0.0) {
            return Err(Error::Config("u must be positive".into()));
        }
        if !(self.target_r2 > 0.0 && self.target_r2 < 1.0) || !(self.v_y > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::Config("target R² must lie in (0,1), v_y and noise sd positive".into()));
        }
        Ok(())
    }

    /// `G(L)`.
    pub fn link(&self, l: f64) -> f64 {
        match self.kind {
            ScenarioKind::A => l,
            ScenarioKind::B => l.exp(),
            ScenarioKind::C => l.abs(),
            ScenarioKind::D => (l.abs() + self.u).ln(),
            ScenarioKind::E => l * l,
        }
    }

    /// Sd of the noise added to `G(L)`.
    pub fn response_noise_sd(&self) -> f64 {
        match self.kind {
            ScenarioKind::A => (self.v_y * (1.0 - self.target_r2)).sqrt(),
            _ => self.noise_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// Response shift in multiples of the reference response sd.
    #[serde(default)]
    pub response_shift: f64,
    /// Translation `δ` of the covariate mean.
    #[serde(default)]
    pub covariate_delta: f64,
}

fn default_length_scale() -> f64 {
    0.25
}
fn default_variance() -> f64 {
    1.0
}
fn default_meas_noise() -> f64 {
    0.05
}
fn default_points() -> usize {
    150
}
fn default_smoothing_basis() -> usize {
    30
}
fn default_smoothing_lambda() -> f64 {
    1e-6
}
fn default_beta_weights() -> Vec<f64> {
    vec![1.0, 1.0, 0.5]
}
fn default_true() -> bool {
    true
}

/// Generator constants. Every field has a frozen default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub mean: MeanModel,
    /// Bessel correlation length `ℓ` in `ρ(d) = max(J₀(d/ℓ), 0)`.
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    /// Constant variance function.
    #[serde(default = "default_variance")]
    pub variance: f64,
    #[serde(default = "default_meas_noise")]
    pub measurement_noise_sd: f64,
    #[serde(default = "default_points")]
    pub n_points: usize,
    /// Cubic B-splines used by the smoother inside the true model.
    #[serde(default = "default_smoothing_basis")]
    pub smoothing_basis: usize,
    #[serde(default = "default_smoothing_lambda")]
    pub smoothing_lambda: f64,
    /// Weights of the first covariate eigenfunctions in `β` (before the
    /// `R²` rescaling).
    #[serde(default = "default_beta_weights")]
    pub beta_weights: Vec<f64>,
    /// Re-solve the first weight so that translating a profile by a
    /// constant leaves `L` unchanged.
    #[serde(default = "default_true")]
    pub translation_invariant: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mean: MeanModel::default(),
            length_scale: default_length_scale(),
            variance: default_variance(),
            measurement_noise_sd: default_meas_noise(),
            n_points: default_points(),
            smoothing_basis: default_smoothing_basis(),
            smoothing_lambda: default_smoothing_lambda(),
            beta_weights: default_beta_weights(),
            translation_invariant: true,
        }
    }
}

/// Gaussian-process sampler on a fixed grid.
#[derive(Debug, Clone)]
pub struct CovariateGenerator {
    pub grid: Grid,
    pub mean: MeanModel,
    /// `K = F Fᵀ` after clipping negative eigenvalues.
    factor: DMatrix<f64>,
    /// Covariance of the GP part (clipped), `C x C`.
    pub covariance: DMatrix<f64>,
    pub measurement_noise_sd: f64,
}

impl CovariateGenerator {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.mean.validate()?;
        if !(config.length_scale > 0.0) || !(config.variance > 0.0) || !(config.measurement_noise_sd >= 0.0) {
            return Err(Error::Config("length scale, variance and noise sd must be positive".into()));
        }
        let grid = Grid::uniform(config.n_points)?;
        let t = grid.points();
        let c = t.len();
        let kernel = DMatrix::from_fn(c, c, |i, j| {
            config.variance * bessel_j0((t[i] - t[j]).abs() / config.length_scale).max(0.0)
        });
        let eig = SymmetricEigen::new(kernel.clone());
        let trace: f64 = kernel.trace();
        let clipped: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
        if clipped > 1e-8 * trace {
            log::info!("Bessel gram matrix: clipped negative eigenvalue mass {:.3e} of trace {trace:.3e}", clipped);
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        let covariance = &factor * factor.transpose();
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("covariance factorization failed".into()));
        }
        Ok(Self {
            grid,
            mean: config.mean.clone(),
            factor,
            covariance,
            measurement_noise_sd: config.measurement_noise_sd,
        })
    }

    pub fn mean_values(&self, delta: f64) -> Vec<f64> {
        let m = MeanModel {
            delta: self.mean.delta + delta,
            ..self.mean.clone()
        };
        self.grid.points().iter().map(|&t| m.eval(t)).collect()
    }

    /// `n x C` noisy profiles with the mean translated by `delta`.
    pub fn sample<R: Rng>(&self, n: usize, delta: f64, rng: &mut R) -> DMatrix<f64> {
        let c = self.grid.len();
        let mu = self.mean_values(delta);
        let mut out = DMatrix::zeros(n, c);
        for i in 0..n {
            let z = DVector::from_fn(c, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = &self.factor * z;
            for j in 0..c {
                let e: f64 = rng.sample(StandardNormal);
                out[(i, j)] = mu[j] + g[j] + self.measurement_noise_sd * e;
            }
        }
        out
    }
}

/// The true linear predictor `L(x) = α + vᵀ (x - μ)` on raw profiles.
#[derive(Debug, Clone)]
pub struct TruthModel {
    pub alpha: f64,
    /// Functional weights on the raw grid (smoother and standardization
    /// folded in).
    pub v: DVector<f64>,
    /// `β(t)` on the grid after rescaling, acting on the standardized
    /// smoothed covariate.
    pub beta: Vec<f64>,
    /// Population sd of the smoothed covariate at each grid point.
    pub smoothed_sd: Vec<f64>,
    /// Smoother hat matrix `H` (`C x C`).
    pub hat: DMatrix<f64>,
    pub rule: QuadratureRule,
    pub mean: Vec<f64>,
    /// Population variance of `L`.
    pub var_l: f64,
}

impl TruthModel {
    pub fn build(config: &SimConfig, gen: &CovariateGenerator, scenario: &ScenarioSpec) -> Result<Self> {
        scenario.validate()?;
        let grid = &gen.grid;
        let c = grid.len();
        let rule = QuadratureRule::new(grid, QuadratureMethod::Simpson)?;
        let basis = BSplineBasis::new(4, config.smoothing_basis)?;
        let b = basis.eval_basis(grid);
        let normal = b.transpose() * &b + basis.penalty_matrix() * config.smoothing_lambda;
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::IllPosed("truth smoother is singular".into()))?;
        let hat = &b * chol.solve(&b.transpose());

        let total = &gen.covariance + DMatrix::identity(c, c) * gen.measurement_noise_sd.powi(2);
        let smoothed_cov = &hat * &total * hat.transpose();
        let smoothed_sd: Vec<f64> = (0..c).map(|j| smoothed_cov[(j, j)].sqrt()).collect();

        // covariate eigenfunctions under the quadrature inner product
        let w_half = DVector::from_iterator(c, rule.weights.iter().map(|w| w.sqrt()));
        let scaled = DMatrix::from_fn(c, c, |i, j| w_half[i] * gen.covariance[(i, j)] * w_half[j]);
        let eig = SymmetricEigen::new(scaled);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        if config.beta_weights.is_empty() || config.beta_weights.len() > c {
            return Err(Error::Config("beta needs between 1 and |grid| eigenfunction weights".into()));
        }
        let psis: Vec<Vec<f64>> = (0..config.beta_weights.len())
            .map(|k| {
                let u = eig.eigenvectors.column(order[k]);
                let psi: Vec<f64> = (0..c).map(|j| u[j] / w_half[j].max(f64::MIN_POSITIVE)).collect();
                let pivot = psi.iter().cloned().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap_or(1.0);
                psi.iter().map(|v| v * pivot.signum()).collect()
            })
            .collect();
        // effect of a unit translation on L for each eigenfunction
        let shift_effect = |psi: &[f64]| -> f64 { (0..c).map(|j| rule.weights[j] * psi[j] / smoothed_sd[j]).sum() };
        let mut weights = config.beta_weights.clone();
        if config.translation_invariant {
            if weights.len() < 2 {
                return Err(Error::Config("translation invariance needs at least two eigenfunction weights".into()));
            }
            let rest: f64 = weights.iter().zip(&psis).skip(1).map(|(w, p)| w * shift_effect(p)).sum();
            let first = shift_effect(&psis[0]);
            if first.abs() < 1e-12 {
                return Err(Error::Calibration("first eigenfunction has no translation effect to balance".into()));
            }
            weights[0] = -rest / first;
        }
        let mut beta = vec![0.0; c];
        for (weight, psi) in weights.iter().zip(&psis) {
            for j in 0..c {
                beta[j] += weight * psi[j];
            }
        }
        let raw_v = |beta: &[f64]| -> DVector<f64> {
            let g = DVector::from_fn(c, |j, _| rule.weights[j] * beta[j] / smoothed_sd[j]);
            hat.transpose() * g
        };
        let v0 = raw_v(&beta);
        let var0 = (v0.transpose() * &total * &v0)[(0, 0)];
        if !(var0 > 1e-12) {
            return Err(Error::Calibration("the linear predictor has zero variance".into()));
        }
        let target = scenario.v_y * scenario.target_r2;
        let scale = (target / var0).sqrt();
        let beta: Vec<f64> = beta.iter().map(|b| b * scale).collect();
        let v = v0 * scale;
        let var_l = (v.transpose() * &total * &v)[(0, 0)];
        Ok(Self {
            alpha: scenario.mu_y,
            v,
            beta,
            smoothed_sd,
            hat,
            rule,
            mean: gen.mean_values(0.0),
            var_l,
        })
    }

    /// `L` for every row of raw, unshifted profiles.
    pub fn linear_predictor(&self, raw: &DMatrix<f64>) -> Vec<f64> {
        raw.row_iter()
            .map(|row| {
                self.alpha
                    + row
                        .iter()
                        .zip(&self.mean)
                        .zip(self.v.iter())
                        .map(|((x, m), v)| (x - m) * v)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Set sizes `(train, validation, tuning, out-of-control)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sizes {
    pub train: usize,
    pub validation: usize,
    pub tuning: usize,
    pub oc: usize,
}

impl Sizes {
    pub const PAPER: Sizes = Sizes { train: 4000, validation: 1000, tuning: 10000, oc: 20000 };
    pub const DESK: Sizes = Sizes { train: 1000, validation: 250, tuning: 2000, oc: 4000 };
}

/// Draws covariates and responses for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioGenerator {
    pub scenario: ScenarioSpec,
    pub covariates: CovariateGenerator,
    pub truth: TruthModel,
}

/// A generated set before any response shift. `base` holds unshifted
/// profiles that produced `y`; `profiles` carry the covariate translation.
#[derive(Debug, Clone)]
pub struct GeneratedSet {
    pub data: Dataset,
    pub linear_predictor: Vec<f64>,
}

impl ScenarioGenerator {
    pub fn new(config: &SimConfig, scenario: ScenarioSpec) -> Result<Self> {
        let covariates = CovariateGenerator::new(config)?;
        let truth = TruthModel::build(config, &covariates, &scenario)?;
        Ok(Self { scenario, covariates, truth })
    }

    /// Responses `G(L) + ε` for linear-predictor values.
    pub fn responses<R: Rng>(&self, l: &[f64], rng: &mut R) -> Vec<f64> {
        let sd = self.scenario.response_noise_sd();
        l.iter()
            .map(|&v| self.scenario.link(v) + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `n` samples from stream `seed`. The covariates are translated by
    /// `delta` after the response is produced from the untranslated draw,
    /// so the same seed gives the same responses for any `delta`.
    pub fn generate(&self, label: &str, n: usize, delta: f64, seed: u64) -> Result<GeneratedSet> {
        let mut x_rng = stream_rng(seed, &[0]);
        let mut y_rng = stream_rng(seed, &[1]);
        let mut raw = self.covariates.sample(n, 0.0, &mut x_rng);
        let l = self.truth.linear_predictor(&raw);
        let y = self.responses(&l, &mut y_rng);
        if delta != 0.0 {
            raw.add_scalar_mut(delta);
        }
        let ids = (0..n).map(|i| format!("{label}-{i:06}")).collect();
        let profiles = ProfileSet::new(self.covariates.grid.clone(), vec!["x".into()], vec![raw])?;
        Ok(GeneratedSet {
            data: Dataset::new(ids, profiles, y)?,
            linear_predictor: l,
        })
    }
}

/// Train, validation and tuning sets (in control) plus an out-of-control set.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub train: Dataset,
    pub validation: Dataset,
    pub tuning: Dataset,
    pub oc: Dataset,
    /// Sample sd of the training response.
    pub s_y: f64,
}

/// Sample standard deviation (`n - 1`).
pub fn sample_sd(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Adds `multiple · s_y` to every response.
pub fn shift_response(data: &Dataset, multiple: f64, s_y: f64) -> Dataset {
    let mut out = data.clone();
    for v in &mut out.y {
        *v += multiple * s_y;
    }
    out
}

/// The four sets of one study cell. Each set has its own RNG stream; the
/// out-of-control set depends on `seed` and the shift only.
pub fn make_datasets(gen: &ScenarioGenerator, shift: &ShiftSpec, sizes: Sizes, seed: u64) -> Result<ScenarioData> {
    if sizes.train < 2 || sizes.validation == 0 || sizes.tuning == 0 || sizes.oc == 0 {
        return Err(Error::Config("every set needs at least one sample (two for training)".into()));
    }
    let train = gen.generate("train", sizes.train, 0.0, crate::rng::derive_seed(seed, &[10]))?;
    let validation = gen.generate("val", sizes.validation, 0.0, crate::rng::derive_seed(seed, &[11]))?;
    let tuning = gen.generate("tune", sizes.tuning, 0.0, crate::rng::derive_seed(seed, &[12]))?;
    let oc = gen.generate("oc", sizes.oc, shift.covariate_delta, crate::rng::derive_seed(seed, &[13]))?;
    let s_y = sample_sd(&train.data.y);
    Ok(ScenarioData {
        oc: shift_response(&oc.data, shift.response_shift, s_y),
        train: train.data,
        validation: validation.data,
        tuning: tuning.data,
        s_y,
    })
}
