//! Shewhart-type control charts on the response or on prediction residuals.
//!
//! Phase I freezes every preprocessing step (smoothing λ, standardization,
//! fitted predictor) together with the control limits; Phase II applies the
//! frozen recipe to new observations one at a time.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, FunctionalData, Grid, Penalty, QuadratureMethod, QuadratureRule, Smoother};
use crate::basis::smooth_profiles;
use crate::data::{Dataset, ProfileSet};
use crate::error::{Error, Result};
use crate::fnn::{cross_validate, train_network, FnnConfig, FnnModel, Mlp, TrainHistory, TuneReport};
use crate::fpca::{fit_mfpca, select_components_press, standardize, StandardizationFns};
use crate::sof::{fit_sof, SofModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChartKind {
    #[serde(rename = "SCC")]
    Scc,
    #[serde(rename = "FRCC")]
    Frcc,
    #[serde(rename = "FNNCC")]
    Fnncc,
    #[serde(rename = "RawdataMLPCC")]
    RawdataMlpcc,
    #[serde(rename = "BsplineMLPCC")]
    BsplineMlpcc,
}

impl ChartKind {
    pub const ALL: [ChartKind; 5] = [
        ChartKind::Scc,
        ChartKind::Frcc,
        ChartKind::Fnncc,
        ChartKind::RawdataMlpcc,
        ChartKind::BsplineMlpcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChartKind::Scc => "SCC",
            ChartKind::Frcc => "FRCC",
            ChartKind::Fnncc => "FNNCC",
            ChartKind::RawdataMlpcc => "RawdataMLPCC",
            ChartKind::BsplineMlpcc => "BsplineMLPCC",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown chart kind {name:?}")))
    }
}

/// Smoothing recipe frozen at Phase I: one smoother per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub grid: Grid,
    pub covariate_ids: Vec<String>,
    pub smoothers: Vec<Smoother>,
}

impl Preprocessing {
    /// Chooses λ per covariate on `profiles` and returns the smoothed data.
    pub fn fit(profiles: &ProfileSet, basis: &BSplineBasis, penalty: &Penalty) -> Result<(Self, Vec<FunctionalData>)> {
        let mut smoothers = Vec::new();
        let mut fds = Vec::new();
        for (values, id) in profiles.values.iter().zip(&profiles.covariate_ids) {
            let s = smooth_profiles(values, &profiles.grid, basis, penalty, id)?;
            smoothers.push(Smoother {
                basis: basis.clone(),
                lambda: s.lambda,
            });
            fds.push(s.data);
        }
        Ok((
            Self {
                grid: profiles.grid.clone(),
                covariate_ids: profiles.covariate_ids.clone(),
                smoothers,
            },
            fds,
        ))
    }

    pub fn smooth(&self, profiles: &ProfileSet) -> Result<Vec<FunctionalData>> {
        profiles.check_compatible(&self.grid, &self.covariate_ids)?;
        self.smoothers
            .iter()
            .zip(profiles.values.iter().zip(&self.covariate_ids))
            .map(|(s, (v, id))| s.apply(v, &self.grid, id))
            .collect()
    }
}

/// Column means and `1/n` standard deviations of a feature matrix
/// (`dims x n`), used to scale dense-network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.ncols() as f64;
        let mut center = Vec::with_capacity(x.nrows());
        let mut scale = Vec::with_capacity(x.nrows());
        for row in x.row_iter() {
            let m = row.sum() / n;
            let s = (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            center.push(m);
            scale.push(if s > 1e-12 { s } else { 1.0 });
        }
        Self { center, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.center[i]) / self.scale[i])
    }
}

/// The model behind a chart, with its frozen preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// No model: the chart monitors the response itself.
    None,
    Sof {
        preprocessing: Preprocessing,
        model: SofModel,
    },
    Fnn {
        preprocessing: Preprocessing,
        standardization: StandardizationFns,
        model: FnnModel,
    },
    /// Dense network on pointwise-standardized raw grid values.
    RawdataMlp {
        grid: Grid,
        covariate_ids: Vec<String>,
        standardization: StandardizationFns,
        net: Mlp,
    },
    /// Dense network on scaled smoothing coefficients.
    BsplineMlp {
        preprocessing: Preprocessing,
        scaling: FeatureScaling,
        net: Mlp,
    },
}

fn raw_inputs(standardization: &StandardizationFns, profiles: &ProfileSet) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> = profiles
        .values
        .iter()
        .enumerate()
        .map(|(p, v)| standardization.standardize_values(p, v))
        .collect();
    stack_transposed(&blocks)
}

fn coefficient_inputs(fds: &[FunctionalData]) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> = fds.iter().map(|f| f.coefficients.clone()).collect();
    stack_transposed(&blocks)
}

/// Stacks `n x d_p` blocks into a `(Σ d_p) x n` column-per-sample matrix.
fn stack_transposed(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let dim: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(dim, n);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((offset, 0), (b.ncols(), n)).copy_from(&b.transpose());
        offset += b.ncols();
    }
    out
}

impl Predictor {
    pub fn chart_kind(&self) -> ChartKind {
        match self {
            Predictor::None => ChartKind::Scc,
            Predictor::Sof { .. } => ChartKind::Frcc,
            Predictor::Fnn { .. } => ChartKind::Fnncc,
            Predictor::RawdataMlp { .. } => ChartKind::RawdataMlpcc,
            Predictor::BsplineMlp { .. } => ChartKind::BsplineMlpcc,
        }
    }

    /// Predicted responses, or `None` for the response chart.
    pub fn predict(&self, profiles: &ProfileSet) -> Result<Option<Vec<f64>>> {
        let out = match self {
            Predictor::None => return Ok(None),
            Predictor::Sof { preprocessing, model } => {
                let fds = model.mfpca.standardization.apply(&preprocessing.smooth(profiles)?)?;
                model.predict(&fds)?
            }
            Predictor::Fnn {
                preprocessing,
                standardization,
                model,
            } => {
                let fds = standardization.apply(&preprocessing.smooth(profiles)?)?;
                model.predict(&fds, None)?
            }
            Predictor::RawdataMlp {
                grid,
                covariate_ids,
                standardization,
                net,
            } => {
                profiles.check_compatible(grid, covariate_ids)?;
                net.predict(&raw_inputs(standardization, profiles))?
            }
            Predictor::BsplineMlp {
                preprocessing,
                scaling,
                net,
            } => {
                let x = coefficient_inputs(&preprocessing.smooth(profiles)?);
                net.predict(&scaling.apply(&x))?
            }
        };
        Ok(Some(out))
    }
}

/// Phase I options shared by all predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseOneOptions {
    pub smoothing_basis: usize,
    pub penalty: Penalty,
    pub quadrature: QuadratureMethod,
    /// Relative PRESS reduction required to keep another component.
    pub press_threshold: f64,
    pub max_components: Option<usize>,
}

impl Default for PhaseOneOptions {
    fn default() -> Self {
        Self {
            smoothing_basis: 30,
            penalty: Penalty::default_gcv(),
            quadrature: QuadratureMethod::Simpson,
            press_threshold: 0.01,
            max_components: None,
        }
    }
}

/// Smoothed and standardized training and validation data, computed once
/// and shared by every predictor fitted on them.
#[derive(Debug, Clone)]
pub struct PhaseOne {
    pub train: Dataset,
    pub validation: Dataset,
    pub options: PhaseOneOptions,
    pub preprocessing: Preprocessing,
    pub rule: QuadratureRule,
    pub standardization: StandardizationFns,
    pub train_smoothed: Vec<FunctionalData>,
    pub val_smoothed: Vec<FunctionalData>,
    pub train_std: Vec<FunctionalData>,
    pub val_std: Vec<FunctionalData>,
}

impl PhaseOne {
    pub fn new(train: Dataset, validation: Dataset, options: PhaseOneOptions) -> Result<Self> {
        let basis = BSplineBasis::new(4, options.smoothing_basis)?;
        let (preprocessing, train_smoothed) = Preprocessing::fit(&train.profiles, &basis, &options.penalty)?;
        let val_smoothed = preprocessing.smooth(&validation.profiles)?;
        let (train_std, standardization) = standardize(&train_smoothed, &preprocessing.grid)?;
        let val_std = standardization.apply(&val_smoothed)?;
        let rule = QuadratureRule::new(&preprocessing.grid, options.quadrature)?;
        Ok(Self {
            train,
            validation,
            options,
            preprocessing,
            rule,
            standardization,
            train_smoothed,
            val_smoothed,
            train_std,
            val_std,
        })
    }

    /// Linear scalar-on-function model with the PRESS-selected number of
    /// components (at least one).
    pub fn sof(&self) -> Result<Predictor> {
        let mfpca = fit_mfpca(&self.train_std, self.standardization.clone(), &self.rule, self.options.max_components)?;
        let scores = mfpca.compute_scores(&self.train_std)?;
        let (m, _) = select_components_press(&self.train.y, &scores, self.options.press_threshold, None)?;
        let m = m.max(1);
        log::info!("linear model keeps {m} principal components");
        let model = fit_sof(&self.train.y, &scores, m, mfpca)?;
        Ok(Predictor::Sof {
            preprocessing: self.preprocessing.clone(),
            model,
        })
    }

    pub fn fnn(&self, config: &FnnConfig) -> Result<(Predictor, TrainHistory)> {
        let ids = self.preprocessing.covariate_ids.clone();
        let model = FnnModel::init(config, ids, 0, self.rule.clone())?;
        let (model, history) = model.train(
            (&self.train_std, None, &self.train.y),
            (&self.val_std, None, &self.validation.y),
        )?;
        Ok((
            Predictor::Fnn {
                preprocessing: self.preprocessing.clone(),
                standardization: self.standardization.clone(),
                model,
            },
            history,
        ))
    }

    /// 5-fold grid search of FNN configurations on the training set.
    pub fn tune_fnn(&self, grid: &[FnnConfig], seed: u64) -> Result<TuneReport> {
        let ids = self.preprocessing.covariate_ids.clone();
        cross_validate(grid, &self.train.y, seed, |cfg| {
            FnnModel::init(cfg, ids.clone(), 0, self.rule.clone())?.features(&self.train_std, None)
        })
    }

    pub fn rawdata_mlp(&self, config: &FnnConfig) -> Result<(Predictor, TrainHistory)> {
        config.validate()?;
        let grid = self.train.profiles.grid.clone();
        let standardization = StandardizationFns::from_values(&grid, &self.train.profiles.values)?;
        let xt = raw_inputs(&standardization, &self.train.profiles);
        let xv = raw_inputs(&standardization, &self.validation.profiles);
        let net = config.init_network(xt.nrows(), config.seed);
        let (net, history) = train_network(net, &xt, &self.train.y, &xv, &self.validation.y, &config.settings(config.seed))?;
        Ok((
            Predictor::RawdataMlp {
                grid,
                covariate_ids: self.train.profiles.covariate_ids.clone(),
                standardization,
                net,
            },
            history,
        ))
    }

    pub fn bspline_mlp(&self, config: &FnnConfig) -> Result<(Predictor, TrainHistory)> {
        config.validate()?;
        let xt = coefficient_inputs(&self.train_smoothed);
        let scaling = FeatureScaling::fit(&xt);
        let xt = scaling.apply(&xt);
        let xv = scaling.apply(&coefficient_inputs(&self.val_smoothed));
        let net = config.init_network(xt.nrows(), config.seed);
        let (net, history) = train_network(net, &xt, &self.train.y, &xv, &self.validation.y, &config.settings(config.seed))?;
        Ok((
            Predictor::BsplineMlp {
                preprocessing: self.preprocessing.clone(),
                scaling,
                net,
            },
            history,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Response,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlChart {
    pub kind: ChartKind,
    pub lcl: f64,
    pub ucl: f64,
    pub alpha: f64,
    pub statistic: Statistic,
    pub n_tuning: usize,
    pub predictor: Predictor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub id: String,
    pub statistic: f64,
    pub lcl: f64,
    pub ucl: f64,
    pub signal: bool,
}

/// `q`-quantile `s_(⌈nq⌉)` of an ascending sample (inverse empirical CDF).
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((n as f64 * q) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

impl ControlChart {
    /// Limits at the `α/2` and `1 - α/2` empirical quantiles of the tuning
    /// statistics.
    pub fn build(predictor: Predictor, tuning: &Dataset, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let n = tuning.len();
        if (n as f64) < 2.0 / alpha {
            return Err(Error::Config(format!(
                "{n} tuning samples cannot estimate the {alpha}/2 tail quantile; need at least {}",
                (2.0 / alpha).ceil()
            )));
        }
        if (n as f64) < 10.0 / alpha {
            log::warn!("only {n} tuning samples for alpha = {alpha}; at least {} are recommended", (10.0 / alpha).ceil());
        }
        let statistic = match predictor {
            Predictor::None => Statistic::Response,
            _ => Statistic::Residual,
        };
        let mut chart = Self {
            kind: predictor.chart_kind(),
            lcl: f64::NEG_INFINITY,
            ucl: f64::INFINITY,
            alpha,
            statistic,
            n_tuning: n,
            predictor,
        };
        let mut stats = chart.statistics(tuning)?;
        if stats.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("non-finite tuning statistic".into()));
        }
        stats.sort_by(f64::total_cmp);
        chart.lcl = empirical_quantile(&stats, alpha / 2.0);
        chart.ucl = empirical_quantile(&stats, 1.0 - alpha / 2.0);
        if !(chart.lcl < chart.ucl) {
            return Err(Error::Degenerate(format!(
                "control limits coincide at {}; the tuning statistic is constant",
                chart.lcl
            )));
        }
        Ok(chart)
    }

    /// Monitored statistic: `y` or `y - ŷ`.
    pub fn statistics(&self, data: &Dataset) -> Result<Vec<f64>> {
        Ok(match self.predictor.predict(&data.profiles)? {
            None => data.y.clone(),
            Some(pred) => data.y.iter().zip(pred).map(|(y, p)| y - p).collect(),
        })
    }

    /// Strictly outside `[lcl, ucl]`.
    pub fn signals(&self, value: f64) -> bool {
        value < self.lcl || value > self.ucl
    }

    pub fn points(&self, ids: &[String], statistics: &[f64]) -> Vec<ChartPoint> {
        ids.iter()
            .zip(statistics)
            .map(|(id, &s)| ChartPoint {
                id: id.clone(),
                statistic: s,
                lcl: self.lcl,
                ucl: self.ucl,
                signal: self.signals(s),
            })
            .collect()
    }

    pub fn monitor(&self, data: &Dataset) -> Result<Vec<ChartPoint>> {
        Ok(self.points(&data.ids, &self.statistics(data)?))
    }
}

/// Chart points as CSV with columns `id,statistic,lcl,ucl,signal`.
pub fn write_chart_points<W: Write>(points: &[ChartPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chart_points<R: std::io::Read>(reader: R) -> Result<Vec<ChartPoint>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
