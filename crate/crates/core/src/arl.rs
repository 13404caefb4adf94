//! Average run length estimation and the scenario study.
//!
//! For a Shewhart chart on independent observations the run length is
//! geometric with the per-point signal probability `p`, so `ARL = 1/p` and
//! the out-of-control sample is used through `p̂` alone. [`run_lengths`]
//! walks a signal sequence explicitly for cross-checking on small cases.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::{ChartKind, ControlChart, PhaseOne, PhaseOneOptions, Predictor};
use crate::error::{Error, Result};
use crate::fnn::{FnnConfig, TrainHistory, TuneReport};
use crate::rng::derive_seed;
use crate::simgen::{make_datasets, ScenarioGenerator, ScenarioKind, ScenarioSpec, ShiftSpec, SimConfig, Sizes};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlStats {
    pub p_hat: f64,
    pub arl: f64,
    pub se_arl: f64,
    /// No signal was observed; `p̂` is set to `1/(n+1)`.
    pub censored: bool,
}

/// `p̂ = signals/n`, `ARL = 1/p̂`, `se = √(p̂(1-p̂)/n) / p̂²`.
pub fn estimate_arl(signals: &[bool]) -> Result<ArlStats> {
    let n = signals.len();
    if n == 0 {
        return Err(Error::Data("no out-of-control observations".into()));
    }
    let k = signals.iter().filter(|&&s| s).count();
    let censored = k == 0;
    let p = if censored { 1.0 / (n + 1) as f64 } else { k as f64 / n as f64 };
    Ok(ArlStats {
        p_hat: p,
        arl: 1.0 / p,
        se_arl: (p * (1.0 - p) / n as f64).sqrt() / (p * p),
        censored,
    })
}

/// Completed run lengths when the sequence is monitored from the start and
/// restarted after every signal. A trailing run without a signal is dropped.
pub fn run_lengths(signals: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut current = 0;
    for &s in signals {
        current += 1;
        if s {
            out.push(current);
            current = 0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArlEstimate {
    pub scenario: String,
    pub chart: ChartKind,
    pub shift_multiple: f64,
    pub covariate_delta: f64,
    pub n_oc: usize,
    pub p_hat: f64,
    pub arl: f64,
    pub se_arl: f64,
    pub censored: bool,
    /// `ok`, or the error code of a cell that could not be estimated.
    pub status: String,
}

/// How the FNN architecture is chosen in each scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FnnSelection {
    Fixed(FnnConfig),
    /// 5-fold grid search on the training set.
    Tune(Vec<FnnConfig>),
}

fn default_shifts() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, 2.0]
}
fn default_deltas() -> Vec<f64> {
    vec![0.0, 0.5]
}
fn default_charts() -> Vec<ChartKind> {
    vec![ChartKind::Scc, ChartKind::Frcc, ChartKind::Fnncc]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_sizes() -> Sizes {
    Sizes::DESK
}
fn default_fnn() -> FnnSelection {
    FnnSelection::Fixed(FnnConfig::default())
}
fn default_scenarios() -> Vec<ScenarioKind> {
    ScenarioKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<ScenarioKind>,
    /// Response shifts in multiples of the reference sd; 0 estimates ARL₀.
    #[serde(default = "default_shifts")]
    pub shifts: Vec<f64>,
    #[serde(default = "default_deltas")]
    pub covariate_deltas: Vec<f64>,
    #[serde(default = "default_charts")]
    pub charts: Vec<ChartKind>,
    #[serde(default = "default_sizes")]
    pub sizes: Sizes,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub phase_one: PhaseOneOptions,
    #[serde(default = "default_fnn")]
    pub fnn: FnnSelection,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            shifts: default_shifts(),
            covariate_deltas: default_deltas(),
            charts: default_charts(),
            sizes: default_sizes(),
            alpha: default_alpha(),
            seed: 0,
            simulation: SimConfig::default(),
            phase_one: PhaseOneOptions::default(),
            fnn: default_fnn(),
        }
    }
}

/// Everything produced for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: ScenarioKind,
    pub s_y: f64,
    pub fnn_config: Option<FnnConfig>,
    pub tuning: Option<TuneReport>,
    pub histories: Vec<(ChartKind, TrainHistory)>,
    pub charts: Vec<std::result::Result<ControlChart, String>>,
    pub estimates: Vec<ArlEstimate>,
}

fn build_predictor(
    kind: ChartKind,
    phase: &PhaseOne,
    config: Option<&FnnConfig>,
) -> Result<(Predictor, Option<TrainHistory>)> {
    let cfg = || config.ok_or_else(|| Error::Config("no network configuration".into()));
    Ok(match kind {
        ChartKind::Scc => (Predictor::None, None),
        ChartKind::Frcc => (phase.sof()?, None),
        ChartKind::Fnncc => {
            let (p, h) = phase.fnn(cfg()?)?;
            (p, Some(h))
        }
        ChartKind::RawdataMlpcc => {
            let (p, h) = phase.rawdata_mlp(cfg()?)?;
            (p, Some(h))
        }
        ChartKind::BsplineMlpcc => {
            let (p, h) = phase.bspline_mlp(cfg()?)?;
            (p, Some(h))
        }
    })
}

/// Trains every chart once for `scenario` and estimates its ARL at every
/// (covariate shift, response shift) pair of the study.
pub fn run_scenario(config: &StudyConfig, scenario: ScenarioKind) -> Result<ScenarioOutcome> {
    let cell_seed = derive_seed(config.seed, &[scenario as u64]);
    let gen = ScenarioGenerator::new(&config.simulation, ScenarioSpec::new(scenario))?;
    let data = make_datasets(&gen, &ShiftSpec::default(), config.sizes, cell_seed)?;
    let phase = PhaseOne::new(data.train, data.validation, config.phase_one.clone())?;

    let needs_network = config.charts.iter().any(|k| !matches!(k, ChartKind::Scc | ChartKind::Frcc));
    let (fnn_config, tuning) = match (&config.fnn, needs_network) {
        (_, false) => (None, None),
        (FnnSelection::Fixed(c), true) => (Some(c.clone()), None),
        (FnnSelection::Tune(grid), true) => {
            let report = phase.tune_fnn(grid, derive_seed(cell_seed, &[20]))?;
            log::info!(
                "scenario {}: configuration {} selected, CV-MSE {:.4}",
                scenario.name(),
                report.best,
                report.best_result().cv_mse
            );
            (Some(grid[report.best].clone()), Some(report))
        }
    };

    let mut histories = Vec::new();
    let mut charts = Vec::new();
    for &kind in &config.charts {
        let chart = build_predictor(kind, &phase, fnn_config.as_ref()).and_then(|(p, h)| {
            if let Some(h) = h {
                histories.push((kind, h));
            }
            ControlChart::build(p, &data.tuning, config.alpha)
        });
        if let Err(e) = &chart {
            log::warn!("scenario {}: {} chart failed: {e}", scenario.name(), kind.name());
        }
        charts.push(chart.map_err(|e| e.code().to_string()));
    }

    let mut estimates = Vec::new();
    for &delta in &config.covariate_deltas {
        let oc = gen.generate("oc", config.sizes.oc, delta, derive_seed(cell_seed, &[13]))?.data;
        for (kind, chart) in config.charts.iter().zip(&charts) {
            let stats = chart.as_ref().map_err(|e| e.clone()).and_then(|c| {
                c.statistics(&oc).map(|s| (c, s)).map_err(|e| e.code().to_string())
            });
            for &m in &config.shifts {
                let row = |stats: Option<ArlStats>, status: String| ArlEstimate {
                    scenario: scenario.name().to_string(),
                    chart: *kind,
                    shift_multiple: m,
                    covariate_delta: delta,
                    n_oc: oc.len(),
                    p_hat: stats.map_or(f64::NAN, |s| s.p_hat),
                    arl: stats.map_or(f64::NAN, |s| s.arl),
                    se_arl: stats.map_or(f64::NAN, |s| s.se_arl),
                    censored: stats.is_some_and(|s| s.censored),
                    status,
                };
                match &stats {
                    Ok((c, s)) => {
                        let signals: Vec<bool> = s.iter().map(|v| c.signals(v + m * data.s_y)).collect();
                        estimates.push(row(Some(estimate_arl(&signals)?), "ok".into()));
                    }
                    Err(code) => estimates.push(row(None, code.clone())),
                }
            }
        }
    }
    Ok(ScenarioOutcome {
        scenario,
        s_y: data.s_y,
        fnn_config,
        tuning,
        histories,
        charts,
        estimates,
    })
}

/// All scenarios of the study, run concurrently. Output order follows the
/// configuration regardless of scheduling.
pub fn run_study(config: &StudyConfig) -> Result<Vec<ScenarioOutcome>> {
    if config.shifts.is_empty() || config.charts.is_empty() || config.covariate_deltas.is_empty() {
        return Err(Error::Config("study needs at least one shift, chart and covariate delta".into()));
    }
    config.scenarios.par_iter().map(|&s| run_scenario(config, s)).collect()
}

pub fn write_estimates<W: Write>(estimates: &[ArlEstimate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in estimates {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates<R: std::io::Read>(reader: R) -> Result<Vec<ArlEstimate>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const PALETTE: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

/// Line plot of ARL against shift multiple, one series per chart, for one
/// scenario and covariate delta.
pub fn render_svg(estimates: &[ArlEstimate], scenario: &str, delta: f64) -> String {
    let rows: Vec<&ArlEstimate> = estimates
        .iter()
        .filter(|e| e.scenario == scenario && e.covariate_delta == delta && e.arl.is_finite())
        .collect();
    let (w, h, margin) = (480.0, 320.0, 50.0);
    let x_max = rows.iter().map(|e| e.shift_multiple).fold(0.0, f64::max).max(1e-9);
    let y_max = rows.iter().map(|e| e.arl).fold(1.0, f64::max) * 1.05;
    let sx = |x: f64| margin + x / x_max * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - y / y_max * (h - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">Scenario {scenario}, covariate shift {delta}</text>"#,
        w / 2.0
    );
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(x_max), sy(y_max));
    let _ = writeln!(svg, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, x0 - 4.0, sy(v) + 4.0);
    }
    let mut shifts: Vec<f64> = rows.iter().map(|e| e.shift_multiple).collect();
    shifts.sort_by(f64::total_cmp);
    shifts.dedup();
    for s in &shifts {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{s}</text>"#, sx(*s), y0 + 15.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">shift (multiples of response sd)</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(svg, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">ARL</text>"#, h / 2.0, h / 2.0);

    let mut kinds: Vec<ChartKind> = Vec::new();
    for e in &rows {
        if !kinds.contains(&e.chart) {
            kinds.push(e.chart);
        }
    }
    for (i, kind) in kinds.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut series: Vec<&&ArlEstimate> = rows.iter().filter(|e| e.chart == *kind).collect();
        series.sort_by(|a, b| a.shift_multiple.total_cmp(&b.shift_multiple));
        let path: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(j, e)| format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, sx(e.shift_multiple), sy(e.arl)))
            .collect();
        let _ = writeln!(svg, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, path.join(" "));
        for e in &series {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(e.shift_multiple), sy(e.arl));
        }
        let ly = 40.0 + 14.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - 130.0, w - 110.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, w - 105.0, ly + 4.0, kind.name());
    }
    svg.push_str("</svg>\n");
    svg
}
