use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use fnncc_core::arl::{render_svg, run_study, write_estimates, ArlEstimate, StudyConfig};
use fnncc_core::charts::{write_chart_points, ChartKind, ControlChart, PhaseOne, Predictor};
use fnncc_core::io::{
    ingest, load_dataset, load_profile_records, load_response_records, profiles_to_records, save_dataset,
    save_profile_records, split_dataset,
};
use fnncc_core::persist::{self, write_atomic, KIND_CHART, KIND_PREDICTOR, KIND_TUNE_REPORT};
use fnncc_core::simgen::{make_datasets, ScenarioGenerator, ScenarioSpec, ShiftSpec};
use fnncc_core::{Dataset, Error, FunctionalData, Grid, Result};

use crate::config::{
    self, BuildChartConfig, DataPaths, ExportConfig, IngestConfig, MonitorConfig, SimulateConfig, TrainConfig,
    TuneConfig,
};
use crate::Command;

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Context {
    fn load<T: DeserializeOwned>(&self) -> Result<T> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("this subcommand needs --config".into()))?;
        config::load(path)
    }

    fn load_or_default<T: DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.config {
            Some(path) => config::load(path),
            None => Ok(T::default()),
        }
    }

    /// Directory that relative paths inside the configuration refer to.
    fn base(&self) -> PathBuf {
        self.config
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn dataset(&self, paths: &DataPaths) -> Result<Dataset> {
        let p = paths.resolve(&self.base());
        load_dataset(&p.profiles, &p.responses)
    }

    fn save_dataset(&self, prefix: &str, data: &Dataset) -> Result<()> {
        save_dataset(
            data,
            &self.out(&format!("{prefix}_profiles.csv")),
            &self.out(&format!("{prefix}_responses.csv")),
        )
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
        write_atomic(&self.out(name), text.as_bytes())
    }
}

pub fn run(command: Command, ctx: &Context) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    match command {
        Command::Simulate => simulate(ctx),
        Command::Ingest => ingest_profiles(ctx),
        Command::Tune => tune(ctx),
        Command::Train => train(ctx),
        Command::BuildChart => build_chart(ctx),
        Command::Monitor => monitor(ctx),
        Command::ArlStudy => arl_study(ctx),
        Command::ExportWeights => export_weights(ctx),
    }
}

fn simulate(ctx: &Context) -> Result<()> {
    let mut c: SimulateConfig = ctx.load()?;
    if let Some(s) = ctx.seed {
        c.seed = s;
    }
    let spec = c.scenario_spec.clone().unwrap_or_else(|| ScenarioSpec::new(c.scenario));
    if spec.kind != c.scenario {
        return Err(Error::Config(format!(
            "scenario_spec is for {}, not {}",
            spec.kind.name(),
            c.scenario.name()
        )));
    }
    let gen = ScenarioGenerator::new(&c.simulation, spec)?;
    let shift = ShiftSpec {
        response_shift: c.response_shift,
        covariate_delta: c.covariate_delta,
    };
    let data = make_datasets(&gen, &shift, c.sizes, c.seed)?;
    ctx.save_dataset("train", &data.train)?;
    ctx.save_dataset("validation", &data.validation)?;
    ctx.save_dataset("tuning", &data.tuning)?;
    ctx.save_dataset("oc", &data.oc)?;
    ctx.write_json(
        "simulation.json",
        &serde_json::json!({ "config": c, "s_y": data.s_y }),
    )
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    ids: &'a [String],
    lambdas: &'a [f64],
    functional: &'a [FunctionalData],
}

fn ingest_profiles(ctx: &Context) -> Result<()> {
    let mut c: IngestConfig = ctx.load()?;
    if let (Some(seed), Some(split)) = (ctx.seed, c.smoothing.split.as_mut()) {
        split.seed = seed;
    }
    let base = ctx.base();
    let records = load_profile_records(&base.join(&c.profiles))?;
    let responses = c
        .responses
        .as_ref()
        .map(|p| load_response_records(&base.join(p)))
        .transpose()?;
    let out = ingest(&records, responses.as_deref(), &c.smoothing)?;
    save_profile_records(&ctx.out("canonical_profiles.csv"), &out.canonical)?;
    let grid = Grid::uniform(c.smoothing.output_points)?;
    if out.y.is_some() {
        let data = out.dataset(&grid)?;
        ctx.save_dataset("smoothed", &data)?;
        if let Some(split) = &c.smoothing.split {
            let (train, validation, tuning) = split_dataset(&data, split)?;
            ctx.save_dataset("train", &train)?;
            ctx.save_dataset("validation", &validation)?;
            ctx.save_dataset("tuning", &tuning)?;
        }
    } else {
        if c.smoothing.split.is_some() {
            return Err(Error::Config("splitting needs responses".into()));
        }
        save_profile_records(
            &ctx.out("smoothed_profiles.csv"),
            &profiles_to_records(&out.ids, &out.profiles(&grid)?),
        )?;
    }
    persist::save(
        &ctx.out("functional.json"),
        "functional_data",
        &IngestSummary {
            ids: &out.ids,
            lambdas: &out.lambdas,
            functional: &out.functional,
        },
    )
}

fn phase_one(ctx: &Context, train: &DataPaths, validation: &DataPaths, options: fnncc_core::charts::PhaseOneOptions) -> Result<PhaseOne> {
    PhaseOne::new(ctx.dataset(train)?, ctx.dataset(validation)?, options)
}

fn tune(ctx: &Context) -> Result<()> {
    let mut c: TuneConfig = ctx.load()?;
    if let Some(s) = ctx.seed {
        c.seed = s;
    }
    let phase = phase_one(ctx, &c.train, &c.validation, c.phase_one.clone())?;
    let report = phase.tune_fnn(&c.grid, c.seed)?;
    log::info!("configuration {} selected", report.best);
    persist::save(&ctx.out("tune_report.json"), KIND_TUNE_REPORT, &report)?;
    ctx.write_json("best_config.json", &c.grid[report.best])
}

fn train(ctx: &Context) -> Result<()> {
    let mut c: TrainConfig = ctx.load()?;
    if let Some(s) = ctx.seed {
        c.fnn.seed = s;
    }
    let phase = phase_one(ctx, &c.train, &c.validation, c.phase_one.clone())?;
    let (predictor, history) = match c.chart {
        ChartKind::Scc => (Predictor::None, None),
        ChartKind::Frcc => (phase.sof()?, None),
        ChartKind::Fnncc => phase.fnn(&c.fnn).map(|(p, h)| (p, Some(h)))?,
        ChartKind::RawdataMlpcc => phase.rawdata_mlp(&c.fnn).map(|(p, h)| (p, Some(h)))?,
        ChartKind::BsplineMlpcc => phase.bspline_mlp(&c.fnn).map(|(p, h)| (p, Some(h)))?,
    };
    persist::save(&ctx.out("predictor.json"), KIND_PREDICTOR, &predictor)?;
    if let Some(h) = history {
        ctx.write_json("history.json", &h)?;
    }
    Ok(())
}

fn build_chart(ctx: &Context) -> Result<()> {
    let c: BuildChartConfig = ctx.load()?;
    let predictor: Predictor = persist::load(&ctx.base().join(&c.predictor), KIND_PREDICTOR)?;
    let tuning = ctx.dataset(&c.tuning)?;
    let chart = ControlChart::build(predictor, &tuning, c.alpha)?;
    persist::save(&ctx.out("chart.json"), KIND_CHART, &chart)?;
    let mut buf = Vec::new();
    write_chart_points(&chart.monitor(&tuning)?, &mut buf)?;
    write_atomic(&ctx.out("tuning_points.csv"), &buf)
}

fn monitor(ctx: &Context) -> Result<()> {
    let c: MonitorConfig = ctx.load()?;
    let chart: ControlChart = persist::load(&ctx.base().join(&c.chart), KIND_CHART)?;
    let data = ctx.dataset(&c.data)?;
    let points = chart.monitor(&data)?;
    let mut buf = Vec::new();
    write_chart_points(&points, &mut buf)?;
    write_atomic(&ctx.out("chart_points.csv"), &buf)?;
    let signals = points.iter().filter(|p| p.signal).count();
    println!(
        "{}",
        serde_json::json!({
            "chart": chart.kind,
            "n": points.len(),
            "signals": signals,
            "fraction": signals as f64 / points.len().max(1) as f64,
        })
    );
    Ok(())
}

fn arl_study(ctx: &Context) -> Result<()> {
    let mut c: StudyConfig = ctx.load_or_default()?;
    if let Some(s) = ctx.seed {
        c.seed = s;
    }
    let outcomes = run_study(&c)?;
    let estimates: Vec<ArlEstimate> = outcomes.iter().flat_map(|o| o.estimates.iter().cloned()).collect();
    let mut buf = Vec::new();
    write_estimates(&estimates, &mut buf)?;
    write_atomic(&ctx.out("arl.csv"), &buf)?;

    let mut summary = Vec::new();
    for o in &outcomes {
        let name = o.scenario.name();
        for &delta in &c.covariate_deltas {
            let svg = render_svg(&estimates, name, delta);
            write_atomic(&ctx.out(&format!("arl_{name}_delta{delta}.svg")), svg.as_bytes())?;
        }
        if let Some(report) = &o.tuning {
            persist::save(&ctx.out(&format!("tune_report_{name}.json")), KIND_TUNE_REPORT, report)?;
        }
        let charts: Vec<serde_json::Value> = c
            .charts
            .iter()
            .zip(&o.charts)
            .map(|(kind, chart)| match chart {
                Ok(ch) => serde_json::json!({ "chart": kind, "lcl": ch.lcl, "ucl": ch.ucl }),
                Err(code) => serde_json::json!({ "chart": kind, "error": code }),
            })
            .collect();
        summary.push(serde_json::json!({
            "scenario": name,
            "s_y": o.s_y,
            "fnn_config": o.fnn_config,
            "charts": charts,
        }));
    }
    ctx.write_json("study.json", &summary)
}

#[derive(Serialize)]
struct WeightRow<'a> {
    covariate_id: &'a str,
    t: f64,
    weight: f64,
}

fn export_weights(ctx: &Context) -> Result<()> {
    let c: ExportConfig = ctx.load()?;
    let predictor: Predictor = persist::load(&ctx.base().join(&c.predictor), KIND_PREDICTOR)?;
    let grid = Grid::uniform(c.points)?;
    let (ids, weights) = match &predictor {
        Predictor::Fnn { model, .. } => (model.covariate_ids.clone(), model.functional_weights(&grid)),
        Predictor::Sof { model, .. } => (model.mfpca.covariate_ids.clone(), model.beta_hat(&grid)),
        other => {
            return Err(Error::Config(format!(
                "{} predictors have no functional coefficients",
                other.chart_kind().name()
            )))
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for (id, values) in ids.iter().zip(&weights) {
        for (&t, &weight) in grid.points().iter().zip(values) {
            w.serialize(WeightRow { covariate_id: id, t, weight }).map_err(Error::from)?;
        }
    }
    let buf = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&ctx.out("weights.csv"), &buf)
}
