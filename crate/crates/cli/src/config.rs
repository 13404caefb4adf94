//! Run configuration documents, one per subcommand. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fnncc_core::charts::{ChartKind, PhaseOneOptions};
use fnncc_core::io::IngestSpec;
use fnncc_core::simgen::{ScenarioKind, ScenarioSpec, SimConfig, Sizes};
use fnncc_core::{persist, FnnConfig, Result};

/// A dataset stored as a profiles CSV and a responses CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub profiles: PathBuf,
    pub responses: PathBuf,
}

impl DataPaths {
    pub fn resolve(&self, base: &Path) -> Self {
        Self {
            profiles: base.join(&self.profiles),
            responses: base.join(&self.responses),
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_points() -> usize {
    101
}
fn desk() -> Sizes {
    Sizes::DESK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub scenario_spec: Option<ScenarioSpec>,
    #[serde(default = "desk")]
    pub sizes: Sizes,
    /// Response shift of the out-of-control set, in training-response sds.
    #[serde(default)]
    pub response_shift: f64,
    #[serde(default)]
    pub covariate_delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulation: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub profiles: PathBuf,
    #[serde(default)]
    pub responses: Option<PathBuf>,
    #[serde(default)]
    pub smoothing: IngestSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub train: DataPaths,
    pub validation: DataPaths,
    pub grid: Vec<FnnConfig>,
    #[serde(default)]
    pub phase_one: PhaseOneOptions,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub chart: ChartKind,
    pub train: DataPaths,
    pub validation: DataPaths,
    #[serde(default)]
    pub fnn: FnnConfig,
    #[serde(default)]
    pub phase_one: PhaseOneOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildChartConfig {
    pub predictor: PathBuf,
    pub tuning: DataPaths,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub chart: PathBuf,
    pub data: DataPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    pub predictor: PathBuf,
    #[serde(default = "default_points")]
    pub points: usize,
}

/// Reads a configuration file; relative paths inside it are taken
/// relative to the file's directory by the caller.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    persist::from_plain_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fnncc_core::Error;

    #[test]
    fn unknown_keys_are_schema_errors() {
        let text = r#"{"predictor": "p.json", "points": 11, "colour": "red"}"#;
        assert!(matches!(persist::from_plain_json::<ExportConfig>(text), Err(Error::Schema(_))));
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let c: SimulateConfig = persist::from_plain_json(r#"{"scenario": "C"}"#).unwrap();
        assert_eq!(c.sizes, Sizes::DESK);
        assert_eq!(c.seed, 0);
        let b: BuildChartConfig =
            persist::from_plain_json(r#"{"predictor": "p", "tuning": {"profiles": "a", "responses": "b"}}"#).unwrap();
        assert_eq!(b.alpha, 0.05);
    }

    #[test]
    fn truncated_config_reports_offset() {
        let err = persist::from_plain_json::<SimulateConfig>("{\"scenario\": \"C\",").unwrap_err();
        assert!(matches!(err, Error::Parse { offset, .. } if offset > 10), "{err}");
    }
}
