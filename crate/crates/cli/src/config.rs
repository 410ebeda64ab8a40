//! TOML config files and seed resolution.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sentinel_core::detect::{ConditionSpec, DetectorSpec};
use sentinel_core::evaluate::RunPlan;
use sentinel_core::ingest::{IngestConfig, IngestMode};
use sentinel_core::preprocess::StageConfig;
use sentinel_core::synth::{Injection, Schedule, StreamSpec};
use sentinel_core::Timestamp;

use crate::CliError;

pub const SEED_ENV: &str = "SENTINEL_SEED";

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(crate::existing(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// `--seed`, then the config file, then `SENTINEL_SEED`. Commands that
/// draw random numbers refuse to run without one.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Err(CliError::Usage(format!(
            "no seed: pass --seed, set `seed` in the config, or set {SEED_ENV}"
        ))),
    }
}

/// Parses `90`, `90s`, `1500ms`, `2m` or `1h`.
pub fn parse_duration(s: &str) -> Result<std::time::Duration, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit() && c != '.').unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num.parse().map_err(|_| format!("invalid duration `{s}`"))?;
    let secs = match unit {
        "" | "s" => v,
        "ms" => v / 1000.0,
        "m" => v * 60.0,
        "h" => v * 3600.0,
        _ => return Err(format!("unknown duration unit `{unit}`")),
    };
    std::time::Duration::try_from_secs_f64(secs).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub seed: Option<u64>,
    pub start: Option<Timestamp>,
    pub days: Option<f64>,
    pub grid_period: Option<i64>,
    pub streams: Option<Vec<StreamSpec>>,
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub inject: InjectPlan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectPlan {
    pub points: usize,
    /// Spike size in stream standard deviations.
    pub sigma: f64,
    pub bursts: usize,
    pub burst_minutes: i64,
    /// Explicit injections, applied in addition to the generated ones.
    pub entries: Vec<Injection>,
}

impl Default for InjectPlan {
    fn default() -> Self {
        Self {
            points: 0,
            sigma: 10.0,
            bursts: 0,
            burst_minutes: 20,
            entries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestFile {
    /// Inventory CSV; the built-in reference inventory when absent.
    pub inventory: Option<PathBuf>,
    pub mode: Option<IngestMode>,
    pub broker_uri: Option<String>,
    pub topics: Option<Vec<String>>,
    pub grid_period: Option<i64>,
    pub max_gap_fill: Option<usize>,
    pub drop_incomplete_rows: Option<bool>,
}

impl IngestFile {
    pub fn resolve(self) -> Result<(IngestConfig, Option<PathBuf>), CliError> {
        let defaults = IngestConfig::replay(60);
        let cfg = IngestConfig {
            mode: self.mode.unwrap_or_default(),
            broker_uri: self.broker_uri,
            topics: self.topics.unwrap_or_default(),
            grid_period: self.grid_period.unwrap_or(defaults.grid_period),
            max_gap_fill: self.max_gap_fill.unwrap_or(defaults.max_gap_fill),
            drop_incomplete_rows: self.drop_incomplete_rows.unwrap_or(defaults.drop_incomplete_rows),
        };
        cfg.validate()?;
        Ok((cfg, self.inventory))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub seed: Option<u64>,
    #[serde(default = "ConditionSpec::unconditional")]
    pub condition: ConditionSpec,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
    pub detector: DetectorSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(rename = "run")]
    pub runs: Vec<RunPlan>,
}

/// Writes `seed` into every seeded component of a detector.
pub fn seed_detector(spec: &mut DetectorSpec, seed: u64) {
    match spec {
        DetectorSpec::IsolationForest(p) => p.seed = seed,
        DetectorSpec::Ocsvm(_) => {}
        DetectorSpec::Forecaster { config, .. } => config.seed = seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_file_parses() {
        let t: TrainFile = toml::from_str(
            r#"
            seed = 4
            [[stages]]
            stage = "scale"
            kind = "standard"
            [detector]
            kind = "forecaster"
            network = "recurrent"
            [detector.config]
            max_epochs = 3
            "#,
        )
        .unwrap();
        assert_eq!(t.seed, Some(4));
        assert_eq!(t.stages.len(), 1);
        match t.detector {
            DetectorSpec::Forecaster { config, .. } => {
                assert_eq!(config.max_epochs, 3);
                assert_eq!(config.time_steps, 74);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("60s").unwrap().as_secs(), 60);
        assert_eq!(parse_duration("2m").unwrap().as_secs(), 120);
        assert_eq!(parse_duration("1500ms").unwrap().as_millis(), 1500);
        assert_eq!(parse_duration("7").unwrap().as_secs(), 7);
        assert!(parse_duration("3 weeks").is_err());
    }

    #[test]
    fn flag_beats_file() {
        assert_eq!(resolve_seed(Some(1), Some(2)).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2)).unwrap(), 2);
    }
}
