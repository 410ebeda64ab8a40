//! Detector families, the loss threshold, and the model file container.

pub mod forecast;
pub mod iforest;
pub mod network;
pub mod ocsvm;
pub mod threshold;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{create, open};
use crate::model::{AlignedFrame, AnomalyVerdict, Condition, DetectorKind, Taxonomy};
use crate::preprocess::{select_condition, to_windows, Pipeline, StageConfig};

pub use forecast::{
    forecaster_detect, forecaster_train, AdamState, EarlyStopping, ForecasterConfig, ForecasterKind,
    ForecasterModel, TrainReport,
};
pub use iforest::{average_path_length, if_fit, if_fit_frame, if_score, IForestParams, IsolationForestModel, IF_CUTOFF};
pub use network::{LossKind, Network};
pub use ocsvm::{kkt_residual, ocsvm_fit, ocsvm_fit_frame, ocsvm_predict, rbf, Gamma, OcsvmModel, OcsvmParams};
pub use threshold::{compute_threshold, LossThreshold, SIGMA_MULTIPLIER};

pub const MODEL_FORMAT: &str = "sentinel-model/1";

/// Row filter applied before the pipeline, for daytime / night-time models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub condition: Condition,
    pub source_stream: String,
    pub threshold: f64,
}

impl ConditionSpec {
    pub fn unconditional() -> Self {
        Self {
            condition: Condition::UC,
            source_stream: String::new(),
            threshold: 0.0,
        }
    }

    pub fn select(&self, frame: &AlignedFrame) -> Result<AlignedFrame> {
        select_condition(frame, self.condition, &self.source_stream, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Fitted {
    IsolationForest(IsolationForestModel),
    Ocsvm(OcsvmModel),
    Forecaster {
        model: ForecasterModel,
        threshold: LossThreshold,
        report: TrainReport,
    },
}

/// Everything needed to score new data exactly as during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub format: String,
    pub detector: DetectorKind,
    pub config_hash: String,
    /// Raw frame columns the pipeline expects.
    pub input_columns: Vec<String>,
    pub condition: ConditionSpec,
    pub pipeline: Pipeline,
    pub fitted: Fitted,
}

impl DetectorModel {
    pub fn new(
        config_hash: &str,
        input_columns: Vec<String>,
        condition: ConditionSpec,
        pipeline: Pipeline,
        fitted: Fitted,
    ) -> Self {
        let detector = match &fitted {
            Fitted::IsolationForest(_) => DetectorKind::IsolationForest,
            Fitted::Ocsvm(_) => DetectorKind::Ocsvm,
            Fitted::Forecaster { model, .. } => model.kind.detector(),
        };
        Self {
            format: MODEL_FORMAT.to_string(),
            detector,
            config_hash: config_hash.to_string(),
            input_columns,
            condition,
            pipeline,
            fitted,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(create(path)?);
        serde_json::to_writer(&mut w, self)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_reader(std::io::BufReader::new(open(path)?))?;
        if m.format != MODEL_FORMAT {
            return Err(Error::validation(format!(
                "{}: unsupported model format `{}`",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }

    /// Applies condition filter and pipeline to a raw frame.
    pub fn prepare(&self, frame: &AlignedFrame) -> Result<AlignedFrame> {
        if frame.columns() != self.input_columns.as_slice() {
            return Err(Error::validation(format!(
                "frame columns {:?} do not match model input columns {:?}",
                frame.columns(),
                self.input_columns
            )));
        }
        self.pipeline.apply(&self.condition.select(frame)?)
    }

    pub fn detect(&self, frame: &AlignedFrame, config_id: &str) -> Result<Vec<AnomalyVerdict>> {
        let prepared = self.prepare(frame)?;
        let mut verdicts = detect_prepared(&self.fitted, &prepared, config_id)?;
        if self.pipeline.reduces() {
            // A reduced column stands for the raw streams it summarises.
            let sources = self.pipeline.source_columns(&self.input_columns);
            for v in &mut verdicts {
                v.streams = sources.clone();
            }
        }
        Ok(verdicts)
    }
}

/// Which detector to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    IsolationForest(IForestParams),
    Ocsvm(OcsvmParams),
    Forecaster {
        network: ForecasterKind,
        #[serde(default)]
        config: ForecasterConfig,
    },
}

impl DetectorSpec {
    pub fn detector(&self) -> DetectorKind {
        match self {
            DetectorSpec::IsolationForest(_) => DetectorKind::IsolationForest,
            DetectorSpec::Ocsvm(_) => DetectorKind::Ocsvm,
            DetectorSpec::Forecaster { network, .. } => network.detector(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainTiming {
    /// Wall time of the detector fit alone, excluding condition selection
    /// and pipeline fitting.
    pub wall_seconds: f64,
    /// Zero for the non-iterative families.
    pub epochs: usize,
}

/// Selects the condition rows, fits the pipeline, then fits the detector.
pub fn train_model(
    frame: &AlignedFrame,
    condition: &ConditionSpec,
    stages: &[StageConfig],
    spec: &DetectorSpec,
    config_hash: &str,
) -> Result<(DetectorModel, TrainTiming)> {
    let selected = condition.select(frame)?;
    let (pipeline, prepared) = Pipeline::fit(stages, &selected)?;
    let started = std::time::Instant::now();
    let (fitted, epochs) = match spec {
        DetectorSpec::IsolationForest(p) => (Fitted::IsolationForest(if_fit_frame(&prepared, *p)?), 0),
        DetectorSpec::Ocsvm(p) => (Fitted::Ocsvm(ocsvm_fit_frame(&prepared, *p)?), 0),
        DetectorSpec::Forecaster { network, config } => {
            let windows = to_windows(&prepared, config.time_steps)?;
            let (model, threshold, report) = forecaster_train(&windows, *network, config)?;
            let epochs = report.epochs_run;
            (Fitted::Forecaster { model, threshold, report }, epochs)
        }
    };
    let wall_seconds = started.elapsed().as_secs_f64();
    let model = DetectorModel::new(
        config_hash,
        frame.columns().to_vec(),
        condition.clone(),
        pipeline,
        fitted,
    );
    Ok((model, TrainTiming { wall_seconds, epochs }))
}

/// Scores a frame that already went through the model's pipeline.
pub fn detect_prepared(fitted: &Fitted, frame: &AlignedFrame, config_id: &str) -> Result<Vec<AnomalyVerdict>> {
    let row_taxonomy = if frame.width() > 1 {
        Taxonomy::Combined
    } else {
        Taxonomy::Point
    };
    let columns = frame.columns().to_vec();
    match fitted {
        Fitted::IsolationForest(m) => (0..frame.rows())
            .map(|r| {
                let s = m.score(frame.row(r))?;
                Ok(AnomalyVerdict::new(
                    frame.grid()[r],
                    columns.clone(),
                    s,
                    IF_CUTOFF,
                    row_taxonomy,
                    DetectorKind::IsolationForest,
                    config_id,
                ))
            })
            .collect(),
        Fitted::Ocsvm(m) => (0..frame.rows())
            .map(|r| {
                // Negated so that larger is more anomalous; -1 iff score > 0.
                let s = -m.decision_function(frame.row(r))?;
                Ok(AnomalyVerdict::new(
                    frame.grid()[r],
                    columns.clone(),
                    s,
                    0.0,
                    row_taxonomy,
                    DetectorKind::Ocsvm,
                    config_id,
                ))
            })
            .collect(),
        Fitted::Forecaster { model, threshold, .. } => {
            let windows = to_windows(frame, model.config.time_steps)?;
            forecaster_detect(model, threshold, &windows, config_id)
        }
    }
}
