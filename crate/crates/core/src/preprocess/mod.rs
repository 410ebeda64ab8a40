//! Scaling, reductions, transforms, condition splits and windowing, plus a
//! small pipeline that records fitted parameters for exact replay.

mod reduce;
mod scaler;
mod transform;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AlignedFrame;

pub use reduce::{kurtosis, median, reduce, reduce_counted, reduce_frame, PassCounter, ReductionKind};
pub use scaler::{apply_scaler, fit_scaler, invert_scaler, ColumnParams, FittedScaler, ScalerKind};
pub use transform::{
    atan_norm, atan_unit, gaussian_score, transform, GaussParams, TransformKind, TransformSpec,
};
pub use window::{select_condition, split_condition, to_windows};

/// Transform as written in a config file, before any fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformConfig {
    AtanNorm {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        signed: bool,
    },
    GaussianScore,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageConfig {
    Select {
        columns: Vec<String>,
    },
    Transform {
        #[serde(default)]
        columns: Vec<String>,
        transform: TransformConfig,
    },
    Scale {
        kind: ScalerKind,
    },
    Reduce {
        kind: ReductionKind,
        #[serde(default)]
        excess_kurtosis: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum FittedStage {
    Select { columns: Vec<String> },
    Transform(TransformSpec),
    Scale(FittedScaler),
    Reduce { kind: ReductionKind, excess_kurtosis: bool },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub stages: Vec<FittedStage>,
}

impl Pipeline {
    /// Fits each stage in order on the training frame and returns the fitted
    /// pipeline together with the transformed training frame.
    pub fn fit(stages: &[StageConfig], frame: &AlignedFrame) -> Result<(Self, AlignedFrame)> {
        let mut current = frame.clone();
        let mut fitted = Vec::with_capacity(stages.len());
        for stage in stages {
            let f = match stage {
                StageConfig::Select { columns } => FittedStage::Select {
                    columns: columns.clone(),
                },
                StageConfig::Transform { columns, transform } => match transform {
                    TransformConfig::AtanNorm { scale, signed } => {
                        FittedStage::Transform(TransformSpec::atan(columns.clone(), *scale, *signed)?)
                    }
                    TransformConfig::GaussianScore => {
                        FittedStage::Transform(TransformSpec::fit_gaussian(&current, columns)?)
                    }
                },
                StageConfig::Scale { kind } => FittedStage::Scale(fit_scaler(&current, *kind)?),
                StageConfig::Reduce {
                    kind,
                    excess_kurtosis,
                } => FittedStage::Reduce {
                    kind: *kind,
                    excess_kurtosis: *excess_kurtosis,
                },
            };
            current = apply_stage(&f, &current)?;
            fitted.push(f);
        }
        Ok((Self { stages: fitted }, current))
    }

    pub fn apply(&self, frame: &AlignedFrame) -> Result<AlignedFrame> {
        let mut current = frame.clone();
        for s in &self.stages {
            current = apply_stage(s, &current)?;
        }
        Ok(current)
    }

    /// Raw columns that survive the select stages, given the input columns.
    pub fn source_columns(&self, input: &[String]) -> Vec<String> {
        let mut cols = input.to_vec();
        for s in &self.stages {
            if let FittedStage::Select { columns } = s {
                cols = columns.clone();
            }
        }
        cols
    }

    pub fn reduces(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, FittedStage::Reduce { .. }))
    }

    pub fn is_scaled(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, FittedStage::Scale(_)))
    }

    /// Short label such as `transform+scale:standard`, or `raw`.
    pub fn label(&self) -> String {
        label(self.stages.iter().map(|s| match s {
            FittedStage::Select { .. } => "select".to_string(),
            FittedStage::Transform(t) => match t.kind {
                TransformKind::AtanNorm { .. } => "atan".into(),
                TransformKind::GaussianScore { .. } => "gaussian".into(),
            },
            FittedStage::Scale(s) => format!("scale:{}", scaler_name(s.kind)),
            FittedStage::Reduce { kind, .. } => format!("reduce:{}", kind.as_str()),
        }))
    }
}

fn scaler_name(k: ScalerKind) -> &'static str {
    match k {
        ScalerKind::Standard => "standard",
        ScalerKind::Minmax => "minmax",
    }
}

fn label(parts: impl Iterator<Item = String>) -> String {
    let parts: Vec<String> = parts.collect();
    if parts.is_empty() {
        "raw".into()
    } else {
        parts.join("+")
    }
}

/// Label for an unfitted stage list, matching [`Pipeline::label`].
pub fn config_label(stages: &[StageConfig]) -> String {
    label(stages.iter().map(|s| match s {
        StageConfig::Select { .. } => "select".to_string(),
        StageConfig::Transform { transform, .. } => match transform {
            TransformConfig::AtanNorm { .. } => "atan".into(),
            TransformConfig::GaussianScore => "gaussian".into(),
        },
        StageConfig::Scale { kind } => format!("scale:{}", scaler_name(*kind)),
        StageConfig::Reduce { kind, .. } => format!("reduce:{}", kind.as_str()),
    }))
}

fn apply_stage(stage: &FittedStage, frame: &AlignedFrame) -> Result<AlignedFrame> {
    match stage {
        FittedStage::Select { columns } => {
            if columns.is_empty() {
                return Err(Error::validation("select stage needs at least one column"));
            }
            frame.select_columns(columns)
        }
        FittedStage::Transform(spec) => transform(frame, spec),
        FittedStage::Scale(s) => apply_scaler(frame, s),
        FittedStage::Reduce {
            kind,
            excess_kurtosis,
        } => reduce_frame(frame, *kind, *excess_kurtosis),
    }
}
