use std::f64::consts::FRAC_2_PI;

use serde::{Deserialize, Serialize};

use super::scaler::{mean, population_sd};
use crate::error::{Error, Result};
use crate::model::AlignedFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    AtanNorm {
        #[serde(default = "one")]
        scale: f64,
        /// Map `[-1, 1]` onto `[0, 1]`; otherwise the magnitude is used.
        #[serde(default)]
        signed: bool,
    },
    /// One parameter pair per column of the owning spec.
    GaussianScore { params: Vec<GaussParams> },
}

fn one() -> f64 {
    1.0
}

/// A transform applied to a set of columns; other columns pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub columns: Vec<String>,
    pub kind: TransformKind,
}

/// `arctan(x / scale)` rescaled to `[-1, 1]`.
pub fn atan_unit(x: f64, scale: f64) -> f64 {
    ((x / scale).atan() * FRAC_2_PI).clamp(-1.0, 1.0)
}

pub fn atan_norm(x: f64, scale: f64, signed: bool) -> f64 {
    let v = atan_unit(x, scale);
    if signed {
        (v + 1.0) / 2.0
    } else {
        v.abs()
    }
}

pub fn gaussian_score(x: f64, p: GaussParams) -> f64 {
    (-(x - p.mu).powi(2) / (2.0 * p.sigma * p.sigma)).exp()
}

impl TransformSpec {
    pub fn atan(columns: Vec<String>, scale: f64, signed: bool) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::validation("atan scale must be a positive finite number"));
        }
        Ok(Self {
            columns,
            kind: TransformKind::AtanNorm { scale, signed },
        })
    }

    /// Fits a Gaussian per column on observed training cells. An empty
    /// column list selects every frame column.
    pub fn fit_gaussian(frame: &AlignedFrame, columns: &[String]) -> Result<Self> {
        let columns = resolve(frame, columns)?;
        let mut params = Vec::with_capacity(columns.len());
        for name in &columns {
            let xs = frame.column_values(frame.column_index(name).unwrap());
            let degenerate = || Error::DegenerateColumn {
                column: name.clone(),
                reason: "gaussian score needs a nonzero spread".into(),
            };
            if xs.is_empty() {
                return Err(degenerate());
            }
            let mu = mean(&xs);
            let sigma = population_sd(&xs, mu);
            if sigma <= 0.0 {
                return Err(degenerate());
            }
            params.push(GaussParams { mu, sigma });
        }
        Ok(Self {
            columns,
            kind: TransformKind::GaussianScore { params },
        })
    }
}

fn resolve(frame: &AlignedFrame, columns: &[String]) -> Result<Vec<String>> {
    if columns.is_empty() {
        return Ok(frame.columns().to_vec());
    }
    for c in columns {
        if frame.column_index(c).is_none() {
            return Err(Error::validation(format!("frame has no column `{c}`")));
        }
    }
    Ok(columns.to_vec())
}

pub fn transform(frame: &AlignedFrame, spec: &TransformSpec) -> Result<AlignedFrame> {
    let columns = resolve(frame, &spec.columns)?;
    // Per frame column: index into the transform's column list, if transformed.
    let slot: Vec<Option<usize>> = frame
        .columns()
        .iter()
        .map(|c| columns.iter().position(|s| s == c))
        .collect();
    match &spec.kind {
        TransformKind::AtanNorm { scale, signed } => {
            if !(*scale > 0.0) {
                return Err(Error::validation("atan scale must be positive"));
            }
            frame.map_observed(|c, v| match slot[c] {
                Some(_) => atan_norm(v, *scale, *signed),
                None => v,
            })
        }
        TransformKind::GaussianScore { params } => {
            if params.len() != columns.len() {
                return Err(Error::validation("gaussian parameters do not match columns"));
            }
            if let Some((i, _)) = params.iter().enumerate().find(|(_, p)| !(p.sigma > 0.0)) {
                return Err(Error::DegenerateColumn {
                    column: columns[i].clone(),
                    reason: "gaussian sigma must be positive".into(),
                });
            }
            frame.map_observed(|c, v| match slot[c] {
                Some(i) => gaussian_score(v, params[i]),
                None => v,
            })
        }
    }
}
