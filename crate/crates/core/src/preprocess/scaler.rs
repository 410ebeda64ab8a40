use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AlignedFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    Standard,
    #[serde(alias = "min_max")]
    Minmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnParams {
    Standard { mean: f64, sd: f64 },
    Minmax { min: f64, max: f64 },
}

impl ColumnParams {
    /// `(offset, divisor)` of the affine map `(d - offset) / divisor`.
    fn affine(&self) -> (f64, f64) {
        match *self {
            ColumnParams::Standard { mean, sd } => (mean, sd),
            ColumnParams::Minmax { min, max } => (min, max - min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScaler {
    pub kind: ScalerKind,
    pub columns: Vec<String>,
    pub params: Vec<ColumnParams>,
}

/// Mean with an exact result for constant input, so constant columns never
/// pick up rounding noise.
pub(crate) fn mean(xs: &[f64]) -> f64 {
    let first = xs[0];
    if xs.iter().all(|&x| x == first) {
        return first;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn population_sd(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Fits per-column parameters over observed cells.
pub fn fit_scaler(frame: &AlignedFrame, kind: ScalerKind) -> Result<FittedScaler> {
    if frame.rows() < 2 {
        return Err(Error::InsufficientRows {
            needed: 1,
            got: frame.rows(),
        });
    }
    let mut params = Vec::with_capacity(frame.width());
    for (c, name) in frame.columns().iter().enumerate() {
        let xs = frame.column_values(c);
        let degenerate = |reason: &str| Error::DegenerateColumn {
            column: name.clone(),
            reason: reason.to_string(),
        };
        if xs.len() < 2 {
            return Err(degenerate("fewer than 2 observed values"));
        }
        let p = match kind {
            ScalerKind::Standard => {
                let m = mean(&xs);
                let sd = population_sd(&xs, m);
                if sd <= 0.0 {
                    return Err(degenerate("zero standard deviation"));
                }
                ColumnParams::Standard { mean: m, sd }
            }
            ScalerKind::Minmax => {
                let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max <= min {
                    return Err(degenerate("zero range"));
                }
                ColumnParams::Minmax { min, max }
            }
        };
        params.push(p);
    }
    Ok(FittedScaler {
        kind,
        columns: frame.columns().to_vec(),
        params,
    })
}

fn check_columns(frame: &AlignedFrame, scaler: &FittedScaler) -> Result<()> {
    if frame.columns() != scaler.columns.as_slice() {
        return Err(Error::validation(format!(
            "frame columns {:?} do not match scaler columns {:?}",
            frame.columns(),
            scaler.columns
        )));
    }
    Ok(())
}

pub fn apply_scaler(frame: &AlignedFrame, scaler: &FittedScaler) -> Result<AlignedFrame> {
    check_columns(frame, scaler)?;
    let affine: Vec<(f64, f64)> = scaler.params.iter().map(ColumnParams::affine).collect();
    frame.map_observed(|c, v| (v - affine[c].0) / affine[c].1)
}

pub fn invert_scaler(frame: &AlignedFrame, scaler: &FittedScaler) -> Result<AlignedFrame> {
    check_columns(frame, scaler)?;
    let affine: Vec<(f64, f64)> = scaler.params.iter().map(ColumnParams::affine).collect();
    frame.map_observed(|c, v| v * affine[c].1 + affine[c].0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> AlignedFrame {
        let grid = (0..values.len() as i64).map(|i| i * 60).collect();
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        AlignedFrame::from_rows(60, grid, vec!["a/x".into()], &rows).unwrap()
    }

    #[test]
    fn standard_two_points() {
        let f = col(&[0.0, 2.0]);
        let s = fit_scaler(&f, ScalerKind::Standard).unwrap();
        assert_eq!(s.params[0], ColumnParams::Standard { mean: 1.0, sd: 1.0 });
        assert_eq!(apply_scaler(&f, &s).unwrap().column_values(0), [-1.0, 1.0]);
    }

    #[test]
    fn minmax_endpoints() {
        let f = col(&[0.0, 5.0, 10.0]);
        let s = fit_scaler(&f, ScalerKind::Minmax).unwrap();
        assert_eq!(s.params[0], ColumnParams::Minmax { min: 0.0, max: 10.0 });
        assert_eq!(apply_scaler(&f, &s).unwrap().column_values(0), [0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_is_degenerate() {
        for kind in [ScalerKind::Standard, ScalerKind::Minmax] {
            let err = fit_scaler(&col(&[7.0, 7.0, 7.0]), kind).unwrap_err();
            assert!(matches!(err, Error::DegenerateColumn { ref column, .. } if column == "a/x"));
        }
        assert!(fit_scaler(&col(&[0.1, 0.1, 0.1]), ScalerKind::Standard).is_err());
    }

    #[test]
    fn column_mismatch_is_rejected() {
        let s = fit_scaler(&col(&[0.0, 1.0]), ScalerKind::Minmax).unwrap();
        let other = AlignedFrame::from_rows(60, vec![0], vec!["b/y".into()], &[vec![1.0]]).unwrap();
        assert!(apply_scaler(&other, &s).is_err());
        assert!(invert_scaler(&other, &s).is_err());
    }

    #[test]
    fn single_row_cannot_be_fit() {
        assert!(matches!(
            fit_scaler(&col(&[1.0]), ScalerKind::Standard),
            Err(Error::InsufficientRows { .. })
        ));
    }
}
