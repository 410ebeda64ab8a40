//! Row-wise reductions that collapse a multivariate sample to one number.

use serde::{Deserialize, Serialize};

use super::scaler::mean;
use crate::error::{Error, Result};
use crate::model::AlignedFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionKind {
    Average,
    Sd,
    Mad,
    Kurtosis,
    Skewness,
}

impl ReductionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReductionKind::Average => "average",
            ReductionKind::Sd => "sd",
            ReductionKind::Mad => "mad",
            ReductionKind::Kurtosis => "kurtosis",
            ReductionKind::Skewness => "skewness",
        }
    }
}

/// Counts full scans over the sample, so tests can check how much work each
/// reduction does.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PassCounter {
    pub passes: usize,
}

impl PassCounter {
    fn tick(&mut self) {
        self.passes += 1;
    }
}

fn check(sample: &[f64]) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::DegenerateSample("empty sample".into()));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("sample contains a non-finite value"));
    }
    Ok(())
}

fn median_in_place(xs: &mut [f64]) -> f64 {
    let n = xs.len();
    let mid = n / 2;
    let (lower, m, _) = xs.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + m) / 2.0
    }
}

pub fn median(sample: &[f64]) -> Result<f64> {
    check(sample)?;
    Ok(median_in_place(&mut sample.to_vec()))
}

/// Non-excess (Pearson) kurtosis, or excess kurtosis when `excess` is set.
pub fn kurtosis(sample: &[f64], excess: bool) -> Result<f64> {
    let k = reduce(sample, ReductionKind::Kurtosis)?;
    Ok(if excess { k - 3.0 } else { k })
}

pub fn reduce(sample: &[f64], kind: ReductionKind) -> Result<f64> {
    reduce_counted(sample, kind, &mut PassCounter::default())
}

pub fn reduce_counted(sample: &[f64], kind: ReductionKind, ops: &mut PassCounter) -> Result<f64> {
    check(sample)?;
    let n = sample.len() as f64;
    let central = |p: i32, m: f64, ops: &mut PassCounter| {
        ops.tick();
        sample.iter().map(|x| (x - m).powi(p)).sum::<f64>() / n
    };
    match kind {
        ReductionKind::Average => {
            ops.tick();
            Ok(mean(sample))
        }
        ReductionKind::Sd => {
            ops.tick();
            let m = mean(sample);
            Ok(central(2, m, ops).sqrt())
        }
        ReductionKind::Mad => {
            ops.tick();
            let mut buf = sample.to_vec();
            let med = median_in_place(&mut buf);
            ops.tick();
            for (d, x) in buf.iter_mut().zip(sample) {
                *d = (x - med).abs();
            }
            ops.tick();
            Ok(median_in_place(&mut buf))
        }
        ReductionKind::Kurtosis | ReductionKind::Skewness => {
            ops.tick();
            let m = mean(sample);
            // Second and higher moment share one pass.
            ops.tick();
            let (mut m2, mut mk) = (0.0, 0.0);
            let p = if kind == ReductionKind::Kurtosis { 4 } else { 3 };
            for x in sample {
                let d = x - m;
                m2 += d * d;
                mk += d.powi(p);
            }
            let var = m2 / n;
            if var <= 0.0 {
                return Err(Error::DegenerateSample(format!(
                    "{} needs a nonzero standard deviation",
                    kind.as_str()
                )));
            }
            Ok(mk / n / var.powf(p as f64 / 2.0))
        }
    }
}

/// Reduces every row of a complete frame to a single column named
/// `reduce/<kind>`.
pub fn reduce_frame(frame: &AlignedFrame, kind: ReductionKind, excess: bool) -> Result<AlignedFrame> {
    if !frame.is_complete() {
        return Err(Error::validation("row-wise reduction needs a complete frame"));
    }
    let mut rows = Vec::with_capacity(frame.rows());
    for r in 0..frame.rows() {
        let mut v = reduce(frame.row(r), kind)?;
        if excess && kind == ReductionKind::Kurtosis {
            v -= 3.0;
        }
        rows.push(vec![v]);
    }
    AlignedFrame::from_rows(
        frame.period(),
        frame.grid().to_vec(),
        vec![format!("reduce/{}", kind.as_str())],
        &rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mad_ignores_the_outlier() {
        assert_eq!(reduce(&[1.0, 2.0, 3.0, 4.0, 100.0], ReductionKind::Mad).unwrap(), 1.0);
        assert_eq!(reduce(&[1.0, 2.0, 3.0, 4.0], ReductionKind::Mad).unwrap(), 1.0);
    }

    #[test]
    fn constant_sample() {
        let xs = [0.1; 7];
        assert_eq!(reduce(&xs, ReductionKind::Average).unwrap(), 0.1);
        assert_eq!(reduce(&xs, ReductionKind::Sd).unwrap(), 0.0);
        assert!(matches!(
            reduce(&xs, ReductionKind::Kurtosis),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(
            reduce(&xs, ReductionKind::Skewness),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn symmetric_sample_has_zero_skew() {
        assert_eq!(reduce(&[-1.0, 0.0, 1.0], ReductionKind::Skewness).unwrap(), 0.0);
    }

    #[test]
    fn kurtosis_of_single_spike() {
        // mean 1/4; deviations -1/4 (x3), 3/4. m2 = 3/16, m4 = 21/256.
        let expected = 7.0 / 3.0;
        let k = reduce(&[0.0, 0.0, 0.0, 1.0], ReductionKind::Kurtosis).unwrap();
        assert!((k - expected).abs() < 1e-12);
        assert!((kurtosis(&[0.0, 0.0, 0.0, 1.0], true).unwrap() - (expected - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn pass_counts() {
        let xs = [1.0, 5.0, 2.0, 8.0];
        let count = |k| {
            let mut ops = PassCounter::default();
            reduce_counted(&xs, k, &mut ops).unwrap();
            ops.passes
        };
        assert_eq!(count(ReductionKind::Average), 1);
        assert_eq!(count(ReductionKind::Sd), 2);
        assert_eq!(count(ReductionKind::Kurtosis), 2);
        assert_eq!(count(ReductionKind::Skewness), 2);
        assert_eq!(count(ReductionKind::Mad), 3);
    }

    #[test]
    fn empty_and_non_finite_samples() {
        assert!(reduce(&[], ReductionKind::Average).is_err());
        assert!(reduce(&[1.0, f64::NAN], ReductionKind::Sd).is_err());
    }

    #[test]
    fn frame_reduction_is_univariate() {
        let f = AlignedFrame::from_rows(
            60,
            vec![0, 60],
            vec!["a/x".into(), "b/y".into()],
            &[vec![1.0, 3.0], vec![2.0, 2.0]],
        )
        .unwrap();
        let r = reduce_frame(&f, ReductionKind::Average, false).unwrap();
        assert_eq!(r.columns(), ["reduce/average"]);
        assert_eq!(r.column_values(0), [2.0, 2.0]);
    }
}
