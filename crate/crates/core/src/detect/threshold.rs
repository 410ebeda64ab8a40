use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of loss standard deviations above the mean loss that still counts
/// as normal.
pub const SIGMA_MULTIPLIER: f64 = 8.0;

/// Decision threshold derived from per-sample training losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossThreshold {
    pub losses: Vec<f64>,
    pub mae: f64,
    pub sigma: f64,
    pub threshold: f64,
}

impl LossThreshold {
    pub fn is_anomalous(&self, loss: f64) -> bool {
        loss > self.threshold
    }

    /// Rebuilds the statistics from the stored losses.
    pub fn recompute(&self) -> Result<Self> {
        compute_threshold(&self.losses)
    }
}

/// `mae + 8 * sigma` over the losses, with sigma the population standard
/// deviation. Sums run over a sorted copy, so the result does not depend on
/// input order.
pub fn compute_threshold(losses: &[f64]) -> Result<LossThreshold> {
    if losses.is_empty() {
        return Err(Error::validation("threshold needs at least one loss"));
    }
    if let Some(bad) = losses.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::validation(format!(
            "losses must be finite and nonnegative, found {bad}"
        )));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mae = if lo == hi {
        lo
    } else {
        (sorted.iter().sum::<f64>() / n).clamp(lo, hi)
    };
    let sigma = (sorted.iter().map(|l| (l - mae) * (l - mae)).sum::<f64>() / n).sqrt();
    Ok(LossThreshold {
        losses: losses.to_vec(),
        mae,
        sigma,
        threshold: mae + SIGMA_MULTIPLIER * sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread() {
        let t = compute_threshold(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!((t.mae, t.sigma, t.threshold), (1.0, 0.0, 1.0));
    }

    #[test]
    fn two_point_case() {
        let t = compute_threshold(&[0.0, 2.0]).unwrap();
        assert_eq!((t.mae, t.sigma, t.threshold), (1.0, 1.0, 9.0));
    }

    #[test]
    fn strict_inequality() {
        let t = compute_threshold(&[0.0, 2.0]).unwrap();
        assert!(!t.is_anomalous(9.0));
        assert!(t.is_anomalous(9.0 + 1e-12));
    }

    #[test]
    fn bad_inputs() {
        assert!(compute_threshold(&[]).is_err());
        assert!(compute_threshold(&[1.0, f64::NAN]).is_err());
        assert!(compute_threshold(&[-1.0]).is_err());
    }

    #[test]
    fn recompute_is_exact() {
        let t = compute_threshold(&[0.3, 0.1, 0.7, 0.25]).unwrap();
        assert_eq!(t.recompute().unwrap(), t);
    }
}
