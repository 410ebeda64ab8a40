//! One-class SVM with an RBF kernel, trained by sequential minimal
//! optimisation on the scaled dual:
//!
//! minimise ½ αᵀQα subject to 0 ≤ αᵢ ≤ 1/(νn) and Σαᵢ = 1.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AlignedFrame;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / D`.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcsvmParams {
    pub nu: f64,
    pub gamma: Gamma,
    pub tolerance: f64,
    /// Zero picks `max(10^7, 100 n)`.
    pub max_iterations: usize,
    pub cache_mb: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        Self {
            nu: 0.5,
            gamma: Gamma::Auto,
            tolerance: 1e-3,
            max_iterations: 0,
            cache_mb: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub nu: f64,
    pub gamma: f64,
    pub width: usize,
    pub n_train: usize,
    /// Box bound `1 / (nu * n_train)`.
    pub upper_bound: f64,
    pub rho: f64,
    /// Support vectors, row-major.
    pub support: Vec<f64>,
    pub coef: Vec<f64>,
    /// Training indices of the support vectors.
    pub support_index: Vec<usize>,
    /// Maximal KKT violation at termination.
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Bounded FIFO cache of kernel rows.
struct KernelRows<'a> {
    data: &'a [f64],
    width: usize,
    n: usize,
    gamma: f64,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(data: &'a [f64], width: usize, gamma: f64, cache_mb: usize) -> Self {
        let n = data.len() / width;
        let capacity = (cache_mb * (1 << 20) / (8 * n.max(1))).max(2);
        Self {
            data,
            width,
            n,
            gamma,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity,
        }
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn compute(&self, i: usize) -> Vec<f64> {
        let xi = self.point(i);
        (0..self.n).map(|j| rbf(self.gamma, xi, self.point(j))).collect()
    }

    fn ensure(&mut self, i: usize) {
        if self.rows.contains_key(&i) {
            return;
        }
        if self.rows.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        let row = self.compute(i);
        self.rows.insert(i, row);
        self.order.push_back(i);
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[&i]
    }
}

/// `(m, M, i)`: the largest `-G` over indices that may grow, the smallest
/// `-G` over indices that may shrink, and the maximiser `i`.
fn extremes(alpha: &[f64], grad: &[f64], c: f64) -> (f64, f64, Option<usize>) {
    let (mut gmax, mut gmin, mut arg) = (f64::NEG_INFINITY, f64::INFINITY, None);
    for (t, (&a, &g)) in alpha.iter().zip(grad).enumerate() {
        if a < c && -g > gmax {
            gmax = -g;
            arg = Some(t);
        }
        if a > 0.0 && -g < gmin {
            gmin = -g;
        }
    }
    (gmax, gmin, arg)
}

/// KKT violation `m - M` of a dual point; zero means optimal.
pub fn kkt_residual(alpha: &[f64], grad: &[f64], upper_bound: f64) -> f64 {
    let (m, big_m, _) = extremes(alpha, grad, upper_bound);
    (m - big_m).max(0.0)
}

pub fn ocsvm_fit(data: &[f64], width: usize, params: OcsvmParams) -> Result<OcsvmModel> {
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(Error::validation(format!("nu must be in (0, 1], got {}", params.nu)));
    }
    if width == 0 || data.len() % width != 0 {
        return Err(Error::validation("data length is not a multiple of the row width"));
    }
    let n = data.len() / width;
    if n < 2 {
        return Err(Error::InsufficientRows { needed: 1, got: n });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("ocsvm input must be finite"));
    }
    let gamma = match params.gamma {
        Gamma::Auto => 1.0 / width as f64,
        Gamma::Value(g) if g > 0.0 => g,
        Gamma::Value(g) => return Err(Error::validation(format!("gamma must be > 0, got {g}"))),
    };
    let c = 1.0 / (params.nu * n as f64);
    let max_iter = if params.max_iterations == 0 {
        10_000_000usize.max(100 * n)
    } else {
        params.max_iterations
    };

    let mut kernel = KernelRows::new(data, width, gamma, params.cache_mb);
    let mut alpha = vec![1.0 / n as f64; n];
    // G = Qα with α uniform: row sums of the kernel matrix over n.
    let mut grad: Vec<f64> = (0..n)
        .map(|i| {
            let xi = kernel.point(i);
            (0..n).map(|j| rbf(gamma, xi, kernel.point(j))).sum::<f64>() / n as f64
        })
        .collect();

    let mut iterations = 0;
    loop {
        let (gmax, gmin, i) = extremes(&alpha, &grad, c);
        let Some(i) = i else { break };
        if gmax - gmin <= params.tolerance {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::Convergence {
                iterations,
                residual: gmax - gmin,
            });
        }
        iterations += 1;

        kernel.ensure(i);
        let mut best: Option<(usize, f64)> = None;
        {
            let qi = kernel.row(i);
            for t in 0..n {
                if alpha[t] > 0.0 && -grad[t] < gmax {
                    let b = gmax + grad[t];
                    let a = (2.0 - 2.0 * qi[t]).max(TAU);
                    let obj = -(b * b) / a;
                    if best.is_none_or(|(_, o)| obj <= o) {
                        best = Some((t, obj));
                    }
                }
            }
        }
        let Some((j, _)) = best else { break };
        kernel.ensure(j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = kernel.row(j)[i];
        let quad = (2.0 - 2.0 * qij).max(TAU);
        let delta = (grad[i] - grad[j]) / quad;
        let sum = old_i + old_j;
        let (mut ai, mut aj) = (old_i - delta, old_j + delta);
        if sum > c {
            if ai > c {
                ai = c;
                aj = sum - c;
            }
        } else if aj < 0.0 {
            aj = 0.0;
            ai = sum;
        }
        if sum > c {
            if aj > c {
                aj = c;
                ai = sum - c;
            }
        } else if ai < 0.0 {
            ai = 0.0;
            aj = sum;
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        if di == 0.0 && dj == 0.0 {
            continue;
        }
        // Both rows may not survive eviction together; copy one.
        let qj = kernel.row(j).to_vec();
        kernel.ensure(i);
        let qi = kernel.row(i);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
    }

    let rho = compute_rho(&alpha, &grad, c);
    let residual = kkt_residual(&alpha, &grad, c);
    let mut support = Vec::new();
    let mut coef = Vec::new();
    let mut support_index = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support.extend_from_slice(&data[i * width..(i + 1) * width]);
            coef.push(a);
            support_index.push(i);
        }
    }
    Ok(OcsvmModel {
        nu: params.nu,
        gamma,
        width,
        n_train: n,
        upper_bound: c,
        rho,
        support,
        coef,
        support_index,
        kkt_residual: residual,
        iterations,
    })
}

/// Offset from the free support vectors, or the middle of the feasible
/// interval when every coefficient sits at a bound.
fn compute_rho(alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for (&a, &g) in alpha.iter().zip(grad) {
        if a >= c {
            lb = lb.max(g);
        } else if a <= 0.0 {
            ub = ub.min(g);
        } else {
            sum_free += g;
            n_free += 1;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

pub fn ocsvm_fit_frame(frame: &AlignedFrame, params: OcsvmParams) -> Result<OcsvmModel> {
    if !frame.is_complete() {
        return Err(Error::validation("ocsvm needs a frame without missing cells"));
    }
    ocsvm_fit(frame.values(), frame.width(), params)
}

impl OcsvmModel {
    /// `Σ αᵢ K(xᵢ, row) − ρ`; nonnegative means inlier.
    pub fn decision_function(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.width {
            return Err(Error::validation(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.width
            )));
        }
        let s: f64 = self
            .coef
            .iter()
            .zip(self.support.chunks_exact(self.width))
            .map(|(a, sv)| a * rbf(self.gamma, sv, row))
            .sum();
        Ok(s - self.rho)
    }

    pub fn predict(&self, row: &[f64]) -> Result<i8> {
        Ok(if self.decision_function(row)? >= 0.0 { 1 } else { -1 })
    }
}

pub fn ocsvm_predict(model: &OcsvmModel, row: &[f64]) -> Result<i8> {
    model.predict(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_splits_evenly() {
        let m = ocsvm_fit(&[1.0, 2.0, 1.0, 2.0], 2, OcsvmParams::default()).unwrap();
        assert_eq!(m.coef, [0.5, 0.5]);
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap(), 1);
    }

    #[test]
    fn nu_bounds() {
        for nu in [0.0, -0.1, 1.5] {
            let p = OcsvmParams { nu, ..Default::default() };
            assert!(ocsvm_fit(&[0.0, 1.0], 1, p).is_err());
        }
    }

    #[test]
    fn width_mismatch() {
        let m = ocsvm_fit(&[0.0, 1.0, 2.0], 1, OcsvmParams::default()).unwrap();
        assert!(m.decision_function(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn tiny_cache_gives_same_solution() {
        let data: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 / 5.0).collect();
        let a = ocsvm_fit(&data, 2, OcsvmParams::default()).unwrap();
        let b = ocsvm_fit(&data, 2, OcsvmParams { cache_mb: 0, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }
}
