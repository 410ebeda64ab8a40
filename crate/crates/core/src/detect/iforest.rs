//! Isolation forest.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AlignedFrame;

/// Score above which a row is reported as anomalous.
pub const IF_CUTOFF: f64 = 0.5;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IForestParams {
    pub trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IForestParams {
    fn default() -> Self {
        Self {
            trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        size: usize,
    },
    Split {
        column: usize,
        value: f64,
        left: usize,
        right: usize,
        size: usize,
    },
}

/// Nodes in an arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub params: IForestParams,
    pub width: usize,
    /// Subsample size actually used, `min(subsample, n)`.
    pub psi: usize,
    pub trees: Vec<IsolationTree>,
}

/// Harmonic number approximation used by the average path length.
fn harmonic(n: f64) -> f64 {
    n.ln() + EULER_GAMMA
}

/// Average path length of an unsuccessful search in a binary search tree of
/// `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n
        }
    }
}

pub fn height_limit(psi: usize) -> usize {
    (psi.max(1) as f64).log2().ceil() as usize
}

struct Builder<'a> {
    data: &'a [f64],
    width: usize,
    limit: usize,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: idx.len() });
        if depth >= self.limit || idx.len() <= 1 {
            return id;
        }
        let w = self.width;
        let ranges: Vec<(usize, f64, f64)> = (0..w)
            .filter_map(|c| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = self.data[r * w + c];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((c, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (column, lo, hi) = ranges[self.rng.random_range(0..ranges.len())];
        let value = loop {
            let v = self.rng.random_range(lo..hi);
            if v > lo {
                break v;
            }
        };
        // Partition in place: values below the split go left.
        let mut mid = 0;
        for k in 0..idx.len() {
            if self.data[idx[k] * w + column] < value {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            column,
            value,
            left,
            right,
            size: l.len() + r.len(),
        };
        id
    }
}

impl IsolationTree {
    /// Depth at which `row` lands plus the average path length of the
    /// unresolved points sharing its leaf.
    pub fn path_length(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(*size),
                Node::Split {
                    column,
                    value,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*column] < *value { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &IsolationTree, n: usize) -> usize {
            match &t.nodes[n] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

/// Fits a forest on `n = data.len() / width` row-major points.
pub fn if_fit(data: &[f64], width: usize, params: IForestParams) -> Result<IsolationForestModel> {
    if width == 0 || data.len() % width != 0 {
        return Err(Error::validation("data length is not a multiple of the row width"));
    }
    let n = data.len() / width;
    if n < 2 {
        return Err(Error::InsufficientRows { needed: 1, got: n });
    }
    if params.trees == 0 || params.subsample < 2 {
        return Err(Error::validation("need at least one tree and a subsample of 2 or more"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("isolation forest input must be finite"));
    }
    let psi = params.subsample.min(n);
    let limit = height_limit(psi);
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(t as u64));
            let mut idx = sample(&mut rng, n, psi).into_vec();
            let mut b = Builder {
                data,
                width,
                limit,
                nodes: Vec::new(),
                rng,
            };
            b.build(&mut idx, 0);
            IsolationTree { nodes: b.nodes }
        })
        .collect();
    Ok(IsolationForestModel {
        params,
        width,
        psi,
        trees,
    })
}

pub fn if_fit_frame(frame: &AlignedFrame, params: IForestParams) -> Result<IsolationForestModel> {
    if !frame.is_complete() {
        return Err(Error::validation("isolation forest needs a frame without missing cells"));
    }
    if_fit(frame.values(), frame.width(), params)
}

impl IsolationForestModel {
    pub fn mean_path_length(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.width {
            return Err(Error::validation(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.width
            )));
        }
        let total: f64 = self.trees.iter().map(|t| t.path_length(row)).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// Anomaly score in `(0, 1]`; higher is more anomalous.
    pub fn score(&self, row: &[f64]) -> Result<f64> {
        Ok(score_from_path(self.mean_path_length(row)?, self.psi))
    }
}

pub fn score_from_path(mean_path: f64, psi: usize) -> f64 {
    let c = average_path_length(psi);
    if c == 0.0 {
        return 1.0;
    }
    2f64.powf(-mean_path / c)
}

pub fn if_score(model: &IsolationForestModel, row: &[f64]) -> Result<f64> {
    model.score(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // 2 * (ln 2 + gamma) - 4/3
        let c3 = 2.0 * (2f64.ln() + EULER_GAMMA) - 4.0 / 3.0;
        assert!((average_path_length(3) - c3).abs() < 1e-15);
        assert_eq!(height_limit(256), 8);
        assert_eq!(height_limit(2), 1);
        assert_eq!(height_limit(200), 8);
    }

    #[test]
    fn score_at_normalizer_is_half() {
        assert_eq!(score_from_path(average_path_length(256), 256), 0.5);
        assert!(score_from_path(1e-9, 256) > 0.999_999);
    }

    #[test]
    fn two_points_split_once() {
        let m = if_fit(&[0.0, 1.0], 1, IForestParams { seed: 3, ..Default::default() }).unwrap();
        for t in &m.trees {
            assert_eq!(t.nodes.len(), 3);
            assert_eq!(t.path_length(&[0.0]), 1.0);
            assert_eq!(t.path_length(&[1.0]), 1.0);
        }
    }

    #[test]
    fn constant_column_gives_root_leaves() {
        let m = if_fit(&[4.0; 10], 1, IForestParams::default()).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let s: Vec<f64> = [4.0, 0.0, 100.0].iter().map(|v| m.score(&[*v]).unwrap()).collect();
        assert!(s.iter().all(|x| *x == s[0]));
    }

    #[test]
    fn errors() {
        assert!(if_fit(&[1.0], 1, IForestParams::default()).is_err());
        let m = if_fit(&[0.0, 1.0, 2.0, 3.0], 2, IForestParams::default()).unwrap();
        assert!(m.score(&[1.0]).is_err());
    }
}
