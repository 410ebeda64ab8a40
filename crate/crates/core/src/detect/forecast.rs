//! Forecasting detectors: predict the row after each window, threshold the
//! per-window loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{LossKind, Network};
use super::threshold::{compute_threshold, LossThreshold};
use crate::error::{Error, Result};
use crate::model::{AnomalyVerdict, DetectorKind, Taxonomy, WindowTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    Conv1d,
    Recurrent,
}

impl ForecasterKind {
    pub fn detector(&self) -> DetectorKind {
        match self {
            ForecasterKind::Conv1d => DetectorKind::ConvForecaster,
            ForecasterKind::Recurrent => DetectorKind::RecurrentForecaster,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub time_steps: usize,
    pub units: usize,
    pub kernel_size: usize,
    pub filters: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            time_steps: 74,
            units: 32,
            kernel_size: 32,
            filters: 5,
            max_epochs: 100,
            batch_size: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 3,
            min_delta: 1e-2,
            seed: 0,
        }
    }
}

impl ForecasterConfig {
    pub fn network(&self, kind: ForecasterKind, streams: usize) -> Result<Network> {
        if streams == 0 || self.time_steps == 0 {
            return Err(Error::validation("forecaster needs at least one stream and one step"));
        }
        match kind {
            ForecasterKind::Recurrent => {
                if self.units == 0 {
                    return Err(Error::validation("units must be positive"));
                }
                Ok(Network::Lstm {
                    inputs: streams,
                    units: self.units,
                    outputs: streams,
                })
            }
            ForecasterKind::Conv1d => {
                if self.kernel_size == 0 || self.filters == 0 {
                    return Err(Error::validation("kernel_size and filters must be positive"));
                }
                if self.kernel_size > self.time_steps {
                    return Err(Error::validation(format!(
                        "kernel_size {} exceeds time_steps {}",
                        self.kernel_size, self.time_steps
                    )));
                }
                Ok(Network::Conv1d {
                    inputs: streams,
                    time_steps: self.time_steps,
                    kernel: self.kernel_size,
                    filters: self.filters,
                    outputs: streams,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &ForecasterConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Early stopping on the epoch training loss: an epoch improves when its
/// loss is more than `min_delta` below the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records one epoch (1-based) and returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss + self.min_delta < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub epoch_losses: Vec<f64>,
    /// Last epoch that counted as an improvement.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterModel {
    pub kind: ForecasterKind,
    pub config: ForecasterConfig,
    pub network: Network,
    pub columns: Vec<String>,
    pub params: Vec<f64>,
    pub optimizer: AdamState,
}

impl ForecasterModel {
    /// Untrained model with seeded initial weights.
    pub fn init(kind: ForecasterKind, config: &ForecasterConfig, columns: Vec<String>) -> Result<Self> {
        let network = config.network(kind, columns.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = network.init(&mut rng);
        Ok(Self {
            kind,
            config: config.clone(),
            optimizer: AdamState::new(params.len()),
            network,
            columns,
            params,
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        self.network.loss_kind()
    }

    fn check(&self, windows: &WindowTensor) -> Result<()> {
        if windows.time_steps() != self.config.time_steps {
            return Err(Error::validation(format!(
                "windows have {} steps, model expects {}",
                windows.time_steps(),
                self.config.time_steps
            )));
        }
        if windows.columns() != self.columns.as_slice() {
            return Err(Error::validation(format!(
                "window columns {:?} do not match model columns {:?}",
                windows.columns(),
                self.columns
            )));
        }
        Ok(())
    }

    pub fn predict(&self, window: &[f64]) -> Vec<f64> {
        self.network.predict(&self.params, window)
    }

    /// Loss of every window against its next row, in window order.
    pub fn sample_losses(&self, windows: &WindowTensor) -> Result<Vec<f64>> {
        self.check(windows)?;
        Ok((0..windows.samples())
            .into_par_iter()
            .map(|i| self.network.loss(&self.params, windows.window(i), windows.target(i)))
            .collect())
    }

    /// Mean loss and gradient over the given samples, summed in index order.
    pub fn batch_gradient(&self, windows: &WindowTensor, batch: &[usize]) -> (f64, Vec<f64>) {
        let n = self.params.len();
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|&i| {
                let mut g = vec![0.0; n];
                let l = self
                    .network
                    .loss_grad(&self.params, windows.window(i), windows.target(i), &mut g);
                (l, g)
            })
            .collect();
        let mut total = vec![0.0; n];
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        total.iter_mut().for_each(|v| *v *= scale);
        (loss * scale, total)
    }
}

/// Trains a forecaster and derives its loss threshold from the training
/// windows.
pub fn forecaster_train(
    windows: &WindowTensor,
    kind: ForecasterKind,
    config: &ForecasterConfig,
) -> Result<(ForecasterModel, LossThreshold, TrainReport)> {
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::validation("batch_size and max_epochs must be positive"));
    }
    if windows.samples() < config.batch_size {
        return Err(Error::InsufficientRows {
            needed: config.batch_size + config.time_steps - 1,
            got: windows.samples() + windows.time_steps(),
        });
    }
    let mut model = ForecasterModel::init(kind, config, windows.columns().to_vec())?;
    model.check(windows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..windows.samples()).collect();
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut epoch_losses = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = model.batch_gradient(windows, batch);
            sum += loss * batch.len() as f64;
            let mut params = std::mem::take(&mut model.params);
            model.optimizer.update(&mut params, &grad, config);
            model.params = params;
        }
        let epoch_loss = sum / windows.samples() as f64;
        if !epoch_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        epoch_losses.push(epoch_loss);
        if stopper.observe(epoch, epoch_loss) {
            stopped_early = true;
            break;
        }
    }

    let threshold = compute_threshold(&model.sample_losses(windows)?)?;
    let report = TrainReport {
        epochs_run: epoch_losses.len(),
        best_epoch: stopper.best_epoch(),
        epoch_losses,
        stopped_early,
    };
    Ok((model, threshold, report))
}

/// One verdict per window, stamped with the timestamp of the predicted row.
pub fn forecaster_detect(
    model: &ForecasterModel,
    threshold: &LossThreshold,
    windows: &WindowTensor,
    config_id: &str,
) -> Result<Vec<AnomalyVerdict>> {
    let losses = model.sample_losses(windows)?;
    let taxonomy = if windows.streams() > 1 {
        Taxonomy::Combined
    } else {
        Taxonomy::Contextual
    };
    Ok(losses
        .into_iter()
        .enumerate()
        .map(|(i, loss)| {
            AnomalyVerdict::new(
                windows.target_timestamp(i),
                windows.columns().to_vec(),
                loss,
                threshold.threshold,
                taxonomy,
                model.kind.detector(),
                config_id,
            )
        })
        .collect())
}
