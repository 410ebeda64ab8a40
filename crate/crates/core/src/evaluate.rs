//! Scoring against injected ground truth, stream-combination counts, and
//! timing sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{train_model, ConditionSpec, DetectorSpec};
use crate::error::{Error, Result};
use crate::inventory::StreamInventory;
use crate::model::{AlignedFrame, AnomalyVerdict, Condition, StreamId, Timestamp};
use crate::preprocess::{config_label, StageConfig};
use crate::synth::InjectionLog;

/// Event-level counts. `tp` and `fn_` count truth events; `fp` and `tn`
/// count verdicts outside every event's tolerance region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Verdicts scored.
    pub evaluated: u64,
    /// Verdicts inside some event's tolerance region.
    pub in_event: u64,
}

impl ConfusionCounts {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Flag rate over verdicts that are outside every event.
    pub fn false_positive_rate(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Matches flagged verdicts to logged events. A flag within
/// `tolerance_ticks` grid periods of an event interval, sharing at least
/// one stream with it, detects that event.
pub fn score(verdicts: &[AnomalyVerdict], truth: &InjectionLog, tolerance_ticks: u32) -> Result<ConfusionCounts> {
    let period = match truth.period_seconds {
        Some(p) if p > 0 => p,
        Some(p) => return Err(Error::validation(format!("truth log has period {p}"))),
        None => infer_period(verdicts)?,
    };
    if let Some((first, last)) = truth.span {
        for v in verdicts {
            if v.timestamp < first || v.timestamp > last || (v.timestamp - first) % period != 0 {
                return Err(Error::validation(format!(
                    "verdict at {} is not on the truth timeline [{first}, {last}] / {period}s",
                    v.timestamp
                )));
            }
        }
        for e in &truth.entries {
            if e.start < first || e.end > last {
                return Err(Error::validation("truth event outside its own span"));
            }
        }
    }
    let slack = period * tolerance_ticks as i64;
    let near = |ts: Timestamp, e: &crate::synth::Injection| ts >= e.start - slack && ts <= e.end + slack;

    let mut counts = ConfusionCounts::default();
    let mut detected = vec![false; truth.entries.len()];
    for v in verdicts {
        counts.evaluated += 1;
        let mut inside = false;
        for (k, e) in truth.entries.iter().enumerate() {
            if near(v.timestamp, e) {
                inside = true;
                if v.is_anomaly && v.streams.iter().any(|s| e.streams.contains(s)) {
                    detected[k] = true;
                }
            }
        }
        if inside {
            counts.in_event += 1;
        } else if v.is_anomaly {
            counts.fp += 1;
        } else {
            counts.tn += 1;
        }
    }
    counts.tp = detected.iter().filter(|d| **d).count() as u64;
    counts.fn_ = detected.len() as u64 - counts.tp;
    Ok(counts)
}

/// Smallest positive spacing between verdict timestamps.
fn infer_period(verdicts: &[AnomalyVerdict]) -> Result<i64> {
    let mut ts: Vec<Timestamp> = verdicts.iter().map(|v| v.timestamp).collect();
    ts.sort_unstable();
    ts.dedup();
    ts.windows(2)
        .map(|w| w[1] - w[0])
        .min()
        .ok_or_else(|| Error::validation("cannot infer the grid period: truth log has none and fewer than two verdicts"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CombinationScope {
    /// Subset of one device's streams.
    Intra(String),
    /// Subset of the unique-sensor streams.
    Inter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Combination {
    pub scope: CombinationScope,
    pub streams: Vec<StreamId>,
}

/// Lazily walks every non-empty subset: each device's streams first, then
/// the unique-sensor streams.
pub struct CombinationIter {
    groups: Vec<(CombinationScope, Vec<StreamId>)>,
    group: usize,
    mask: u128,
}

impl Iterator for CombinationIter {
    type Item = Combination;

    fn next(&mut self) -> Option<Combination> {
        loop {
            let (scope, streams) = self.groups.get(self.group)?;
            self.mask += 1;
            if self.mask >> streams.len() != 0 {
                self.group += 1;
                self.mask = 0;
                continue;
            }
            let picked = streams
                .iter()
                .enumerate()
                .filter(|(i, _)| self.mask >> i & 1 == 1)
                .map(|(_, s)| s.clone())
                .collect();
            return Some(Combination {
                scope: scope.clone(),
                streams: picked,
            });
        }
    }
}

fn subsets(k: usize) -> u128 {
    if k >= 128 {
        u128::MAX
    } else {
        (1u128 << k) - 1
    }
}

/// `(intra, inter, listing)` where intra sums `2^k - 1` over devices and
/// inter is `2^U - 1` over the U unique-sensor streams.
pub fn enumerate_combinations(inventory: &StreamInventory) -> (u128, u128, CombinationIter) {
    let by_device = inventory.streams_by_device();
    let unique = inventory.unique_streams();
    let intra = by_device
        .iter()
        .map(|(_, s)| subsets(s.len()))
        .fold(0u128, u128::saturating_add);
    let inter = subsets(unique.len());
    let mut groups: Vec<(CombinationScope, Vec<StreamId>)> = by_device
        .into_iter()
        .map(|(d, s)| (CombinationScope::Intra(d), s))
        .collect();
    if !unique.is_empty() {
        groups.push((CombinationScope::Inter, unique));
    }
    (intra, inter, CombinationIter { groups, group: 0, mask: 0 })
}

/// One configuration of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub config_id: String,
    #[serde(default = "ConditionSpec::unconditional")]
    pub condition: ConditionSpec,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
    pub detector: DetectorSpec,
}

/// Frames shared by every run of a sweep.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: AlignedFrame,
    /// Scored frame; the training frame when absent.
    pub test: Option<AlignedFrame>,
    pub truth: Option<InjectionLog>,
    pub tolerance_ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub condition: Condition,
    pub pipeline: String,
    pub detector: String,
    pub scaled: bool,
    pub wall_seconds: f64,
    pub epochs: usize,
    pub anomaly_count: usize,
    pub counts: Option<ConfusionCounts>,
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(plan: &RunPlan, error: String) -> Self {
        Self {
            config_id: plan.config_id.clone(),
            condition: plan.condition.condition,
            pipeline: config_label(&plan.stages),
            detector: plan.detector.detector().as_str().to_string(),
            scaled: plan.stages.iter().any(|s| matches!(s, StageConfig::Scale { .. })),
            wall_seconds: 0.0,
            epochs: 0,
            anomaly_count: 0,
            counts: None,
            error: Some(error),
        }
    }
}

/// Trains and scores one plan.
pub fn run_plan(plan: &RunPlan, data: &Dataset) -> Result<RunRecord> {
    let (model, timing) = train_model(&data.train, &plan.condition, &plan.stages, &plan.detector, &plan.config_id)?;
    let test = data.test.as_ref().unwrap_or(&data.train);
    let verdicts = model.detect(test, &plan.config_id)?;
    let counts = match &data.truth {
        Some(t) => Some(score(&verdicts, t, data.tolerance_ticks)?),
        None => None,
    };
    Ok(RunRecord {
        config_id: plan.config_id.clone(),
        condition: plan.condition.condition,
        pipeline: model.pipeline.label(),
        detector: model.detector.as_str().to_string(),
        scaled: model.pipeline.is_scaled(),
        wall_seconds: timing.wall_seconds,
        epochs: timing.epochs,
        anomaly_count: verdicts.iter().filter(|v| v.is_anomaly).count(),
        counts,
        error: None,
    })
}

/// Runs every plan on a pool of `workers` threads. A failing or panicking
/// run yields a record with `error` set. `sink` sees records one at a time,
/// in plan order, as soon as each prefix is complete.
pub fn benchmark(
    plans: &[RunPlan],
    data: &Dataset,
    workers: usize,
    mut sink: impl FnMut(&RunRecord) -> Result<()>,
) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    let mut out: Vec<Option<RunRecord>> = vec![None; plans.len()];
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            pool.install(|| {
                plans.par_iter().enumerate().for_each_with(tx, |tx, (i, plan)| {
                    let outcome = catch_unwind(AssertUnwindSafe(|| run_plan(plan, data)));
                    let record = match outcome {
                        Ok(Ok(r)) => r,
                        Ok(Err(e)) => RunRecord::failed(plan, e.to_string()),
                        Err(panic) => RunRecord::failed(plan, format!("panicked: {}", panic_message(&panic))),
                    };
                    let _ = tx.send((i, record));
                });
            });
        });
        let mut next = 0;
        for (i, record) in rx {
            out[i] = Some(record);
            while let Some(Some(r)) = out.get(next) {
                sink(r)?;
                next += 1;
            }
        }
        Ok(())
    })?;
    Ok(out.into_iter().map(|r| r.expect("every plan reports")).collect())
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

pub const RESULTS_HEADER: [&str; 11] = [
    "config_id",
    "condition",
    "pipeline",
    "detector",
    "wall_seconds",
    "epochs",
    "anomaly_count",
    "tp",
    "fp",
    "tn",
    "fn",
];

/// Append-only results table. The header is written once, when the file
/// is new or empty.
pub struct ResultsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl ResultsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let fresh = file.metadata()?.len() == 0;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            inner.write_record(RESULTS_HEADER)?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    pub fn append(&mut self, r: &RunRecord) -> Result<()> {
        let c = r.counts.unwrap_or_default();
        let counts = |v: u64| if r.counts.is_some() { v.to_string() } else { String::new() };
        // Failed runs keep their row; the error text goes in place of the
        // anomaly count so the table stays rectangular.
        let anomalies = match &r.error {
            Some(e) => format!("error: {e}"),
            None => r.anomaly_count.to_string(),
        };
        self.inner.write_record([
            r.config_id.clone(),
            r.condition.to_string(),
            r.pipeline.clone(),
            r.detector.clone(),
            format!("{:.6}", r.wall_seconds),
            r.epochs.to_string(),
            anomalies,
            counts(c.tp),
            counts(c.fp),
            counts(c.tn),
            counts(c.fn_),
        ])?;
        self.inner.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    /// `<scaled|raw>/<detector>`.
    pub series: String,
    pub config_ids: Vec<String>,
    pub wall_seconds: Vec<f64>,
    pub epochs: Vec<usize>,
}

/// Groups successful runs by scaling and detector, for timing comparisons.
pub fn plot_series(records: &[RunRecord]) -> Vec<PlotSeries> {
    let mut groups: BTreeMap<String, PlotSeries> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        let name = format!("{}/{}", if r.scaled { "scaled" } else { "raw" }, r.detector);
        let s = groups.entry(name.clone()).or_insert_with(|| PlotSeries {
            series: name,
            config_ids: Vec::new(),
            wall_seconds: Vec::new(),
            epochs: Vec::new(),
        });
        s.config_ids.push(r.config_id.clone());
        s.wall_seconds.push(r.wall_seconds);
        s.epochs.push(r.epochs);
    }
    groups.into_values().collect()
}

/// One JSON object per line, one line per series.
pub fn write_plot_data(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(crate::formats::create(path)?);
    for s in plot_series(records) {
        serde_json::to_writer(&mut w, &s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
