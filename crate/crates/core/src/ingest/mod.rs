//! Reading acquisition, cleaning and master-table alignment.
//!
//! Readings from every device are placed on one shared time grid. Within a
//! grid tick the latest reading wins; short gaps are forward-filled and long
//! outages stay missing.

pub mod live;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::StreamInventory;
use crate::model::{AlignedFrame, SensorReading, StreamId, Timestamp, Value};

pub use live::{parse_payload, subscribe, subscribe_with, Backoff, LinkState, LiveStats, ReadingSink, Subscription};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    #[default]
    Replay,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default)]
    pub mode: IngestMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broker_uri: Option<String>,
    /// Topics to keep; empty keeps every topic in the inventory.
    #[serde(default)]
    pub topics: Vec<String>,
    /// Grid period in seconds.
    pub grid_period: i64,
    #[serde(default = "default_max_gap_fill")]
    pub max_gap_fill: usize,
    #[serde(default = "default_true")]
    pub drop_incomplete_rows: bool,
}

fn default_max_gap_fill() -> usize {
    5
}

fn default_true() -> bool {
    true
}

impl IngestConfig {
    pub fn replay(grid_period: i64) -> Self {
        Self {
            mode: IngestMode::Replay,
            broker_uri: None,
            topics: Vec::new(),
            grid_period,
            max_gap_fill: default_max_gap_fill(),
            drop_incomplete_rows: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_period <= 0 {
            return Err(Error::validation("grid_period must be > 0"));
        }
        if self.mode == IngestMode::Live && self.broker_uri.is_none() {
            return Err(Error::validation("live mode requires broker_uri"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cleaned {
    pub readings: Vec<SensorReading>,
    pub dropped: usize,
}

/// Drops null, non-numeric and non-finite readings and coerces numeric text
/// to reals. Order is preserved.
pub fn clean(readings: &[SensorReading]) -> Cleaned {
    let mut out = Vec::with_capacity(readings.len());
    for r in readings {
        let v = match &r.value {
            Value::Number(v) => Some(*v),
            Value::Text(t) => t.trim().parse::<f64>().ok(),
            Value::Null => None,
        };
        if let Some(v) = v.filter(|v| v.is_finite()) {
            out.push(SensorReading {
                value: Value::Number(v),
                ..r.clone()
            });
        }
    }
    Cleaned {
        dropped: readings.len() - out.len(),
        readings: out,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignStats {
    /// Grid ticks spanned by the input.
    pub ticks: usize,
    pub filled_cells: usize,
    pub dropped_rows: usize,
    /// Readings on topics outside the configured selection.
    pub ignored_readings: usize,
}

/// Builds the master table. See [`align_with_stats`].
pub fn align(
    readings: &[SensorReading],
    cfg: &IngestConfig,
    inventory: &StreamInventory,
) -> Result<AlignedFrame> {
    align_with_stats(readings, cfg, inventory).map(|(f, _)| f)
}

/// Places cleaned readings on a grid of `cfg.grid_period` seconds anchored at
/// a multiple of the period. Columns are the inventory streams of the
/// selected topics in canonical order.
pub fn align_with_stats(
    readings: &[SensorReading],
    cfg: &IngestConfig,
    inventory: &StreamInventory,
) -> Result<(AlignedFrame, AlignStats)> {
    cfg.validate()?;
    let period = cfg.grid_period;
    let ids = inventory.select_topics(&cfg.topics);
    let index: HashMap<StreamId, usize> = ids.iter().cloned().zip(0..).collect();
    let columns: Vec<String> = ids.iter().map(StreamId::to_string).collect();
    let width = columns.len();

    let mut stats = AlignStats::default();
    let mut selected: Vec<(Timestamp, usize, f64)> = Vec::with_capacity(readings.len());
    for r in readings {
        let id = r.stream_id();
        if !inventory.contains(&id) {
            return Err(Error::validation(format!("unknown stream `{id}`")));
        }
        let v = match r.value {
            Value::Number(v) if v.is_finite() => v,
            _ => {
                return Err(Error::validation(format!(
                    "reading on `{id}` at {} is not a cleaned number",
                    r.timestamp
                )))
            }
        };
        match index.get(&id) {
            Some(&c) => selected.push((r.timestamp, c, v)),
            None => stats.ignored_readings += 1,
        }
    }
    if selected.is_empty() {
        return Err(Error::EmptyFrame("no readings on the selected streams".into()));
    }

    let min_ts = selected.iter().map(|s| s.0).min().unwrap();
    let max_ts = selected.iter().map(|s| s.0).max().unwrap();
    let origin = min_ts.div_euclid(period) * period;
    let ticks = ((max_ts - origin).div_euclid(period) + 1) as usize;
    stats.ticks = ticks;

    // Latest reading per cell; ties on timestamp go to the later arrival.
    let mut latest: Vec<Option<Timestamp>> = vec![None; ticks * width];
    let mut values = vec![0.0; ticks * width];
    let mut mask = vec![false; ticks * width];
    for &(ts, c, v) in &selected {
        let cell = ((ts - origin).div_euclid(period) as usize) * width + c;
        if latest[cell].is_none_or(|prev| ts >= prev) {
            latest[cell] = Some(ts);
            values[cell] = v;
            mask[cell] = true;
        }
    }

    for c in 0..width {
        let mut last_observed: Option<usize> = None;
        let mut row = 0;
        while row < ticks {
            if mask[row * width + c] {
                last_observed = Some(row);
                row += 1;
                continue;
            }
            let start = row;
            while row < ticks && !mask[row * width + c] {
                row += 1;
            }
            let gap = row - start;
            if let Some(src) = last_observed {
                if gap <= cfg.max_gap_fill {
                    let v = values[src * width + c];
                    for r in start..row {
                        values[r * width + c] = v;
                        mask[r * width + c] = true;
                    }
                    stats.filled_cells += gap;
                }
            }
        }
    }

    let grid: Vec<Timestamp> = (0..ticks).map(|k| origin + k as i64 * period).collect();
    let frame = AlignedFrame::new(period, grid, columns, values, mask)?;
    if !cfg.drop_incomplete_rows {
        return Ok((frame, stats));
    }
    let keep: Vec<usize> = (0..frame.rows())
        .filter(|&r| frame.row_mask(r).iter().all(|&m| m))
        .collect();
    stats.dropped_rows = frame.rows() - keep.len();
    Ok((frame.select_rows(&keep), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::{EdgeProcess, InventoryEntry};

    fn inventory(streams: &[(&str, &str)]) -> StreamInventory {
        StreamInventory::new(
            streams
                .iter()
                .map(|(t, s)| InventoryEntry {
                    device_id: format!("dev-{t}"),
                    topic: t.to_string(),
                    stream: s.to_string(),
                    unique_sensor: true,
                    edge_process: EdgeProcess::None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn raw(ts: i64, value: Value) -> SensorReading {
        SensorReading {
            timestamp: ts,
            device_id: "H7".into(),
            topic: "sense-hat".into(),
            stream: "temp".into(),
            value,
        }
    }

    #[test]
    fn clean_drops_null_and_text() {
        let input = vec![
            raw(0, Value::Number(22.5)),
            raw(1, Value::Null),
            raw(2, Value::Text("abc".into())),
            raw(3, Value::Number(23.0)),
        ];
        let out = clean(&input);
        assert_eq!(out.dropped, 2);
        let vals: Vec<f64> = out.readings.iter().map(|r| r.value.as_number().unwrap()).collect();
        assert_eq!(vals, [22.5, 23.0]);
        assert_eq!(out.readings[1].timestamp, 3);
    }

    #[test]
    fn clean_of_nothing_is_nothing() {
        let out = clean(&[]);
        assert!(out.readings.is_empty());
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn clean_keeps_integer_payloads_as_reals() {
        let out = clean(&[raw(0, Value::Text("22".into())), raw(1, Value::Number(f64::NAN))]);
        assert_eq!(out.readings.len(), 1);
        assert_eq!(out.readings[0].value, Value::Number(22.0));
    }

    #[test]
    fn single_stream_without_gaps_is_fully_observed() {
        let inv = inventory(&[("sense-hat", "temp")]);
        let readings: Vec<_> = (0..5)
            .map(|k| SensorReading::new(120 + k * 60 + 7, "H7", "sense-hat", "temp", k as f64))
            .collect();
        let f = align(&readings, &IngestConfig::replay(60), &inv).unwrap();
        assert_eq!(f.rows(), 5);
        assert!(f.is_complete());
        assert_eq!(f.grid()[0], 120);
        assert_eq!(f.column_values(0), [0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn last_write_wins_within_a_tick() {
        let inv = inventory(&[("sense-hat", "temp")]);
        let readings = vec![
            SensorReading::new(10, "H7", "sense-hat", "temp", 1.0),
            SensorReading::new(50, "H7", "sense-hat", "temp", 3.0),
            SensorReading::new(30, "H7", "sense-hat", "temp", 2.0),
            SensorReading::new(50, "H7", "sense-hat", "temp", 4.0),
        ];
        let f = align(&readings, &IngestConfig::replay(60), &inv).unwrap();
        assert_eq!(f.column_values(0), [4.0]);
    }

    #[test]
    fn long_outage_rows_are_dropped_short_ones_filled() {
        let inv = inventory(&[("a", "x"), ("b", "y")]);
        let mut readings = Vec::new();
        for k in 0..40 {
            readings.push(SensorReading::new(k * 60, "d", "a", "x", k as f64));
            let silent_long = (10..20).contains(&k);
            let silent_short = (30..33).contains(&k);
            if !silent_long && !silent_short {
                readings.push(SensorReading::new(k * 60, "d", "b", "y", -(k as f64)));
            }
        }
        let (f, stats) = align_with_stats(&readings, &IngestConfig::replay(60), &inv).unwrap();
        assert_eq!(stats.dropped_rows, 10);
        assert_eq!(stats.filled_cells, 3);
        assert_eq!(f.rows(), 30);
        assert!(f.grid().iter().all(|t| !(600..1200).contains(t)));
        // The short gap carries tick 29's value forward.
        let r = f.grid().iter().position(|&t| t == 31 * 60).unwrap();
        assert_eq!(f.value(r, 1), Some(-29.0));
    }

    #[test]
    fn keeping_incomplete_rows_leaves_them_masked() {
        let inv = inventory(&[("a", "x"), ("b", "y")]);
        let readings = vec![
            SensorReading::new(0, "d", "a", "x", 1.0),
            SensorReading::new(600, "d", "a", "x", 1.0),
            SensorReading::new(600, "d", "b", "y", 1.0),
        ];
        let cfg = IngestConfig {
            drop_incomplete_rows: false,
            max_gap_fill: 2,
            ..IngestConfig::replay(60)
        };
        let f = align(&readings, &cfg, &inv).unwrap();
        assert_eq!(f.rows(), 11);
        // a/x: ticks 1..=9 silent, 9 > 2 so nothing is filled.
        assert_eq!(f.value(1, 0), None);
        assert_eq!(f.value(0, 1), None);
    }

    #[test]
    fn unknown_stream_and_empty_input_are_errors() {
        let inv = inventory(&[("a", "x")]);
        let cfg = IngestConfig::replay(60);
        assert!(matches!(align(&[], &cfg, &inv), Err(Error::EmptyFrame(_))));
        let stray = vec![SensorReading::new(0, "d", "zz", "q", 1.0)];
        assert!(matches!(align(&stray, &cfg, &inv), Err(Error::Validation(_))));
        let dirty = vec![raw(0, Value::Null)];
        let inv2 = inventory(&[("sense-hat", "temp")]);
        assert!(align(&dirty, &cfg, &inv2).is_err());
    }

    #[test]
    fn topic_selection_ignores_other_streams() {
        let inv = inventory(&[("a", "x"), ("b", "y")]);
        let cfg = IngestConfig {
            topics: vec!["a".into()],
            ..IngestConfig::replay(60)
        };
        let readings = vec![
            SensorReading::new(0, "d", "a", "x", 1.0),
            SensorReading::new(0, "d", "b", "y", 2.0),
        ];
        let (f, stats) = align_with_stats(&readings, &cfg, &inv).unwrap();
        assert_eq!(f.columns(), ["a/x"]);
        assert_eq!(stats.ignored_readings, 1);
    }

    #[test]
    fn config_validation() {
        assert!(IngestConfig::replay(0).validate().is_err());
        let live = IngestConfig {
            mode: IngestMode::Live,
            ..IngestConfig::replay(60)
        };
        assert!(live.validate().is_err());
    }
}
