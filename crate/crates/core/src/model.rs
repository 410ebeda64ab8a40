//! Domain types shared by every stage of the pipeline.
//!
//! Timestamps are integer seconds since the Unix epoch (UTC). Frames keep an
//! explicit observation mask; cells that are not observed hold `0.0` and must
//! never be read as data.

use std::fmt;

use chrono::{DateTime, SecondsFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Timestamp = i64;

pub fn format_timestamp(ts: Timestamp) -> String {
    match DateTime::from_timestamp(ts, 0) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
        None => ts.to_string(),
    }
}

/// Parses either integer epoch seconds or an RFC 3339 instant. Sub-second
/// parts are truncated toward the earlier second.
pub fn parse_timestamp(text: &str) -> Result<Timestamp> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Ok(secs);
    }
    DateTime::parse_from_rfc3339(text)
        .map(|dt| dt.timestamp())
        .map_err(|e| Error::validation(format!("bad timestamp `{text}`: {e}")))
}

/// Seconds into the UTC day, in `[0, 86400)`.
pub fn second_of_day(ts: Timestamp) -> i64 {
    ts.rem_euclid(86_400)
}

/// Day of week with Monday = 0.
pub fn weekday(ts: Timestamp) -> u32 {
    // 1970-01-01 was a Thursday.
    ((ts.div_euclid(86_400) + 3).rem_euclid(7)) as u32
}

/// A (topic, stream) pair. Ordering is lexicographic by topic, then stream,
/// which is the canonical column order of every frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId {
    pub topic: String,
    pub stream: String,
}

impl StreamId {
    pub fn new(topic: impl Into<String>, stream: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            stream: stream.into(),
        }
    }

    /// Parses the `topic/stream` column form.
    pub fn parse(text: &str) -> Result<Self> {
        match text.split_once('/') {
            Some((topic, stream)) if !topic.is_empty() && !stream.is_empty() => {
                Ok(Self::new(topic, stream))
            }
            _ => Err(Error::validation(format!(
                "`{text}` is not a topic/stream identifier"
            ))),
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.topic, self.stream)
    }
}

/// A raw payload value as it arrives from a device, before cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Number(f64),
    Text(String),
    Null,
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// Interprets a CSV cell: empty is null, anything numeric is a number.
    pub fn from_cell(cell: &str) -> Self {
        let cell = cell.trim();
        if cell.is_empty() || cell.eq_ignore_ascii_case("null") {
            Value::Null
        } else if let Ok(v) = cell.parse::<f64>() {
            Value::Number(v)
        } else {
            Value::Text(cell.to_string())
        }
    }
}

/// One timestamped measurement from one stream of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub timestamp: Timestamp,
    pub device_id: String,
    pub topic: String,
    pub stream: String,
    pub value: Value,
}

impl SensorReading {
    pub fn new(
        timestamp: Timestamp,
        device_id: impl Into<String>,
        topic: impl Into<String>,
        stream: impl Into<String>,
        value: f64,
    ) -> Self {
        Self {
            timestamp,
            device_id: device_id.into(),
            topic: topic.into(),
            stream: stream.into(),
            value: Value::Number(value),
        }
    }

    pub fn stream_id(&self) -> StreamId {
        StreamId::new(self.topic.clone(), self.stream.clone())
    }
}

/// The synchronized master table: one row per grid tick, one column per
/// stream, row-major values plus an observation mask.
///
/// Every grid timestamp lies on the lattice `grid[0] + k * period`; rows may
/// be absent (dropped incomplete rows, condition subsets) but never repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    period: i64,
    grid: Vec<Timestamp>,
    columns: Vec<String>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl AlignedFrame {
    pub fn new(
        period: i64,
        grid: Vec<Timestamp>,
        columns: Vec<String>,
        mut values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if period <= 0 {
            return Err(Error::validation("grid period must be positive"));
        }
        let cells = grid.len() * columns.len();
        if values.len() != cells || mask.len() != cells {
            return Err(Error::validation(format!(
                "frame of {} rows x {} columns needs {cells} cells, got {} values and {} mask bits",
                grid.len(),
                columns.len(),
                values.len(),
                mask.len()
            )));
        }
        for (i, pair) in grid.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::validation(format!(
                    "grid not strictly increasing at row {}",
                    i + 1
                )));
            }
            if (pair[1] - pair[0]) % period != 0 {
                return Err(Error::validation(format!(
                    "row {} is off the {period}s grid",
                    i + 1
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return Err(Error::validation(format!("duplicate column `{c}`")));
            }
        }
        for (idx, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if m && !v.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite observed value at row {}, column `{}`",
                    idx / columns.len(),
                    columns[idx % columns.len()]
                )));
            }
            if !m {
                *v = 0.0;
            }
        }
        Ok(Self {
            period,
            grid,
            columns,
            values,
            mask,
        })
    }

    /// Builds a fully observed frame from row vectors.
    pub fn from_rows(
        period: i64,
        grid: Vec<Timestamp>,
        columns: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        if rows.len() != grid.len() {
            return Err(Error::validation("row count does not match grid length"));
        }
        let width = columns.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::validation(format!(
                    "row {i} has {} values, expected {width}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        let mask = vec![true; values.len()];
        Self::new(period, grid, columns, values, mask)
    }

    pub fn empty(period: i64, columns: Vec<String>) -> Result<Self> {
        Self::new(period, Vec::new(), columns, Vec::new(), Vec::new())
    }

    pub fn period(&self) -> i64 {
        self.period
    }

    pub fn grid(&self) -> &[Timestamp] {
        &self.grid
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Row-major cell values; unobserved cells read as `0.0`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.values[r * w..(r + 1) * w]
    }

    pub fn row_mask(&self, r: usize) -> &[bool] {
        let w = self.width();
        &self.mask[r * w..(r + 1) * w]
    }

    pub fn value(&self, r: usize, c: usize) -> Option<f64> {
        let idx = r * self.width() + c;
        self.mask[idx].then(|| self.values[idx])
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Observed values of one column, in row order.
    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).filter_map(|r| self.value(r, c)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let w = self.width();
        let mut values = Vec::with_capacity(rows.len() * w);
        let mut mask = Vec::with_capacity(rows.len() * w);
        let mut grid = Vec::with_capacity(rows.len());
        for &r in rows {
            grid.push(self.grid[r]);
            values.extend_from_slice(self.row(r));
            mask.extend_from_slice(self.row_mask(r));
        }
        Self {
            period: self.period,
            grid,
            columns: self.columns.clone(),
            values,
            mask,
        }
    }

    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::validation(format!("frame has no column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.rows() * idx.len());
        let mut mask = Vec::with_capacity(self.rows() * idx.len());
        for r in 0..self.rows() {
            let row = self.row(r);
            let row_mask = self.row_mask(r);
            for &c in &idx {
                values.push(row[c]);
                mask.push(row_mask[c]);
            }
        }
        Self::new(self.period, self.grid.clone(), names.to_vec(), values, mask)
    }

    /// Replaces every observed cell through `f(column, value)`.
    pub fn map_observed<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, f64) -> f64,
    {
        let w = self.width().max(1);
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .enumerate()
            .map(|(i, (&v, &m))| if m { f(i % w, v) } else { 0.0 })
            .collect();
        Self::new(
            self.period,
            self.grid.clone(),
            self.columns.clone(),
            values,
            self.mask.clone(),
        )
    }

    /// Content digest over grid, columns, exact value bits and mask.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.period.to_le_bytes());
        for c in &self.columns {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        for t in &self.grid {
            h.update(t.to_le_bytes());
        }
        for (v, m) in self.values.iter().zip(&self.mask) {
            h.update(v.to_bits().to_le_bytes());
            h.update([*m as u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Sliding windows over a complete frame: window `i` is rows `[i, i + T)`.
///
/// The tensor borrows nothing and copies the source rows exactly once; each
/// window is a contiguous slice of that buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    time_steps: usize,
    streams: usize,
    columns: Vec<String>,
    grid: Vec<Timestamp>,
    source: Vec<f64>,
}

impl WindowTensor {
    pub(crate) fn from_parts(
        time_steps: usize,
        columns: Vec<String>,
        grid: Vec<Timestamp>,
        source: Vec<f64>,
    ) -> Self {
        Self {
            time_steps,
            streams: columns.len(),
            columns,
            grid,
            source,
        }
    }

    pub fn samples(&self) -> usize {
        self.grid.len() - self.time_steps
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.samples(), self.time_steps, self.streams]
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// The `T x D` block of window `i`, row-major.
    pub fn window(&self, i: usize) -> &[f64] {
        let d = self.streams;
        &self.source[i * d..(i + self.time_steps) * d]
    }

    pub fn at(&self, i: usize, step: usize, stream: usize) -> f64 {
        self.source[(i + step) * self.streams + stream]
    }

    /// The row that follows window `i`, used as the one-step-ahead target.
    pub fn target(&self, i: usize) -> &[f64] {
        let d = self.streams;
        let r = i + self.time_steps;
        &self.source[r * d..(r + 1) * d]
    }

    pub fn origin_timestamps(&self) -> &[Timestamp] {
        &self.grid[..self.samples()]
    }

    pub fn target_timestamp(&self, i: usize) -> Timestamp {
        self.grid[i + self.time_steps]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Unconditional: every row.
    UC,
    /// Daytime rows.
    DT,
    /// Night-time rows.
    NT,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::UC => "UC",
            Condition::DT => "DT",
            Condition::NT => "NT",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "UC" => Ok(Condition::UC),
            "DT" => Ok(Condition::DT),
            "NT" => Ok(Condition::NT),
            _ => Err(Error::validation(format!("unknown condition `{s}`"))),
        }
    }
}

/// Per-row daytime flags derived from a light stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMask {
    pub flags: Vec<bool>,
    pub condition: Condition,
    pub source_stream: String,
    pub threshold: f64,
}

impl ConditionMask {
    pub fn daytime_rows(&self) -> Vec<usize> {
        self.rows_where(true)
    }

    pub fn nighttime_rows(&self) -> Vec<usize> {
        self.rows_where(false)
    }

    fn rows_where(&self, flag: bool) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == flag).then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    Point,
    Contextual,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    IsolationForest,
    Ocsvm,
    ConvForecaster,
    RecurrentForecaster,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::IsolationForest => "isolation_forest",
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::ConvForecaster => "conv_forecaster",
            DetectorKind::RecurrentForecaster => "recurrent_forecaster",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolation_forest" | "if" => Ok(DetectorKind::IsolationForest),
            "ocsvm" => Ok(DetectorKind::Ocsvm),
            "conv_forecaster" | "cnn" => Ok(DetectorKind::ConvForecaster),
            "recurrent_forecaster" | "rnn" | "lstm" => Ok(DetectorKind::RecurrentForecaster),
            _ => Err(Error::validation(format!("unknown detector `{s}`"))),
        }
    }
}

/// One detector decision. Scores are oriented so that larger means more
/// anomalous; `is_anomaly` is always `score > threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub timestamp: Timestamp,
    pub streams: Vec<String>,
    pub score: f64,
    pub threshold: f64,
    pub is_anomaly: bool,
    pub taxonomy: Taxonomy,
    pub detector: DetectorKind,
    pub config_id: String,
}

impl AnomalyVerdict {
    pub fn new(
        timestamp: Timestamp,
        streams: Vec<String>,
        score: f64,
        threshold: f64,
        taxonomy: Taxonomy,
        detector: DetectorKind,
        config_id: &str,
    ) -> Self {
        let taxonomy = if taxonomy == Taxonomy::Combined && streams.len() < 2 {
            Taxonomy::Contextual
        } else {
            taxonomy
        };
        Self {
            timestamp,
            streams,
            score,
            threshold,
            is_anomaly: score > threshold,
            taxonomy,
            detector,
            config_id: config_id.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_round_trip_and_truncate() {
        assert_eq!(parse_timestamp("2021-06-14T21:00:00Z").unwrap(), 1_623_704_400);
        assert_eq!(parse_timestamp("2021-06-14T21:00:00.900Z").unwrap(), 1_623_704_400);
        assert_eq!(parse_timestamp("1623704400").unwrap(), 1_623_704_400);
        assert_eq!(format_timestamp(1_623_704_400), "2021-06-14T21:00:00Z");
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn weekday_and_second_of_day() {
        // 2021-06-14 was a Monday.
        assert_eq!(weekday(1_623_628_800), 0);
        assert_eq!(weekday(1_623_628_800 + 5 * 86_400), 5);
        assert_eq!(second_of_day(1_623_704_400), 21 * 3600);
    }

    #[test]
    fn stream_id_ordering_is_by_topic_then_stream() {
        let mut ids = vec![
            StreamId::new("sense-hat", "temp"),
            StreamId::new("all-in-1", "T"),
            StreamId::new("all-in-1-b", "A"),
            StreamId::new("all-in-1", "A"),
        ];
        ids.sort();
        let names: Vec<_> = ids.iter().map(|s| s.to_string()).collect();
        assert_eq!(
            names,
            ["all-in-1/A", "all-in-1/T", "all-in-1-b/A", "sense-hat/temp"]
        );
        assert_eq!(StreamId::parse("nir/natural").unwrap(), StreamId::new("nir", "natural"));
        assert!(StreamId::parse("nir").is_err());
    }

    #[test]
    fn frame_rejects_off_grid_rows_and_bad_shapes() {
        let cols = vec!["a/x".to_string()];
        assert!(AlignedFrame::from_rows(60, vec![0, 90], cols.clone(), &[vec![1.0], vec![2.0]]).is_err());
        assert!(AlignedFrame::from_rows(60, vec![0, 60], cols.clone(), &[vec![1.0]]).is_err());
        assert!(AlignedFrame::from_rows(60, vec![60, 0], cols.clone(), &[vec![1.0], vec![2.0]]).is_err());
        // Gaps that stay on the lattice are fine.
        assert!(AlignedFrame::from_rows(60, vec![0, 180], cols, &[vec![1.0], vec![2.0]]).is_ok());
    }

    #[test]
    fn unobserved_cells_are_zeroed_and_hidden() {
        let f = AlignedFrame::new(
            10,
            vec![0, 10],
            vec!["a/x".into(), "a/y".into()],
            vec![1.0, f64::NAN, 3.0, 4.0],
            vec![true, false, true, true],
        )
        .unwrap();
        assert_eq!(f.value(0, 1), None);
        assert_eq!(f.values()[1], 0.0);
        assert!(!f.is_complete());
        assert_eq!(f.column_values(1), vec![4.0]);
    }

    #[test]
    fn verdict_never_claims_combined_for_one_stream() {
        let v = AnomalyVerdict::new(
            0,
            vec!["a/x".into()],
            2.0,
            1.0,
            Taxonomy::Combined,
            DetectorKind::RecurrentForecaster,
            "cfg",
        );
        assert_eq!(v.taxonomy, Taxonomy::Contextual);
        assert!(v.is_anomaly);
        let at = AnomalyVerdict::new(0, vec![], 1.0, 1.0, Taxonomy::Point, DetectorKind::Ocsvm, "cfg");
        assert!(!at.is_anomaly);
    }
}
