//! On-disk formats: frame CSV (+ JSON sidecar), replay readings CSV and
//! verdict CSV.
//!
//! Reals are written with Rust's shortest round-trip formatting, so a frame
//! written and read back is bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    format_timestamp, parse_timestamp, AlignedFrame, AnomalyVerdict, SensorReading, Value,
};

const READINGS_HEADER: [&str; 5] = ["timestamp", "device_id", "topic", "stream", "value"];
const VERDICT_HEADER: [&str; 8] = [
    "timestamp",
    "streams",
    "score",
    "threshold",
    "is_anomaly",
    "taxonomy",
    "detector",
    "config_id",
];

/// Provenance stored next to every CSV artifact as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_seconds: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    /// Content digest of the frame the artifact was produced from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_digest: Option<String>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_meta(path: &Path, meta: &ArtifactMeta) -> Result<()> {
    let f = BufWriter::new(create(&meta_path(path))?);
    serde_json::to_writer_pretty(f, meta)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<Option<ArtifactMeta>> {
    let p = meta_path(path);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_reader(BufReader::new(open(&p)?))?))
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn write_frame_csv<W: Write>(frame: &AlignedFrame, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(frame.width() + 1);
    header.push("timestamp".to_string());
    header.extend(frame.columns().iter().cloned());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(frame.width() + 1);
    for r in 0..frame.rows() {
        record.clear();
        record.push(format_timestamp(frame.grid()[r]));
        for c in 0..frame.width() {
            record.push(match frame.value(r, c) {
                Some(v) => format!("{v}"),
                None => String::new(),
            });
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a frame CSV. `period` overrides inference; without it the smallest
/// gap between consecutive rows is used.
pub fn read_frame_csv<R: Read>(reader: R, period: Option<i64>) -> Result<AlignedFrame> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("timestamp") {
        return Err(Error::Parse {
            line: 1,
            message: "first column must be `timestamp`".into(),
        });
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut grid = Vec::new();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != columns.len() + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", columns.len() + 1, record.len()),
            });
        }
        grid.push(parse_timestamp(&record[0]).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?);
        for cell in record.iter().skip(1) {
            if cell.is_empty() {
                values.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{cell}` is not a number"),
                })?;
                values.push(v);
                mask.push(true);
            }
        }
    }
    let period = match period {
        Some(p) => p,
        None => grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d > 0)
            .min()
            .unwrap_or(1),
    };
    AlignedFrame::new(period, grid, columns, values, mask)
}

/// Writes `frame` to `path` plus its sidecar.
pub fn save_frame(path: &Path, frame: &AlignedFrame, config_hash: &str) -> Result<()> {
    let mut f = BufWriter::new(create(path)?);
    write_frame_csv(frame, &mut f)?;
    f.flush()?;
    write_meta(
        path,
        &ArtifactMeta {
            kind: "frame".into(),
            config_hash: config_hash.to_string(),
            period_seconds: Some(frame.period()),
            columns: Some(frame.columns().to_vec()),
            frame_digest: Some(frame.digest()),
        },
    )
}

/// Loads a frame, taking the grid period from its sidecar when present.
pub fn load_frame(path: &Path) -> Result<(AlignedFrame, Option<ArtifactMeta>)> {
    let meta = read_meta(path)?;
    let period = meta.as_ref().and_then(|m| m.period_seconds);
    let frame = read_frame_csv(BufReader::new(open(path)?), period)?;
    Ok((frame, meta))
}

pub fn read_readings_csv<R: Read>(reader: R) -> Result<Vec<SensorReading>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != READINGS_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", READINGS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != READINGS_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", record.len()),
            });
        }
        let timestamp = parse_timestamp(&record[0]).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(SensorReading {
            timestamp,
            device_id: record[1].to_string(),
            topic: record[2].to_string(),
            stream: record[3].to_string(),
            value: Value::from_cell(&record[4]),
        });
    }
    Ok(out)
}

pub fn write_readings_csv<W: Write>(readings: &[SensorReading], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(READINGS_HEADER)?;
    for r in readings {
        let value = match &r.value {
            Value::Number(v) => format!("{v}"),
            Value::Text(t) => t.clone(),
            Value::Null => String::new(),
        };
        w.write_record([
            format_timestamp(r.timestamp),
            r.device_id.clone(),
            r.topic.clone(),
            r.stream.clone(),
            value,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_verdicts_csv<W: Write>(verdicts: &[AnomalyVerdict], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(VERDICT_HEADER)?;
    for v in verdicts {
        w.write_record([
            format_timestamp(v.timestamp),
            v.streams.join(";"),
            format!("{}", v.score),
            format!("{}", v.threshold),
            v.is_anomaly.to_string(),
            serde_json::to_value(v.taxonomy)?
                .as_str()
                .unwrap_or_default()
                .to_string(),
            v.detector.to_string(),
            v.config_id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_verdicts_csv<R: Read>(reader: R) -> Result<Vec<AnomalyVerdict>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != VERDICT_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", VERDICT_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |m: String| Error::Parse { line, message: m };
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| parse_err(format!("`{s}` is not a number")))
        };
        let taxonomy = serde_json::from_value(serde_json::Value::String(record[5].to_string()))
            .map_err(|e| parse_err(e.to_string()))?;
        let detector = record[6].parse().map_err(|e: Error| parse_err(e.to_string()))?;
        out.push(AnomalyVerdict {
            timestamp: parse_timestamp(&record[0]).map_err(|e| parse_err(e.to_string()))?,
            streams: if record[1].is_empty() {
                Vec::new()
            } else {
                record[1].split(';').map(str::to_string).collect()
            },
            score: num(&record[2])?,
            threshold: num(&record[3])?,
            is_anomaly: record[4]
                .parse()
                .map_err(|_| parse_err(format!("`{}` is not a boolean", &record[4])))?,
            taxonomy,
            detector,
            config_id: record[7].to_string(),
        });
    }
    Ok(out)
}
