//! Stream inventory: which streams exist, on which device, and how they were
//! processed at the edge before ingestion.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StreamId;

const HEADER: [&str; 5] = ["device_id", "topic", "stream", "unique_sensor", "edge_process"];

/// Inventory of the reference deployment: 32 streams across 10 devices.
pub const REFERENCE_INVENTORY_CSV: &str = include_str!("../fixtures/reference_inventory.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeProcess {
    None,
    Atan,
    Scale,
    Gaussian,
}

impl EdgeProcess {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "" => Some(EdgeProcess::None),
            "atan" => Some(EdgeProcess::Atan),
            "scale" => Some(EdgeProcess::Scale),
            "gaussian" => Some(EdgeProcess::Gaussian),
            _ => None,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            EdgeProcess::None => "none",
            EdgeProcess::Atan => "atan",
            EdgeProcess::Scale => "scale",
            EdgeProcess::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub device_id: String,
    pub topic: String,
    pub stream: String,
    pub unique_sensor: bool,
    pub edge_process: EdgeProcess,
}

impl InventoryEntry {
    pub fn stream_id(&self) -> StreamId {
        StreamId::new(self.topic.clone(), self.stream.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInventory {
    entries: Vec<InventoryEntry>,
}

impl StreamInventory {
    pub fn new(entries: Vec<InventoryEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.stream_id()) {
                return Err(Error::validation(format!(
                    "duplicate stream `{}` in inventory",
                    e.stream_id()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn reference_deployment() -> Self {
        Self::from_reader(REFERENCE_INVENTORY_CSV.as_bytes()).expect("bundled fixture is valid")
    }

    pub fn entries(&self) -> &[InventoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unique_sensor_count(&self) -> usize {
        self.entries.iter().filter(|e| e.unique_sensor).count()
    }

    pub fn get(&self, id: &StreamId) -> Option<&InventoryEntry> {
        self.entries
            .iter()
            .find(|e| e.topic == id.topic && e.stream == id.stream)
    }

    pub fn contains(&self, id: &StreamId) -> bool {
        self.get(id).is_some()
    }

    /// Stream counts per device, in order of first appearance.
    pub fn device_stream_counts(&self) -> Vec<(String, usize)> {
        let mut order: Vec<String> = Vec::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.entries {
            let n = counts.entry(e.device_id.as_str()).or_insert(0);
            if *n == 0 {
                order.push(e.device_id.clone());
            }
            *n += 1;
        }
        order
            .into_iter()
            .map(|d| {
                let n = counts[d.as_str()];
                (d, n)
            })
            .collect()
    }

    /// Streams grouped per device, each group in canonical order.
    pub fn streams_by_device(&self) -> Vec<(String, Vec<StreamId>)> {
        self.device_stream_counts()
            .into_iter()
            .map(|(device, _)| {
                let mut ids: Vec<StreamId> = self
                    .entries
                    .iter()
                    .filter(|e| e.device_id == device)
                    .map(InventoryEntry::stream_id)
                    .collect();
                ids.sort();
                (device, ids)
            })
            .collect()
    }

    pub fn unique_streams(&self) -> Vec<StreamId> {
        let mut ids: Vec<StreamId> = self
            .entries
            .iter()
            .filter(|e| e.unique_sensor)
            .map(InventoryEntry::stream_id)
            .collect();
        ids.sort();
        ids
    }

    /// Streams whose topic is in `topics` (all streams when `topics` is
    /// empty), in canonical column order.
    pub fn select_topics(&self, topics: &[String]) -> Vec<StreamId> {
        let mut ids: Vec<StreamId> = self
            .entries
            .iter()
            .filter(|e| topics.is_empty() || topics.contains(&e.topic))
            .map(InventoryEntry::stream_id)
            .collect();
        ids.sort();
        ids
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = Vec::new();
        let mut header_seen = false;
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            if !header_seen {
                header_seen = true;
                let fields: Vec<&str> = record.iter().collect();
                if fields != HEADER {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected header `{}`", HEADER.join(",")),
                    });
                }
                continue;
            }
            if record.len() != HEADER.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", HEADER.len(), record.len()),
                });
            }
            let unique_sensor = match record[3].to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unique_sensor must be true/false, found `{other}`"),
                    })
                }
            };
            let edge_process = EdgeProcess::parse(&record[4]).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown edge_process `{}`", &record[4]),
            })?;
            for (i, name) in HEADER.iter().enumerate().take(3) {
                if record[i].is_empty() {
                    return Err(Error::Parse {
                        line,
                        message: format!("empty {name}"),
                    });
                }
            }
            entries.push(InventoryEntry {
                device_id: record[0].to_string(),
                topic: record[1].to_string(),
                stream: record[2].to_string(),
                unique_sensor,
                edge_process,
            });
        }
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.device_id.as_str(),
                e.topic.as_str(),
                e.stream.as_str(),
                if e.unique_sensor { "true" } else { "false" },
                e.edge_process.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_inventory(path: impl AsRef<Path>) -> Result<StreamInventory> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    StreamInventory::from_reader(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_deployment_has_32_streams_and_14_unique() {
        let inv = StreamInventory::reference_deployment();
        assert_eq!(inv.len(), 32);
        assert_eq!(inv.unique_sensor_count(), 14);
        let counts: Vec<usize> = inv.device_stream_counts().into_iter().map(|(_, n)| n).collect();
        assert_eq!(counts, [6, 3, 1, 2, 5, 1, 3, 9, 1, 1]);
    }

    #[test]
    fn empty_input_is_an_empty_inventory() {
        assert!(StreamInventory::from_reader(&b""[..]).unwrap().is_empty());
        let header_only = "device_id,topic,stream,unique_sensor,edge_process\n";
        assert!(StreamInventory::from_reader(header_only.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_stream_is_rejected() {
        let text = "device_id,topic,stream,unique_sensor,edge_process\n\
                    H7,sense-hat,temp,true,none\n\
                    H9,sense-hat,temp,false,none\n";
        let err = StreamInventory::from_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("sense-hat/temp")), "{err}");
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = "device_id,topic,stream,unique_sensor,edge_process\n\
                    H7,sense-hat,temp,true,none\n\
                    H7,sense-hat,humidity,maybe,none\n";
        match StreamInventory::from_reader(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let short = "device_id,topic,stream,unique_sensor,edge_process\nH7,sense-hat\n";
        assert!(matches!(
            StreamInventory::from_reader(short.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_identical() {
        let inv = StreamInventory::reference_deployment();
        let mut buf = Vec::new();
        inv.write_csv(&mut buf).unwrap();
        assert_eq!(StreamInventory::from_reader(&buf[..]).unwrap(), inv);
    }
}
