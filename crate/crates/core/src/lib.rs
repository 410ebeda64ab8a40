//! Building-sensor telemetry: ingestion, preprocessing, anomaly detection,
//! synthetic scenarios and evaluation.

pub mod error;
pub mod detect;
pub mod evaluate;
pub mod formats;
pub mod ingest;
pub mod inventory;
pub mod model;
pub mod preprocess;
pub mod repro;
pub mod synth;

pub use error::{Error, Result};
pub use inventory::{load_inventory, EdgeProcess, InventoryEntry, StreamInventory};
pub use model::{
    AlignedFrame, AnomalyVerdict, Condition, ConditionMask, DetectorKind, SensorReading, StreamId,
    Taxonomy, Timestamp, Value, WindowTensor,
};
