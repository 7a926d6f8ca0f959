//! Deployment controller for BLE RSS tag tracking.
//!
//! Wire parsing, the reorder-and-window ingest pipeline shared by batch and
//! live tracking, the TCP ingest service, trajectory logging, exports and
//! episode analysis. The numerical core lives in `wanderloc-core`.

pub mod analyze;
pub mod config;
pub mod export;
pub mod log;
pub mod offline;
pub mod pipeline;
pub mod replay;
pub mod server;
pub mod wire;

pub use config::{ConfigError, DeploymentConfig, ScenarioFile};
pub use log::{LogWriter, TrajectoryLogRecord};
pub use offline::{run_offline, simulate, track_reports, TrackSummary};
pub use pipeline::{IngestOptions, IngestStats, Ingestor};
pub use server::{serve_ingest, ServeError, ServeOptions, ServerHandle, SessionSummary};
pub use wire::{format_report, parse_report, parse_report_bytes, WireError};
