//! Read-only JSON API over immutable analysis snapshots.
//!
//! A snapshot holds everything the coordinated views need for one view
//! configuration: the inferred network at the configured level, the filtered
//! adoption table with its stats, and the selected measurement with quartile
//! bins. Snapshots are built lazily, at most once per configuration, and the
//! expensive parts (networks, measurements, Cox fits) are persisted under
//! `DATA_DIR/cache` as content-addressed JSON files.

pub mod cache;
pub mod config;
pub mod error;
pub mod http;
pub mod payload;
pub mod service;

pub use config::{Method, PolicySort, StateSort, ViewConfig};
pub use error::ApiError;
pub use http::{router, serve};
pub use service::{AnalysisSnapshot, Dataset, LevelNetwork, PrecomputeReport, Service};

pub const DEFAULT_PORT: u16 = 8080;
