//! Auditing toolkit for data production bias in GPS mobility datasets.
//!
//! The crate follows the audit pipeline stage by stage:
//!
//! * [`ingest`] parses ping streams, joins them to census geographies,
//!   infers home block groups and applies the user-level filters.
//! * [`census`] loads ACS subject tables into per-tract feature records.
//! * [`inequality`] measures how unequally data is produced (Gini, Lorenz,
//!   top shares).
//! * [`networks`] turns pings into stays and trips, splits users into
//!   production quantile groups and compares the resulting mobility networks.
//! * [`model`] predicts median tract production from demographics with a
//!   bagged regression-tree ensemble under nested cross-validation.
//! * [`attribution`] explains those predictions with exact tree Shapley values.
//! * [`synth`] generates synthetic cities with planted effects so every stage
//!   can be checked against known ground truth.

pub mod attribution;
pub mod census;
pub mod error;
pub mod ingest;
pub mod inequality;
pub mod model;
pub mod networks;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// Library version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
