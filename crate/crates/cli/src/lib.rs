//! Experiment harness for `cbo-core`: seeded start points, run campaigns,
//! CSV traces and summary tables.

pub mod campaign;
pub mod check;
pub mod config;
pub mod starts;
pub mod summary;
pub mod trace_csv;

pub use campaign::{run_campaign, CampaignOutcome, CampaignSpec, RunOutcome};
pub use config::{ConfigError, RunSpec, Settings};
pub use summary::{summarize, CampaignSummary, CellKey, CellSummary};
pub use trace_csv::{read_trace, write_trace, Ingested, TraceError};
