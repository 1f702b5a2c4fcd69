//! End-to-end runs: configuration, the swing reference, the closed-loop
//! simulation of plant, controller and filter, and CSV output.

pub mod config;
pub mod output;
pub mod sim;
pub mod trajectory;

pub use config::{FeedbackSource, RunConfig};
pub use output::{emit_csv, format_metrics, format_snapshot};
pub use sim::{estimation_errors, run_closed_loop, MetricsRecord, RunOutput, Snapshot, SnapshotKind};
pub use trajectory::SwingTrajectory;
