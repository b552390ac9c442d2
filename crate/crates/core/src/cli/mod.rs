//! Command-line front end: configuration loading, checkpoint persistence,
//! metrics emission, and the subcommands tying the pipeline together.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointTrailer};
pub use commands::{run_command, EXIT_CONFIG, EXIT_MISSING_INPUT, EXIT_OK, EXIT_RUNTIME};
pub use config::RunConfig;
pub use metrics::{format_sig9, MetricsWriter, METRICS_COLUMNS};
