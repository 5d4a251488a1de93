//! Configuration, spectral cache, table output, plots and subcommand drivers.

pub mod cache;
pub mod config;
pub mod output;
pub mod plot;
pub mod run;

pub use cache::{load_cache, save_cache};
pub use config::ExperimentConfig;
pub use run::{run, Check, Command, RunReport};
