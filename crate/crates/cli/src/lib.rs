//! The `fzsl` command-line driver.

mod args;
mod commands;
pub mod output;
pub mod plan;

pub use args::{Cli, Command, MetricsFormat};
pub use commands::run;
