//! Command-line tools and the review service.

pub mod commands;
pub mod labels;
pub mod pipeline;
pub mod server;

pub use commands::{run, AppConfig, Cli};
