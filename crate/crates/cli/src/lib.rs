//! Command-line driver for the adaptive-rate compressive learning pipeline
//! and the binary model container.

pub mod commands;
pub mod container;
pub mod error;

pub use container::{load_model, save_model, ModelContainer};
pub use error::{CliError, Result};
