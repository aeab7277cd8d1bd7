//! File I/O, pipelines and the local HTTP service around `defgrid-core`.

pub mod commands;
pub mod error;
pub mod io;
pub mod service;

pub use error::{Result, WorkbenchError};
