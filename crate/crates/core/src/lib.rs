pub mod assignment;
pub mod energy;
pub mod error;
pub mod features;
pub mod grid;
pub mod mask;
pub mod metrics;
pub mod optimizer;
pub mod partition;
pub mod pipeline;
pub mod pooling;
pub mod tracer;

pub use error::{Error, Result};
