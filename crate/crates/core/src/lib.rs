//! Multi-stage, performance-guided orchestration of code-generation models.
//!
//! A task flows through generation, validation, repair and performance
//! refinement. Each stage picks models from a ranked [`ranking`] memory built
//! from study records, runs candidates in the [`sandbox`], and measures them
//! with the [`profiler`].

pub mod bench;
pub mod gateway;
pub mod taxonomy;
pub mod metrics;
pub mod numeric;
pub mod orchestrator;
pub mod profiler;
pub mod ranking;
pub mod sandbox;
pub mod study;
mod process;

pub use numeric::{BoxplotData, Scalar};

/// Box-plot summary over `f64` samples.
pub type BoxStats = BoxplotData<f64>;

/// Improvement comparison over `f64` measurements.
pub type Improvement = profiler::ImprovementResult<f64>;
