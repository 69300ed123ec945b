//! Tiling, aggregation and evaluation for aerial tree-crown detection.

pub mod aggregator;
pub mod datamodel;
pub mod error;
pub mod geometry;
pub mod matcher;
pub mod metrics;
pub mod scaleplan;
pub mod synth;
pub mod tiler;
pub mod tuner;

pub use error::{Error, Result};
