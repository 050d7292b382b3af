//! Monthly price panels to topological eras: rolling-window correlation
//! trees, five tree-shape indices, and joint total-variation segmentation.

pub mod dependence;
pub mod embed;
pub mod error;
pub mod exec;
pub mod panel;
pub mod pipeline;
pub mod render;
pub mod segment;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
