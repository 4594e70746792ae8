//! mmrlab: a desk-scale laboratory for test-time training with multimodal
//! reconstruction. A small encoder is trained jointly with a main-task head
//! and a multimodal reconstruction head on synthetic geospatial tiles; at
//! test time the encoder alone is adapted per batch by normalized, averaged
//! reconstruction gradients, with either random or geographically coherent
//! batches. Everything is f64, single-threaded, and bitwise deterministic
//! for a fixed seed.

pub mod data;
pub mod metrics;
pub mod model;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod eval;
pub mod splits;
pub mod train;
pub mod ttt;
pub mod tensor;
pub mod util;

pub use error::{LabError, Result};
