pub mod backbone;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod cost_volume;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod profiler;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{LeanStereo, ModelConfig};
pub use tensor::Tensor;
