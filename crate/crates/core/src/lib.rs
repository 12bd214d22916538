pub mod bench;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod graph;
pub mod hubs;
pub mod io;
pub mod knn;
pub mod model;
pub mod navigation;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod topology;

pub use dataset::{QuerySet, VectorDataset};
pub use error::{GateError, Result};
