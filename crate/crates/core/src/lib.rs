pub mod activation;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod inference;
pub mod mlp;
pub mod par;
pub mod rng;
pub mod textio;
pub mod wave;

pub use error::{Error, Result};
pub use geometry::Point;
