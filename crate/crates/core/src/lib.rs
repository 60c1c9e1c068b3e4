pub mod cli;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod mlp;
pub mod partition;
pub mod optim;
pub mod pde;
pub mod sampler;
pub mod trainer;
pub mod rng;

pub use error::{Error, Result};
