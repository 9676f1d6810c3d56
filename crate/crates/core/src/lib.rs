pub mod error;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub mod bridge;
pub mod corpus;
pub mod encoders;
pub mod nn;
pub mod optim;
pub mod qformer;
pub mod tokenize;
pub mod train;
