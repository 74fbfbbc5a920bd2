pub mod autodiff;
pub mod commands;
pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod knn;
pub mod metrics;
pub mod tensor;
pub mod vmf;

pub use error::{Error, Result};
pub use tensor::Tensor;
