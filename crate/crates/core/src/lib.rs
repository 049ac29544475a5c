pub mod autodiff;
pub mod data;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
