pub mod arch;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod photometric;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
