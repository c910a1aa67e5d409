pub mod basis;
pub mod error;
pub mod harness;
pub mod layers;
pub mod linalg;
pub mod registration;
pub mod so3;
pub mod synth;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
