pub mod error;
pub mod exec;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod random_system;
pub mod sdp;
pub mod simulate;
pub mod stability;
pub mod synthesis;

pub use error::{Error, Result};
