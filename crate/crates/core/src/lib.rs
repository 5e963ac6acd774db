pub mod abem;
pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
