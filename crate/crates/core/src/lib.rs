//! Facial action unit detection with landmark-driven attention (enhancing)
//! layers and AU-region cropping layers on a VGG-style backbone.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod pnm;
pub mod tensor;
pub mod training;

pub use error::{Error, Result, ShapeError};
