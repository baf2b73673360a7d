//! Nonlinear finite elements, a meta-learned neural field surrogate, and
//! neural warm starts for Newton solves.

pub mod assembly;
pub mod config;
pub mod error;
pub mod ifol;
pub mod io;
pub mod linear;
pub mod material;
pub mod mesh;
pub mod neural_field;
pub mod newton;
pub mod nin;
pub mod postprocess;
pub mod problem;
pub mod sampler;
pub mod sparse;

pub use error::{Error, Result};
