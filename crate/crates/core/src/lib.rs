//! Rate-distortion, dispersion and finite-blocklength tools for indirect
//! quadratic source coding on finite alphabets.

pub mod error;
pub mod model;
pub mod rd;
pub mod tilted;
pub mod asymptotics;
pub mod rng;
pub mod bounds;
pub mod simulator;
pub mod verify;

pub use error::{Constraint, Error, Result};
pub use model::{presets, validate_model, Alphabet, ModelMoments, NoiseSpec, SourceModel};
pub use rd::{ConditionalKernel, RDCurve, RDSolution};
