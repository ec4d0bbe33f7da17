//! Calibration of a Chaboche viscoplastic material from displacement
//! measurements by transitional Markov chain Monte Carlo.
//!
//! - [`material`]: constitutive equations and the implicit state update.
//! - [`forward`]: the cyclically loaded cube specimen and its measurement operator.
//! - [`synthetic`]: virtual measurements with controlled Gaussian noise.
//! - [`tmcmc`]: a model-agnostic TMCMC sampler with evidence estimation.
//! - [`calibration`]: priors, likelihood and posterior summaries for the specimen.

pub mod calibration;
pub mod forward;
pub mod material;
pub mod synthetic;
pub mod tensor;
pub mod tmcmc;

pub use forward::{FixedParams, LoadProgram, ParameterVector, Specimen, Trajectory};
pub use material::{InternalState, MaterialParams};
pub use tensor::SymTensor;
