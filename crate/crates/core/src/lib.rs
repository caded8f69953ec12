//! Trajectory forecasting with a clustered motion-pattern priors memory and a
//! target-guided denoising diffusion model.
//!
//! Pipeline: [`data`] windows and normalizes tracks, [`memory`] clusters the
//! training windows into a bank of motion patterns and addresses queries by
//! Gaussian NLL, [`encoder`] turns the observed window and the retrieved target
//! into a condition vector, [`diffusion`] and [`denoiser`] implement the DDPM
//! machinery and the transformer noise predictor, [`train`] fits everything
//! with Adam and [`eval`] scores best-of-K samples.

pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod memory;
pub mod model;
pub mod plot;
pub mod tensor;
pub mod textio;
pub mod train;

pub use error::{Error, Result};
