//! Calibration of a stochastic count-output simulator against observed count
//! data, using a Gaussian-process emulator of the log-likelihood surface as an
//! importance-sampling proposal.
//!
//! The pieces, roughly in the order the pipeline uses them:
//!
//! * [`nhm`]: a surrogate natural-history microsimulation producing the four
//!   kinds of count data the calibration consumes.
//! * [`likelihood`]: beta-binomial and Dirichlet-multinomial likelihoods with
//!   a discrepancy discount, plus the variance-decomposition bounds used for
//!   reporting.
//! * [`design`]: space-filling designs and history-matching style reduction
//!   of the input region across waves.
//! * [`emulator`]: the Gaussian-process emulator of the log-likelihood, with
//!   MAP hyperparameter estimation.
//! * [`sampler`]: MCMC over the flattened emulator mean, pivoted-Cholesky
//!   refinement selection, importance weighting, resampling and reweighting.
//! * [`pipeline`]: configuration, the run manifest, artifact formats and the
//!   command implementations behind the `calemu` binary.

pub mod design;
pub mod emulator;
pub mod error;
pub mod likelihood;
pub mod nhm;
pub mod optimize;
pub mod pipeline;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
