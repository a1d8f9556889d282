//! Semi-Markov multistate models for panel data.
//!
//! The crate fits multistate models whose transition intensities depend on
//! the time since entry into the current state, from data that mix
//! continuously observed segments with intermittent snapshots of partially
//! known states. Fitting uses Monte Carlo EM: latent paths are proposed from
//! a time-homogeneous Markov surrogate conditioned exactly on each subject's
//! data and reweighted by importance sampling.
//!
//! Module map:
//! - [`state`], [`spline`], [`model`], [`path`], [`data`]: model structure,
//!   intensities and complete-path likelihoods.
//! - [`markov`]: the Markov surrogate with its exact panel likelihood;
//!   Coxian phase-type expansion.
//! - [`sampler`]: data-conditioned path proposals and the rejection baseline.
//! - [`psis`], [`mcem`]: smoothed importance weights and the ascent MCEM loop.
//! - [`inference`]: standard errors and model selection; resampling.
//! - [`simulate`], [`scenario`], [`functional`]: forward simulation under
//!   observation schemes; built-in studies with their path functionals.
//! - [`io`]: file formats.

pub mod data;
pub mod error;
pub mod functional;
pub mod inference;
pub mod io;
pub mod markov;
pub mod mcem;
pub mod model;
pub mod optim;
pub mod par;
pub mod path;
pub mod psis;
pub mod rng;
pub mod sampler;
pub mod scenario;
pub mod simulate;
pub mod spline;
pub mod state;

pub use data::{validate_subject, Covariates, Finding, ObsType, Record, Subject};
pub use error::{Error, Result};
pub use model::{Baseline, Design, Hazard, HazardEval, SemiMarkovModel};
pub use path::SamplePath;
pub use state::{StateSet, StateSpace};
