//! Centered deep Boltzmann machines.
//!
//! Two-layer DBMs whose energy is written in terms of centered states
//! `x - offset`, trained by persistent contrastive divergence, plus three
//! analyses of the resulting models:
//!
//! * [`conditioning`]: condition number of the log-likelihood Hessian of a
//!   flat machine, from Hessian-direction products on a random subspace;
//! * [`ais`]: annealed importance sampling estimate of the log-likelihood;
//! * [`kpca`]: kernel-PCA projection residuals of the labels for each layer.
//!
//! Small models can be enumerated exactly ([`exact`]); every estimator in the
//! crate is tested against those enumerations.

pub mod ais;
pub mod checkpoint;
pub mod conditioning;
pub mod data;
mod error;
pub mod exact;
pub mod kpca;
pub mod math;
pub mod model;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{BinaryState, Dbm2Params, FlatBmParams, LayerSizes};
pub use sampler::{seeded_rng, stream_rng, ParticleSet, Rng};
