//! Training-dynamics laboratory for small ReLU networks.
//!
//! The crate trains MLPs and a miniature CNN with deterministic minibatch
//! SGD, branches runs into children at chosen epochs, and measures how the
//! network moves through weight space, function space and tangent-kernel
//! space: NTK gram matrices and their distance/velocity, error barriers on
//! linear paths, ReLU pattern and function distances, logit gradient
//! centroids, Hessian spectral norms and escape thresholds, 2-D plane scans,
//! and training of first- and second-order Taylor expansions around a
//! checkpoint.

mod binio;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod linearized;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod seeds;
pub mod series;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
