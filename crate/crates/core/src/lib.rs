//! Hand pose estimation from sparse renderings: a kinematic hand prior,
//! graph refinement, bone-constrained losses and a multi-source
//! Wasserstein critic, trained in three stages.

pub mod autodiff;
pub mod discriminator;
pub mod error;
pub mod graphnet;
pub mod handmodel;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
