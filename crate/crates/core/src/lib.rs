//! Locally-Lipschitz adversarial imitation learning on small continuous-control tasks.

pub mod autodiff;
pub mod cli;
pub mod divergence;
pub mod envs;
pub mod error;
pub mod eval;
pub mod fd;
pub mod gail;
pub mod nets;
pub mod perturb;
pub mod theory;

pub use error::{Error, Result};
