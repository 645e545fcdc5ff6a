//! Amortised neural posterior inference for factor-copula models with
//! GARCH(1,1) marginals.
//!
//! The pipeline fits each marginal series with a 1-D CNN that outputs a full
//! Gaussian posterior over the transformed GARCH parameters, converts the
//! data to copula pseudo-observations with the plug-in estimates, and feeds
//! them to a Deep Sets network that outputs a mean-field Gaussian posterior
//! over the factor loadings (and the t-copula degrees of freedom).

pub mod autodiff;
pub mod config;
pub mod copula;
pub mod error;
pub mod garch;
pub mod io;
pub mod linalg;
pub mod nets;
pub mod nifm;
pub mod optim;
pub mod oracle;
pub mod par;
pub mod predict;
pub mod priors;
pub mod simgen;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
