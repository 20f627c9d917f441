//! Volatility estimation with stochastic volatility models and policy
//! evaluation with generalized synthetic control.
//!
//! The pipeline runs in two stages. [`svol`] turns daily returns into a
//! monthly volatility series; [`gsc`] estimates the effect of a treatment on a
//! panel of such series using an interactive fixed effects counterfactual
//! ([`factor`]), with placebo and equivalence checks in [`diagnostics`].

pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod factor;
pub mod gsc;
pub mod par;
pub mod rng;
pub mod sim;
pub mod svol;

pub use error::{Error, ErrorKind, Result};
