//! Multi-market trading strategies built from per-market recurrent encoders
//! and decoders around a shared transfer layer, trained end to end on an
//! annualised Sharpe objective, plus the classical baselines and evaluation
//! tooling used to compare them.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
