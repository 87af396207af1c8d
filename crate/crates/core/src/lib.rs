//! Data-enabled predictive control (DeePC) with an online tabular SARSA
//! tuner for the ℓ1 regularization weight `λ_g`.

pub mod behavior;
pub mod closed_loop;
pub mod deepc;
pub mod error;
pub mod experiment;
pub mod io;
pub mod plant;
pub mod rng;
pub mod sarsa;
pub mod schema;
pub mod solver;

pub use error::{Error, Result};
