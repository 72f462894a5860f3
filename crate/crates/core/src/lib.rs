//! Calibrated and doubly robust estimation of linear functionals of
//! Q-functions in discounted Markov decision processes.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod fqi;
mod linalg;
pub mod mdp;
pub mod pipeline;
pub mod regression;
pub mod riesz;
pub mod seed;
pub mod simulation;

pub use error::{Error, Result};
