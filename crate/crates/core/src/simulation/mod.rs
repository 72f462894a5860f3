//! Synthetic subscription-retention process with a known answer, plus a
//! Monte Carlo driver.

mod dgp;
mod experiment;

pub use dgp::*;
pub use experiment::*;
