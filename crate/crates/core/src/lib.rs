//! Semi-blind joint channel estimation and data detection for cell-free
//! massive MIMO uplinks by bilinear expectation propagation, with a Monte
//! Carlo link-level simulator, reference receivers and a fronthaul emulation.

pub mod baselines;
pub mod error;
pub mod fronthaul;
pub mod gaussian;
pub mod harness;
pub mod jcd;
pub mod linalg;
pub mod metrics;
pub mod pilot;
pub mod scenario;

pub use error::{Error, Result};
