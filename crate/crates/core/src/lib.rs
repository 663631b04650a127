//! Delay-aware uplink OFDMA power and subband allocation.
//!
//! Users learn per-subband Q-factors and Lagrange multipliers online and bid
//! for subbands each slot; a centralized CMDP solver and three classical
//! schedulers are provided for comparison.

pub mod auction;
pub mod baselines;
pub mod error;
pub mod io;
pub mod learner;
pub mod model;
pub mod oracle;
pub mod sim;

pub use error::{Error, Result};
