//! Connection admission control analysis for an OFDMA uplink queue fed by
//! batch Markovian arrivals.

pub mod arrival;
pub mod chain;
pub mod cli;
pub mod channel;
pub mod connection;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod solver;

pub use error::{ConfigError, Error, Result};
