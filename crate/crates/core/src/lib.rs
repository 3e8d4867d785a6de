//! Simulation and analysis of decentralized federated learning over lossy
//! wireless links.
//!
//! The pipeline runs topology → channel → consensus → analysis, with `flcore`
//! executing the protocol itself and `verify` checking the closed forms
//! against Monte Carlo runs.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod consensus;
pub mod error;
pub mod experiment;
pub mod flcore;
pub mod linalg;
pub mod report;
pub mod seed;
pub mod topology;
pub mod verify;

pub use error::{Error, Result};
