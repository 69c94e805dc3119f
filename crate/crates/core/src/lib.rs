//! Delay-tolerant distributed space-time coding over two-hop relay networks.
//!
//! Relays forward an Alamouti codeword (whole, or split row-wise across
//! single-antenna relays) through adjustable code matrices. Relay signals
//! reach the destination with integer slot delays; the destination runs
//! exhaustive ML detection and adapts the code matrices with an RLS fit
//! that is fed back to the relays.

pub mod channel;
pub mod cli;
pub mod coding;
pub mod detection;
pub mod dtacmo;
pub mod error;
pub mod linalg;
pub mod simulator;
pub mod system;

pub use error::{Error, Result};
