//! Federated learning over noisy multi-antenna links with joint
//! downlink-uplink beamforming.

pub mod airlink;
pub mod bound;
pub mod channel;
pub mod error;
pub mod fl;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
