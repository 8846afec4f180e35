//! Sphere decoding for MIMO detection with hypersphere radii predicted by a
//! small neural network, plus the exact baselines and the expected-complexity
//! model used to analyse it.

pub mod complexity;
pub mod dl_decoder;
pub mod error;
pub mod harness;
pub mod mimo;
pub mod radius_net;
pub mod sphere;

pub use error::{Error, Result};
pub use mimo::{Constellation, Observation};
