//! Energy-optimal planning of synthesized-data augmentation, CPU frequency,
//! bandwidth and transmit power for federated learning on edge devices.

pub mod augmentation;
pub mod ce_optimizer;
pub mod check;
pub mod error;
pub mod harness;
pub mod lambert;
pub mod learning_curve;
pub mod solver_comm;
pub mod solver_compute;
pub mod system_model;

pub use error::{Error, Result};
