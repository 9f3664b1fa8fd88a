//! Curvature-tuned boosting (CT-AGD) for first-order optimizers, with the
//! usual baselines, a drifting 2-D loss-landscape testbed, a small MLP task,
//! and the harness that benchmarks them against each other.

pub mod backbones;
pub mod bench;
pub mod ctagd;
pub mod error;
pub mod landscape;
pub mod smallnet;
pub mod tensorcore;

pub use error::{Error, Result};
