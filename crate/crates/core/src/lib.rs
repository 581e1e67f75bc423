//! Maritime surveillance data fusion: traffic-graph extraction from AIS
//! history, sum-product multitarget tracking with Ornstein-Uhlenbeck motion,
//! vessel classification from extent features and route-deviation detection.

// Validation reads `!(x > 0.0)` on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod category;
pub mod classifier;
pub mod error;
pub mod geo;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod sim;
pub mod tracker;
pub mod traffic;

pub use error::{Error, Result};
