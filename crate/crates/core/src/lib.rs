//! Meta-learned control barrier functions from simulated LiDAR.
//!
//! A shared feature network φ_w is meta-trained across randomly generated
//! obstacle scenes so that a Bayesian linear head h(z) = θᵀφ_w(z) can be
//! adapted online from a handful of scans. The resulting high-probability
//! lower bound on h drives a CBF-CLF quadratic program for a unicycle.

pub mod barrier;
pub mod blr;
pub mod buffer;
pub mod dataset;
pub mod environment;
pub mod error;
pub mod feature_net;
pub mod gp;
pub mod harness;
pub mod lidar;
pub mod meta_train;
pub mod qp;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
