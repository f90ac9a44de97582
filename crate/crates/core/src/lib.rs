//! Perception-latency aware estimation and perception scheduling for target tracking.
//!
//! A target follows a linear SDE and is observed through one of several perception
//! methods, each trading latency and CPU time against measurement accuracy. This crate
//! provides the latency-aware Kalman filter, exact and quantized dynamic-programming
//! schedulers, covariance-bound certificates, a moving-horizon controller and a
//! simulation harness.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod covgraph;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod linalg;
pub mod mhplate;
pub mod model;
pub mod qdp;
pub mod scenario;
pub mod schedule;
pub mod sim;

pub use error::{PlateError, Result};
