//! Hybrid BLE RSS / UWB TDOA indoor localization.
//!
//! A planar constant-velocity state is tracked with either an extended or an
//! unscented Kalman filter. BLE received-signal-strength readings arrive at a
//! fixed rate and UWB time-difference-of-arrival readings at a lower,
//! programmable one; [`fusion`] groups them into epochs and drives the
//! filters. [`simulator`] synthesizes measurement streams over configurable
//! anchor layouts and [`evaluation`] scores tracks by their distance to the
//! reference path.

pub mod config;
pub mod ekf;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod fusion;
pub mod innovation;
pub mod log;
pub mod motion;
pub mod sensors;
pub mod simulator;
pub mod types;
pub mod ukf;

pub use error::{Error, Result};
pub use types::{Anchor, AnchorId, AnchorLayout, Capabilities, Covariance4, StateVector};
