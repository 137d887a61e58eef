//! Pendulum swing-up control with Deep Deterministic Policy Gradient.
//!
//! The crate is split by concern:
//!
//! - [`env`]: the pendulum dynamics, reward and trajectory export.
//! - [`nn`]: dense networks with manual backpropagation, Adam and soft updates.
//! - [`replay`]: fixed-capacity experience replay.
//! - [`noise`]: Ornstein-Uhlenbeck exploration noise.
//! - [`agent`]: the four-network DDPG learner.
//! - [`trainer`], [`ablation`], [`checkpoint`], [`plot`]: the training harness.

pub mod error;
pub mod ablation;
pub mod agent;
pub mod checkpoint;
pub mod env;
pub mod nn;
pub mod noise;
pub mod plot;
pub mod replay;
pub mod trainer;

pub use error::{Error, Result};

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}
