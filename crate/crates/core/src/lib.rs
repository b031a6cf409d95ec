//! Recurrent neural network (RNN/LSTM) system identification by extended
//! Kalman filtering.
//!
//! The crate trains state-space models whose state-update and output maps are
//! small feedforward networks. Training treats the hidden state and the
//! network parameters as one joint vector estimated by an EKF, with support
//! for arbitrary strongly convex losses, separable regularizers, and
//! ℓ1 sparsification. Gradient-descent baselines (condensed, relaxed and
//! partially condensed objectives) and a nonlinear MPC loop with disturbance
//! augmentation are built on the same model machinery.

pub mod data;
pub mod ekf;
pub mod error;
pub mod gd;
pub mod init_state;
pub mod models;
pub mod mpc;
pub mod numerics;
pub mod objectives;
pub mod report;

pub use error::{Error, Result};
