//! Mean-square stabilizing state feedback for Itô linear systems
//! `dX = (AX + Bu)dt + (CX + Du)dW`, found by running policy iteration on a
//! sequence of discounted problems whose discount shrinks to zero.
//!
//! [`exact::stabilize`] works from the model; [`adp::stabilize_model_free`]
//! uses only sampled trajectories.

pub mod adp;
pub mod config;
pub mod error;
pub mod exact;
pub mod matops;
pub mod run;
pub mod sde;
pub mod sysmodel;

pub use error::{Error, Result};
pub use exact::{stabilize, PiSettings, StabilizationResult, StabilizeOptions};
pub use matops::{Mat, SymMat, Vector};
pub use sysmodel::{is_ms_stabilizer, CostSpec, FeedbackGain, StochasticLinearSystem, ValueMatrix};
