//! Online reward learning from physical human corrections, treated as a
//! dynamical system over reward weights.
//!
//! A robot keeps a point estimate `θ` of linear reward weights and updates it
//! from each human correction with a learning rule. The [`lyapunov`] module
//! gives the per-step contraction margin of such an update, and [`trainer`]
//! fits a bounded correction network that, added to the gradient rule, makes
//! that margin negative over a prior of likely users.

pub mod bench;
pub mod cli;
pub mod config;
pub mod envs;
pub mod error;
pub mod humansim;
pub mod lyapunov;
pub mod metrics;
pub mod model;
pub mod net;
pub mod rules;
pub mod serve;
pub mod trainer;

pub use error::{Error, Result};
