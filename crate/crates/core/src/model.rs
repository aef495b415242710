//! Shared domain values and the linear-in-features reward model.
//!
//! Every vector type is a thin newtype over `Vec<f64>` so that states, actions,
//! reward weights and updates cannot be mixed up at call sites. All of them
//! deref to `[f64]` for arithmetic.

use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

use crate::error::{check_dim, Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(values: [f64; N]) -> Self {
                Self(values.to_vec())
            }
        }
    };
}

real_vector!(
    /// System state `x` (environment-specific units).
    StateVector
);
real_vector!(
    /// A human or robot action.
    ActionVector
);
real_vector!(
    /// Reward weights: an estimate `θ` or the true `θ*`.
    ParamVector
);
real_vector!(
    /// `θ* − θ`.
    ErrorVector
);
real_vector!(
    /// Feature values `φ(x)`, one per reward weight.
    FeatureVector
);
real_vector!(
    /// Output of a learning rule: the direction `θ` moves in.
    ParamDelta
);

impl ErrorVector {
    /// Error of the estimate `theta` against the true parameters.
    pub fn between(theta_star: &ParamVector, theta: &ParamVector) -> Result<Self> {
        check_dim("error vector", theta_star.dim(), theta.dim())?;
        Ok(Self(
            theta_star.iter().zip(theta.iter()).map(|(s, t)| s - t).collect(),
        ))
    }
}

/// Symmetric per-component action bounds `|u_k| ≤ bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub dim: usize,
    pub bound: f64,
}

impl ActionBox {
    pub fn new(dim: usize, bound: f64) -> Self {
        assert!(bound >= 0.0, "action bound must be non-negative");
        Self { dim, bound }
    }

    pub fn contains(&self, u: &ActionVector) -> bool {
        u.dim() == self.dim && u.iter().all(|v| v.abs() <= self.bound)
    }

    /// Clips each component into the box. Returns whether anything changed.
    pub fn clip(&self, u: &ActionVector) -> (ActionVector, bool) {
        let mut clipped = false;
        let values = u
            .iter()
            .map(|&v| {
                let c = v.clamp(-self.bound, self.bound);
                clipped |= c != v;
                c
            })
            .collect();
        (ActionVector(values), clipped)
    }

    pub fn zero(&self) -> ActionVector {
        ActionVector::zeros(self.dim)
    }
}

/// Axis-aligned box `[lo, hi]^d` that estimates are clamped into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ParamBox {
    fn default() -> Self {
        Self { lo: -1.0, hi: 1.0 }
    }
}

impl ParamBox {
    pub fn clamp(&self, theta: &mut ParamVector) {
        for v in theta.iter_mut() {
            *v = v.clamp(self.lo, self.hi);
        }
    }
}

/// A state sequence `ξ` of `horizon + 1` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(states: Vec<StateVector>) -> Self {
        Self { states }
    }

    /// Number of transitions, `T`.
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Joins two trajectories that share the junction state; it is kept once.
    pub fn concat(&self, next: &Trajectory) -> Trajectory {
        let mut states = self.states.clone();
        states.extend(next.states.iter().skip(1).cloned());
        Trajectory { states }
    }
}

/// A feature map `φ`, which together with weights `θ` defines `R(x, θ) = θ · φ(x)`.
pub trait FeatureMap {
    fn theta_dim(&self) -> usize;
    fn features(&self, x: &StateVector) -> FeatureVector;
    fn describe(&self) -> String {
        String::from("linear reward")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `R(x, θ) = θ · φ(x)`.
pub fn reward_eval(model: &dyn FeatureMap, x: &StateVector, theta: &ParamVector) -> Result<f64> {
    let phi = model.features(x);
    check_dim("reward weights vs features", phi.dim(), theta.dim())?;
    Ok(dot(&phi, theta))
}

/// Sum of `R(x, θ)` over every state of `ξ`, start state included.
pub fn trajectory_reward(
    model: &dyn FeatureMap,
    traj: &Trajectory,
    theta: &ParamVector,
) -> Result<f64> {
    if traj.states.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    traj.states
        .iter()
        .map(|x| reward_eval(model, x, theta))
        .sum()
}
