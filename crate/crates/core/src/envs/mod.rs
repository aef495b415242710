//! Simulation environments, the receding-horizon planner and the episode loop.
//!
//! An [`Environment`] supplies the state dynamics `f`, the feature map `φ` and
//! the action boxes. [`EnvHandle`] bundles one with the episode-level settings
//! (horizon, correction window, planner lookahead and resolution).

mod demo2d;
mod episode;
mod highway;
mod planner;
mod robot;

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{ActionBox, ActionVector, FeatureMap, StateVector};

pub use demo2d::{Demo2d, Demo2dScene};
pub use episode::{
    run_episode, Episode, EpisodeLog, EpisodeSetup, HumanActor, ScriptedHuman, SimulatedHuman,
    StepRecord,
};
pub use highway::{Highway, HighwayScene};
pub use planner::{grid_action, grid_size, plan, plan_trajectory, Plan};
pub use robot::{Robot, RobotFeatures, RobotScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Highway,
    Robot,
    Demo2d,
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvName::Highway => "highway",
            EnvName::Robot => "robot",
            EnvName::Demo2d => "demo2d",
        })
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "highway" => Ok(EnvName::Highway),
            "robot" => Ok(EnvName::Robot),
            "demo2d" => Ok(EnvName::Demo2d),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

/// Known state dynamics plus the features the reward is linear in.
pub trait Environment: FeatureMap + Send + Sync {
    fn name(&self) -> EnvName;
    fn state_dim(&self) -> usize;
    fn human_box(&self) -> ActionBox;
    fn robot_box(&self) -> ActionBox;
    fn dt(&self) -> f64;

    /// `x' = f(x, u_H, u_R)`. Actions are assumed to lie in their boxes.
    fn dynamics(&self, x: &StateVector, u_h: &ActionVector, u_r: &ActionVector) -> StateVector;

    /// A state drawn from the training distribution.
    fn sample_state(&self, rng: &mut dyn RngCore) -> StateVector;

    /// An episode start state.
    fn start_state(&self, rng: &mut dyn RngCore) -> StateVector;

    /// Per-component divisors applied to the state before it is fed to a correction net.
    fn state_scale(&self) -> Vec<f64>;

    /// Scene description for clients (object positions, lanes, workspace).
    fn geometry(&self) -> serde_json::Value;

    fn collision(&self, _x: &StateVector) -> bool {
        false
    }
}

/// Result of [`step`]: the next state and whether an action had to be clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: StateVector,
    pub clipped: bool,
}

/// Advances the state, clipping out-of-box actions first.
pub fn step(
    env: &dyn Environment,
    x: &StateVector,
    u_h: &ActionVector,
    u_r: &ActionVector,
) -> StepOutcome {
    let (u_h, ch) = env.human_box().clip(u_h);
    let (u_r, cr) = env.robot_box().clip(u_r);
    StepOutcome {
        state: env.dynamics(x, &u_h, &u_r),
        clipped: ch || cr,
    }
}

/// An environment together with its episode settings.
#[derive(Clone)]
pub struct EnvHandle {
    env: Arc<dyn Environment>,
    /// Episode length `T`.
    pub horizon: usize,
    /// Number of initial timesteps with human corrections.
    pub window: usize,
    /// Planner lookahead `H` used while acting.
    pub lookahead: usize,
    /// Per-axis resolution of the planner's constant-action candidates.
    pub plan_resolution: usize,
}

impl EnvHandle {
    pub fn new(env: Arc<dyn Environment>, horizon: usize, window: usize) -> Self {
        assert!(horizon >= 1, "horizon must be at least 1");
        Self {
            env,
            horizon,
            window,
            lookahead: 5,
            plan_resolution: 5,
        }
    }

    pub fn with_planner(mut self, lookahead: usize, resolution: usize) -> Self {
        assert!(lookahead >= 1 && resolution >= 1);
        self.lookahead = lookahead;
        self.plan_resolution = resolution;
        self
    }

    /// Default robot setup: `T = 30`, corrections over the first 5 steps.
    pub fn robot() -> Self {
        Self::new(Arc::new(Robot::default()), 30, 5)
    }

    pub fn highway() -> Self {
        Self::new(Arc::new(Highway::default()), 60, 5)
    }

    pub fn demo2d() -> Self {
        Self::new(Arc::new(Demo2d::default()), 30, 5)
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn shared(&self) -> Arc<dyn Environment> {
        Arc::clone(&self.env)
    }

    /// Robot action for state `x` under weights `theta`.
    pub fn plan(&self, x: &StateVector, theta: &crate::model::ParamVector) -> ActionVector {
        plan(self.env(), x, theta, self.lookahead, self.plan_resolution)
    }
}

impl Deref for EnvHandle {
    type Target = dyn Environment;

    fn deref(&self) -> &Self::Target {
        self.env.as_ref()
    }
}

impl fmt::Debug for EnvHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvHandle")
            .field("env", &self.env.name())
            .field("horizon", &self.horizon)
            .field("window", &self.window)
            .field("lookahead", &self.lookahead)
            .field("plan_resolution", &self.plan_resolution)
            .finish()
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in [EnvName::Highway, EnvName::Robot, EnvName::Demo2d] {
            assert_eq!(name.to_string().parse::<EnvName>().unwrap(), name);
        }
        assert!("carla".parse::<EnvName>().is_err());
    }

    #[test]
    fn step_clips_and_flags() {
        let env = Robot::default();
        let x: StateVector = [0.0, 0.0, 0.0].into();
        let out = step(&env, &x, &[0.0, 0.0, 0.0].into(), &[3.0, 0.0, 0.0].into());
        assert!(out.clipped);
        assert!((out.state[0] - 0.1).abs() < 1e-15);
        let out = step(&env, &x, &[0.0, 0.0, 0.0].into(), &[1.0, 0.0, 0.0].into());
        assert!(!out.clipped);
    }
}
