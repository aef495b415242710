//! Evaluation metrics: parameter error and trajectory regret.

use serde::{Deserialize, Serialize};

use crate::envs::{plan_trajectory, EnvHandle};
use crate::error::{check_dim, Result};
use crate::model::{trajectory_reward, ParamVector, StateVector};

/// `‖θ* − θ‖`.
pub fn param_error(theta_star: &ParamVector, theta: &ParamVector) -> Result<f64> {
    check_dim("parameter error", theta_star.dim(), theta.dim())?;
    Ok(theta_star
        .iter()
        .zip(theta.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// True-reward gap between the full-horizon plan under `θ*` and the one under `θ`.
///
/// Both plans come from the same planner and candidate set, with the human idle.
pub fn regret(
    env: &EnvHandle,
    theta_star: &ParamVector,
    theta: &ParamVector,
    x0: &StateVector,
) -> Result<f64> {
    check_dim("regret weights", theta_star.dim(), theta.dim())?;
    let ideal = plan_trajectory(env.env(), x0, theta_star, env.horizon, env.plan_resolution);
    let learned = plan_trajectory(env.env(), x0, theta, env.horizon, env.plan_resolution);
    if ideal.index == learned.index {
        return Ok(0.0);
    }
    Ok(trajectory_reward(env.env(), &ideal.trajectory, theta_star)?
        - trajectory_reward(env.env(), &learned.trajectory, theta_star)?)
}

/// Mean and sample standard deviation; `(NaN, NaN)` for an empty slice and std 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregated episode metrics for one experimental condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub episodes: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_regret: f64,
    pub std_regret: f64,
}

impl EvalSummary {
    pub fn from_metrics(label: impl Into<String>, errors: &[f64], regrets: &[f64]) -> Self {
        let (mean_error, std_error) = mean_std(errors);
        let (mean_regret, std_regret) = mean_std(regrets);
        Self {
            label: label.into(),
            episodes: errors.len(),
            mean_error,
            std_error,
            mean_regret,
            std_regret,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.episodes == 0
    }

    /// Standard error of the mean regret.
    pub fn regret_sem(&self) -> f64 {
        self.std_regret / (self.episodes as f64).sqrt()
    }

    pub fn error_sem(&self) -> f64 {
        self.std_error / (self.episodes as f64).sqrt()
    }
}
