//! Receding-horizon planner over constant-action candidates.
//!
//! Candidates are the points of a per-axis grid over the robot's action box,
//! each held constant for the whole lookahead. Candidates are indexed with the
//! first axis most significant; ties keep the lowest index.

use super::Environment;
use crate::model::{dot, ActionBox, ActionVector, ParamVector, StateVector, Trajectory};

/// Number of grid points in a `dim`-dimensional grid with `resolution` points per axis.
pub fn grid_size(dim: usize, resolution: usize) -> usize {
    resolution.pow(dim as u32)
}

/// The `index`-th point of the per-axis grid over `bx`.
pub fn grid_action(bx: &ActionBox, resolution: usize, index: usize) -> ActionVector {
    let mut values = vec![0.0; bx.dim];
    let mut rest = index;
    for axis in (0..bx.dim).rev() {
        let k = rest % resolution;
        rest /= resolution;
        values[axis] = axis_value(bx.bound, resolution, k);
    }
    ActionVector(values)
}

pub(crate) fn axis_value(bound: f64, resolution: usize, k: usize) -> f64 {
    if resolution == 1 {
        0.0
    } else {
        -bound + 2.0 * bound * k as f64 / (resolution - 1) as f64
    }
}

/// Best constant-action candidate and its rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub action: ActionVector,
    pub index: usize,
    pub trajectory: Trajectory,
    /// Summed reward of the rolled-out states after the start state.
    pub score: f64,
}

fn rollout(
    env: &dyn Environment,
    x: &StateVector,
    u: &ActionVector,
    horizon: usize,
    theta: &ParamVector,
    keep: bool,
) -> (f64, Vec<StateVector>) {
    let zero = env.human_box().zero();
    let mut states = Vec::new();
    if keep {
        states.reserve(horizon + 1);
        states.push(x.clone());
    }
    let mut cur = x.clone();
    let mut score = 0.0;
    for _ in 0..horizon {
        cur = env.dynamics(&cur, &zero, u);
        score += dot(&env.features(&cur), theta);
        if keep {
            states.push(cur.clone());
        }
    }
    (score, states)
}

fn best_index(
    env: &dyn Environment,
    x: &StateVector,
    theta: &ParamVector,
    horizon: usize,
    resolution: usize,
) -> usize {
    let bx = env.robot_box();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..grid_size(bx.dim, resolution) {
        let u = grid_action(&bx, resolution, i);
        let (score, _) = rollout(env, x, &u, horizon, theta, false);
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

/// Full plan from `x` under weights `theta`, human idle.
pub fn plan_trajectory(
    env: &dyn Environment,
    x: &StateVector,
    theta: &ParamVector,
    horizon: usize,
    resolution: usize,
) -> Plan {
    assert!(horizon >= 1 && resolution >= 1);
    let index = best_index(env, x, theta, horizon, resolution);
    let action = grid_action(&env.robot_box(), resolution, index);
    let (score, states) = rollout(env, x, &action, horizon, theta, true);
    Plan {
        action,
        index,
        trajectory: Trajectory::new(states),
        score,
    }
}

/// The robot action `u_R` for the current step.
pub fn plan(
    env: &dyn Environment,
    x: &StateVector,
    theta: &ParamVector,
    horizon: usize,
    resolution: usize,
) -> ActionVector {
    assert!(horizon >= 1 && resolution >= 1);
    let index = best_index(env, x, theta, horizon, resolution);
    grid_action(&env.robot_box(), resolution, index)
}
