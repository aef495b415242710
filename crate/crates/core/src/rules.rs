//! Learning rules: maps from `(x, u_H, u_R, θ)` to a parameter update direction.
//!
//! `gradient` is the original feature-difference rule. `one` and `mof` filter
//! it, `strol` adds a trained bounded correction and `e2e` replaces it with
//! the correction alone.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{check_dim, Error, Result};
use crate::humansim::optimal_action;
use crate::model::{dot, norm, ActionVector, ParamBox, ParamDelta, ParamVector, StateVector};
use crate::net::{bounded_correction, CorrectionNet};

/// Default MOF acceptance threshold on the cosine alignment.
pub const DEFAULT_MOF_BETA: f64 = 0.5;

/// Everything a rule sees at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningContext {
    pub x: StateVector,
    pub u_h: ActionVector,
    pub u_r: ActionVector,
    pub theta: ParamVector,
    /// Learning rate `α > 0`.
    pub alpha: f64,
}

impl LearningContext {
    pub fn validate(&self, env: &dyn Environment) -> Result<()> {
        check_dim("context state", env.state_dim(), self.x.dim())?;
        check_dim("context human action", env.human_box().dim, self.u_h.dim())?;
        check_dim("context robot action", env.robot_box().dim, self.u_r.dim())?;
        check_dim("context estimate", env.theta_dim(), self.theta.dim())?;
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    Gradient,
    One,
    Mof,
    E2e,
    Strol,
}

impl RuleName {
    pub const ALL: [RuleName; 5] = [
        RuleName::Gradient,
        RuleName::One,
        RuleName::Mof,
        RuleName::E2e,
        RuleName::Strol,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleName::Gradient => "gradient",
            RuleName::One => "one",
            RuleName::Mof => "mof",
            RuleName::E2e => "e2e",
            RuleName::Strol => "strol",
        }
    }

    pub fn needs_net(self) -> bool {
        matches!(self, RuleName::E2e | RuleName::Strol)
    }
}

impl fmt::Display for RuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::UnknownRule(s.to_string()))
    }
}

/// Anything that turns a learning context into an update direction.
pub trait LearningRule: Send + Sync {
    fn name(&self) -> &str;
    fn delta(&self, env: &dyn Environment, ctx: &LearningContext) -> Result<ParamDelta>;
}

/// The built-in rules with their configuration.
#[derive(Debug, Clone)]
pub enum RuleKind {
    Gradient,
    One,
    Mof {
        beta: f64,
        /// Prior mode means; the human's optimal action is computed for each.
        modes: Vec<ParamVector>,
        /// Per-axis grid resolution for those optimal actions.
        resolution: usize,
    },
    /// For e2e nets the stored `λ` is the absolute output bound `λ · G_max`.
    E2e { net: Option<Arc<CorrectionNet>> },
    Strol { net: Option<Arc<CorrectionNet>> },
}

impl RuleKind {
    pub fn kind(&self) -> RuleName {
        match self {
            RuleKind::Gradient => RuleName::Gradient,
            RuleKind::One => RuleName::One,
            RuleKind::Mof { .. } => RuleName::Mof,
            RuleKind::E2e { .. } => RuleName::E2e,
            RuleKind::Strol { .. } => RuleName::Strol,
        }
    }

    pub fn strol(net: CorrectionNet) -> Self {
        RuleKind::Strol {
            net: Some(Arc::new(net)),
        }
    }

    pub fn e2e(net: CorrectionNet) -> Self {
        RuleKind::E2e {
            net: Some(Arc::new(net)),
        }
    }

    pub fn net(&self) -> Option<&CorrectionNet> {
        match self {
            RuleKind::E2e { net } | RuleKind::Strol { net } => net.as_deref(),
            _ => None,
        }
    }
}

impl LearningRule for RuleKind {
    fn name(&self) -> &str {
        self.kind().as_str()
    }

    fn delta(&self, env: &dyn Environment, ctx: &LearningContext) -> Result<ParamDelta> {
        match self {
            RuleKind::Gradient => g_original(ctx, env),
            RuleKind::One => g_one(ctx, env),
            RuleKind::Mof {
                beta,
                modes,
                resolution,
            } => g_mof(ctx, env, *beta, modes, *resolution),
            RuleKind::E2e { net } => {
                g_e2e(ctx, env, net.as_deref().ok_or(Error::NetMissing("e2e"))?)
            }
            RuleKind::Strol { net } => {
                g_strol(ctx, env, net.as_deref().ok_or(Error::NetMissing("strol"))?)
            }
        }
    }
}

/// `∇_θ (R(x_H, θ) − R(x_R, θ)) = φ(x_H) − φ(x_R)` for the linear reward.
pub fn g_original(ctx: &LearningContext, env: &dyn Environment) -> Result<ParamDelta> {
    let x_h = env.dynamics(&ctx.x, &ctx.u_h, &ctx.u_r);
    let x_r = env.dynamics(&ctx.x, &env.human_box().zero(), &ctx.u_r);
    let (fh, fr) = (env.features(&x_h), env.features(&x_r));
    check_dim("gradient rule features", ctx.theta.dim(), fh.dim())?;
    Ok(ParamDelta(fh.iter().zip(fr.iter()).map(|(a, b)| a - b).collect()))
}

/// Network input: scaled state, actions normalized by their bounds, then `θ`.
pub fn net_input(env: &dyn Environment, ctx: &LearningContext) -> Vec<f64> {
    let scale = env.state_scale();
    let hb = env.human_box().bound;
    let rb = env.robot_box().bound;
    let mut input =
        Vec::with_capacity(ctx.x.dim() + ctx.u_h.dim() + ctx.u_r.dim() + ctx.theta.dim());
    input.extend(ctx.x.iter().zip(&scale).map(|(v, s)| v / s));
    input.extend(ctx.u_h.iter().map(|v| v / hb));
    input.extend(ctx.u_r.iter().map(|v| v / rb));
    input.extend(ctx.theta.iter().copied());
    input
}

/// Input width a correction net needs for `env`: `n + 2m + d` (for equal action dims).
pub fn net_input_dim(env: &dyn Environment) -> usize {
    env.state_dim() + env.human_box().dim + env.robot_box().dim + env.theta_dim()
}

/// `g̃ = g + ĝ` with `‖ĝ‖ ≤ λ‖g‖`.
pub fn g_strol(
    ctx: &LearningContext,
    env: &dyn Environment,
    net: &CorrectionNet,
) -> Result<ParamDelta> {
    net.expect_dims(net_input_dim(env), env.theta_dim())?;
    let g = g_original(ctx, env)?;
    let correction = bounded_correction(net, &net_input(env, ctx), norm(&g))?;
    Ok(ParamDelta(
        g.iter().zip(correction.iter()).map(|(a, b)| a + b).collect(),
    ))
}

/// `g̃ = ĝ`, bounded by the net's stored absolute bound.
pub fn g_e2e(
    ctx: &LearningContext,
    env: &dyn Environment,
    net: &CorrectionNet,
) -> Result<ParamDelta> {
    net.expect_dims(net_input_dim(env), env.theta_dim())?;
    bounded_correction(net, &net_input(env, ctx), 1.0)
}

/// Keeps only the largest-magnitude component of `g` (lowest index on ties).
pub fn g_one(ctx: &LearningContext, env: &dyn Environment) -> Result<ParamDelta> {
    Ok(keep_dominant(g_original(ctx, env)?))
}

pub(crate) fn keep_dominant(g: ParamDelta) -> ParamDelta {
    let mut best = 0;
    for (k, v) in g.iter().enumerate() {
        if v.abs() > g[best].abs() {
            best = k;
        }
    }
    let mut out = ParamDelta::zeros(g.dim());
    if !g.is_empty() {
        out[best] = g[best];
    }
    out
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Best cosine alignment of `u_H` with the optimal teaching action for any mode.
pub fn mof_alignment(
    ctx: &LearningContext,
    env: &dyn Environment,
    modes: &[ParamVector],
    resolution: usize,
) -> f64 {
    modes
        .iter()
        .map(|mode| {
            let (u_star, _) =
                optimal_action(env, mode, &ctx.theta, &ctx.x, &ctx.u_r, ctx.alpha, resolution);
            cosine(&ctx.u_h, &u_star)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Passes `g` through when `u_H` aligns with some mode's optimal action, else zero.
pub fn g_mof(
    ctx: &LearningContext,
    env: &dyn Environment,
    beta: f64,
    modes: &[ParamVector],
    resolution: usize,
) -> Result<ParamDelta> {
    let d = env.theta_dim();
    if norm(&ctx.u_h) == 0.0 || modes.is_empty() {
        return Ok(ParamDelta::zeros(d));
    }
    if mof_alignment(ctx, env, modes, resolution) >= beta {
        g_original(ctx, env)
    } else {
        Ok(ParamDelta::zeros(d))
    }
}

/// `θ' = θ + α·Δ`, then clamped into `bounds` when given.
pub fn step_estimate(
    theta: &ParamVector,
    delta: &ParamDelta,
    alpha: f64,
    bounds: Option<ParamBox>,
) -> ParamVector {
    let mut next = ParamVector(
        theta
            .iter()
            .zip(delta.iter())
            .map(|(t, d)| t + alpha * d)
            .collect(),
    );
    if let Some(b) = bounds {
        b.clamp(&mut next);
    }
    next
}
