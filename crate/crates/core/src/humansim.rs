//! The nominal human: a prior over true reward weights, optimal teaching
//! actions, and Gaussian noise/bias on top of them.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{grid_action, grid_size, Environment};
use crate::error::{check_dim, Error, Result};
use crate::model::{ActionBox, ActionVector, ParamBox, ParamVector, StateVector};

/// Default per-axis resolution of the teaching-action search.
pub const DEFAULT_RESOLUTION: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorMode {
    pub mean: Vec<f64>,
    /// Diagonal covariance.
    #[serde(default)]
    pub cov: Vec<f64>,
    pub weight: f64,
}

/// Distribution `P(θ)` over true reward weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Prior {
    Mixture { modes: Vec<PriorMode> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl Prior {
    /// Equal-weight mixture of point masses with isotropic variance `var`.
    pub fn modes(means: &[&[f64]], var: f64) -> Self {
        let w = 1.0 / means.len() as f64;
        Prior::Mixture {
            modes: means
                .iter()
                .map(|m| PriorMode {
                    mean: m.to_vec(),
                    cov: vec![var; m.len()],
                    weight: w,
                })
                .collect(),
        }
    }

    pub fn uniform(dim: usize, bounds: ParamBox) -> Self {
        Prior::Uniform {
            lo: vec![bounds.lo; dim],
            hi: vec![bounds.hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Mixture { modes } => modes.first().map_or(0, |m| m.mean.len()),
            Prior::Uniform { lo, .. } => lo.len(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Prior::Mixture { modes } => {
                if modes.is_empty() {
                    return Err(Error::Config("prior has no modes".into()));
                }
                let mut total = 0.0;
                for m in modes {
                    check_dim("prior mode mean", dim, m.mean.len())?;
                    if !m.cov.is_empty() {
                        check_dim("prior mode covariance", dim, m.cov.len())?;
                    }
                    if m.weight < 0.0 || m.cov.iter().any(|c| *c < 0.0) {
                        return Err(Error::Config("prior weights and variances must be non-negative".into()));
                    }
                    total += m.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("prior weights sum to {total}, expected 1")));
                }
            }
            Prior::Uniform { lo, hi } => {
                check_dim("uniform prior lower bound", dim, lo.len())?;
                check_dim("uniform prior upper bound", dim, hi.len())?;
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::Config("uniform prior has lo > hi".into()));
                }
            }
        }
        Ok(())
    }

    /// Expected value of the prior.
    pub fn mean(&self) -> ParamVector {
        match self {
            Prior::Mixture { modes } => {
                let mut m = vec![0.0; self.dim()];
                for mode in modes {
                    for (acc, v) in m.iter_mut().zip(&mode.mean) {
                        *acc += mode.weight * v;
                    }
                }
                ParamVector(m)
            }
            Prior::Uniform { lo, hi } => {
                ParamVector(lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect())
            }
        }
    }

    /// Mode means (the box center for a uniform prior).
    pub fn mode_means(&self) -> Vec<ParamVector> {
        match self {
            Prior::Mixture { modes } => modes
                .iter()
                .map(|m| ParamVector(m.mean.clone()))
                .collect(),
            Prior::Uniform { .. } => vec![self.mean()],
        }
    }
}

/// Draws `θ*` from the prior and clamps it into `bounds`.
pub fn sample_theta(prior: &Prior, rng: &mut dyn RngCore, bounds: ParamBox) -> ParamVector {
    let mut theta = match prior {
        Prior::Mixture { modes } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = modes.len() - 1;
            for (i, m) in modes.iter().enumerate() {
                acc += m.weight;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            let mode = &modes[chosen];
            ParamVector(
                mode.mean
                    .iter()
                    .enumerate()
                    .map(|(k, mu)| {
                        let var = mode.cov.get(k).copied().unwrap_or(0.0);
                        let z: f64 = StandardNormal.sample(rng);
                        mu + var.sqrt() * z
                    })
                    .collect(),
            )
        }
        Prior::Uniform { lo, hi } => ParamVector(
            lo.iter()
                .zip(hi)
                .map(|(a, b)| if a == b { *a } else { rng.random_range(*a..=*b) })
                .collect(),
        ),
    };
    bounds.clamp(&mut theta);
    theta
}

/// Suboptimality `δ ~ N(ε, σ·bound)` added to optimal actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanNoise {
    /// Standard deviation as a fraction of the largest admissible action component.
    pub sigma: f64,
    /// Per-component bias in action units.
    pub bias: Vec<f64>,
}

impl HumanNoise {
    pub fn none(dim: usize) -> Self {
        Self {
            sigma: 0.0,
            bias: vec![0.0; dim],
        }
    }

    /// Noise with `σ` and a uniform bias `ε`, both given as fractions of the action bound.
    pub fn fractions(sigma: f64, bias: f64, bx: &ActionBox) -> Self {
        assert!(sigma >= 0.0, "noise level must be non-negative");
        Self {
            sigma,
            bias: vec![bias * bx.bound; bx.dim],
        }
    }
}

/// `clip(u* + δ)`.
pub fn noisy_action(
    u_star: &ActionVector,
    noise: &HumanNoise,
    bx: &ActionBox,
    rng: &mut dyn RngCore,
) -> ActionVector {
    let std = noise.sigma * bx.bound;
    let raw: Vec<f64> = u_star
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let eps = noise.bias.get(k).copied().unwrap_or(0.0);
            let z: f64 = if std > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            u + eps + std * z
        })
        .collect();
    bx.clip(&ActionVector(raw)).0
}

/// Teaching action minimizing `‖θ* − (θ + α·g(u_H))‖`.
///
/// Searches a per-axis grid of `resolution` points over the human action box,
/// then one refinement grid of the same resolution spanning one coarse cell
/// either side of the best point. Only strict improvements replace the
/// incumbent, so ties keep the lowest grid index. Returns the action and its
/// objective value.
pub fn optimal_action(
    env: &dyn Environment,
    theta_star: &ParamVector,
    theta: &ParamVector,
    x: &StateVector,
    u_r: &ActionVector,
    alpha: f64,
    resolution: usize,
) -> (ActionVector, f64) {
    assert!(resolution >= 1);
    let bx = env.human_box();
    let phi_r = env.features(&env.dynamics(x, &bx.zero(), u_r));
    let target: Vec<f64> = theta_star.iter().zip(theta.iter()).map(|(s, t)| s - t).collect();
    let objective = |u: &ActionVector| -> f64 {
        let phi_h = env.features(&env.dynamics(x, u, u_r));
        target
            .iter()
            .zip(phi_h.iter().zip(phi_r.iter()))
            .map(|(e, (h, r))| {
                let d = e - alpha * (h - r);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };

    let mut best = bx.zero();
    let mut best_val = f64::INFINITY;
    for i in 0..grid_size(bx.dim, resolution) {
        let u = grid_action(&bx, resolution, i);
        let v = objective(&u);
        if v < best_val {
            best_val = v;
            best = u;
        }
    }

    if resolution > 1 {
        let cell = 2.0 * bx.bound / (resolution - 1) as f64;
        let local = ActionBox::new(bx.dim, cell);
        let center = best.clone();
        for i in 0..grid_size(bx.dim, resolution) {
            let offset = grid_action(&local, resolution, i);
            let u = ActionVector(
                center
                    .iter()
                    .zip(offset.iter())
                    .map(|(c, o)| (c + o).clamp(-bx.bound, bx.bound))
                    .collect(),
            );
            let v = objective(&u);
            if v < best_val {
                best_val = v;
                best = u;
            }
        }
    }
    (best, best_val)
}
