//! Stability of the learning dynamics.
//!
//! With error `e = θ* − θ` and update `θ' = θ + α·g̃`, the candidate
//! `V = ‖e‖²` changes by exactly `α²‖g̃‖² − 2α(e·g̃)`. A negative margin
//! certifies that this step shrinks the error. The training loss for the
//! correction net is the sum of margins over a dataset.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::envs::{grid_action, grid_size, EnvHandle};
use crate::error::{check_dim, Error, Result};
use crate::model::{dot, norm_sq, ActionVector, ErrorVector, ParamBox, ParamDelta, ParamVector, StateVector};
use crate::rules::{step_estimate, LearningContext, LearningRule};

/// Default convergence tolerance (∞-norm) for basin maps.
pub const DEFAULT_RHO: f64 = 0.1;
/// Default number of learning updates per basin-map cell.
pub const DEFAULT_STEPS: usize = 50;

/// `V = ‖e‖²`.
pub fn lyapunov_candidate(e: &ErrorVector) -> f64 {
    norm_sq(e)
}

/// `α²‖g̃‖² − 2α(e·g̃)`.
pub fn stability_margin(e: &ErrorVector, gtilde: &ParamDelta, alpha: f64) -> f64 {
    debug_assert_eq!(e.dim(), gtilde.dim());
    alpha * alpha * norm_sq(gtilde) - 2.0 * alpha * dot(e, gtilde)
}

/// `V(e − αg̃) − V(e)`, evaluated directly.
pub fn lyapunov_difference(e: &ErrorVector, gtilde: &ParamDelta, alpha: f64) -> f64 {
    let next: Vec<f64> = e.iter().zip(gtilde.iter()).map(|(a, g)| a - alpha * g).collect();
    norm_sq(&next) - norm_sq(e)
}

/// Whether the closed-form margin and the direct difference agree in sign.
///
/// Values within `tol` of zero count as zero on either side.
pub fn margin_equivalence_check(e: &ErrorVector, gtilde: &ParamDelta, alpha: f64, tol: f64) -> bool {
    let sign = |v: f64| {
        if v.abs() <= tol {
            0
        } else if v < 0.0 {
            -1
        } else {
            1
        }
    };
    sign(stability_margin(e, gtilde, alpha)) == sign(lyapunov_difference(e, gtilde, alpha))
}

/// One evaluated stability condition.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRecord {
    pub error: ErrorVector,
    pub gtilde: ParamDelta,
    pub alpha: f64,
    pub v: f64,
    pub margin: f64,
}

impl StabilityRecord {
    pub fn new(error: ErrorVector, gtilde: ParamDelta, alpha: f64) -> Result<Self> {
        check_dim("stability record", error.dim(), gtilde.dim())?;
        let v = lyapunov_candidate(&error);
        let margin = stability_margin(&error, &gtilde, alpha);
        Ok(Self {
            error,
            gtilde,
            alpha,
            v,
            margin,
        })
    }

    pub fn is_contracting(&self) -> bool {
        self.margin < 0.0
    }
}

/// Sum of stability margins; lower is better.
pub fn training_loss(records: &[StabilityRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(records.iter().map(|r| r.margin).sum())
}

/// Settings for [`basin_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct BasinSpec {
    pub x_start: StateVector,
    pub theta_start: ParamVector,
    pub modes: Vec<ParamVector>,
    pub alpha: f64,
    pub steps: usize,
    /// Grid points per action axis.
    pub resolution: usize,
    pub rho: f64,
    pub clamp: Option<ParamBox>,
}

impl BasinSpec {
    pub fn new(x_start: StateVector, theta_start: ParamVector, modes: Vec<ParamVector>, alpha: f64) -> Self {
        Self {
            x_start,
            theta_start,
            modes,
            alpha,
            steps: DEFAULT_STEPS,
            resolution: 41,
            rho: DEFAULT_RHO,
            clamp: Some(ParamBox::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinCell {
    /// Index of the mode the estimate settled at, if any.
    pub mode: Option<usize>,
    /// First update count after which the estimate stayed within tolerance.
    pub steps_to_converge: Option<usize>,
    pub final_theta: ParamVector,
}

/// Where the estimate ends up for each constant human action.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinMap {
    pub action_grid: Vec<ActionVector>,
    pub cells: Vec<BasinCell>,
    pub resolution: usize,
    pub bound: f64,
    pub steps: usize,
    pub rho: f64,
}

impl BasinMap {
    pub fn converged_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.mode.is_some()).count() as f64 / self.cells.len() as f64
    }

    /// Fraction of cells that settled at mode `k`.
    pub fn mode_fraction(&self, k: usize) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.mode == Some(k)).count() as f64 / self.cells.len() as f64
    }

    /// CSV with one metadata comment line, a header, then one row per cell.
    /// Unconverged cells carry `-1` in both trailing columns.
    pub fn write_csv<W: Write>(&self, mut out: W, label: &str) -> io::Result<()> {
        let dim = self.action_grid.first().map_or(0, |u| u.dim());
        writeln!(
            out,
            "# basin {label} resolution={} bound={} steps={} rho={} cells={}",
            self.resolution,
            self.bound,
            self.steps,
            self.rho,
            self.cells.len()
        )?;
        let mut header: Vec<String> = (1..=dim).map(|i| format!("u{i}")).collect();
        header.push("mode_index".into());
        header.push("steps_to_converge".into());
        writeln!(out, "{}", header.join(","))?;
        for (u, cell) in self.action_grid.iter().zip(&self.cells) {
            let mut row: Vec<String> = u.iter().map(|v| format!("{v}")).collect();
            row.push(cell.mode.map_or("-1".into(), |m| m.to_string()));
            row.push(cell.steps_to_converge.map_or("-1".into(), |s| s.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn nearest_mode(theta: &ParamVector, modes: &[ParamVector], rho: f64) -> Option<usize> {
    modes.iter().position(|m| {
        m.iter()
            .zip(theta.iter())
            .all(|(a, b)| (a - b).abs() <= rho)
    })
}

/// Holds each grid action fixed at the start state for `spec.steps` updates
/// and records which mode the estimate converges to.
///
/// The robot action is planned once at the start state under the start
/// estimate and kept fixed; only `θ` evolves.
pub fn basin_map(env: &EnvHandle, rule: &dyn LearningRule, spec: &BasinSpec) -> Result<BasinMap> {
    if spec.modes.is_empty() {
        return Err(Error::NoModes);
    }
    let bx = env.human_box();
    let u_r = env.plan(&spec.x_start, &spec.theta_start);
    let n = grid_size(bx.dim, spec.resolution);
    let grid: Vec<ActionVector> = (0..n).map(|i| grid_action(&bx, spec.resolution, i)).collect();
    let cells = grid
        .par_iter()
        .map(|u_h| {
            let mut theta = spec.theta_start.clone();
            let mut history = Vec::with_capacity(spec.steps + 1);
            history.push(theta.clone());
            for _ in 0..spec.steps {
                let ctx = LearningContext {
                    x: spec.x_start.clone(),
                    u_h: u_h.clone(),
                    u_r: u_r.clone(),
                    theta: theta.clone(),
                    alpha: spec.alpha,
                };
                let delta = rule.delta(env.env(), &ctx)?;
                theta = step_estimate(&theta, &delta, spec.alpha, spec.clamp);
                history.push(theta.clone());
            }
            let mode = nearest_mode(&theta, &spec.modes, spec.rho);
            let steps_to_converge = mode.map(|k| {
                let target = &spec.modes[k];
                let within = |t: &ParamVector| {
                    t.iter().zip(target.iter()).all(|(a, b)| (a - b).abs() <= spec.rho)
                };
                let mut first = history.len() - 1;
                while first > 0 && within(&history[first - 1]) {
                    first -= 1;
                }
                first
            });
            Ok(BasinCell {
                mode,
                steps_to_converge,
                final_theta: theta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BasinMap {
        action_grid: grid,
        cells,
        resolution: spec.resolution,
        bound: bx.bound,
        steps: spec.steps,
        rho: spec.rho,
    })
}
