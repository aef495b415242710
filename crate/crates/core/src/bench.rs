//! Sweeps over rules and human conditions, with CSV output and paired
//! bootstrap comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envs::EnvHandle;
use crate::error::{Error, Result};
use crate::humansim::Prior;
use crate::metrics::mean_std;
use crate::model::{ParamBox, ParamVector};
use crate::net::CorrectionNet;
use crate::rules::{RuleKind, RuleName};
use crate::trainer::{derive_seed, evaluate_rule, EvalSpec, Evaluation};

/// Default bootstrap resample count.
pub const DEFAULT_RESAMPLES: usize = 10_000;

/// A full experiment grid: every rule crossed with every (prior, noise, bias) condition.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub rules: Vec<RuleName>,
    /// Noise levels `σ` as fractions of the action bound.
    pub noise: Vec<f64>,
    /// Bias levels `ε` as fractions of the action bound.
    pub bias: Vec<f64>,
    /// Named priors the true weights are drawn from.
    pub priors: Vec<(String, Prior)>,
    pub episodes: usize,
    pub seed: u64,
    pub alpha: f64,
    /// The robot's initial estimate (mean of its training prior).
    pub theta0: ParamVector,
    /// Mode means MOF aligns against.
    pub mof_modes: Vec<ParamVector>,
    pub mof_beta: f64,
    pub resolution: usize,
    pub clamp: Option<ParamBox>,
    /// Weight files for the rules that need a network.
    pub weights: BTreeMap<RuleName, PathBuf>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() || self.noise.is_empty() || self.bias.is_empty() || self.priors.is_empty()
        {
            return Err(Error::Config(
                "sweep needs at least one rule, noise level, bias level and prior".into(),
            ));
        }
        if self.episodes == 0 {
            return Err(Error::Config("sweep needs at least one episode per cell".into()));
        }
        Ok(())
    }

    /// Conditions in output order: prior, then noise, then bias.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        for (p, (id, _)) in self.priors.iter().enumerate() {
            for &sigma in &self.noise {
                for &bias in &self.bias {
                    out.push(Condition {
                        prior_index: p,
                        prior: id.clone(),
                        sigma,
                        bias,
                    });
                }
            }
        }
        out
    }

    fn rule(&self, name: RuleName) -> std::result::Result<RuleKind, String> {
        Ok(match name {
            RuleName::Gradient => RuleKind::Gradient,
            RuleName::One => RuleKind::One,
            RuleName::Mof => RuleKind::Mof {
                beta: self.mof_beta,
                modes: self.mof_modes.clone(),
                resolution: self.resolution,
            },
            RuleName::E2e | RuleName::Strol => {
                let path = self
                    .weights
                    .get(&name)
                    .ok_or_else(|| format!("no weight file configured for {name}"))?;
                let net = CorrectionNet::load(path).map_err(|e| e.to_string())?;
                if name == RuleName::Strol {
                    RuleKind::strol(net)
                } else {
                    RuleKind::e2e(net)
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    #[serde(skip)]
    pub prior_index: usize,
    pub prior: String,
    pub sigma: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Done(Evaluation),
    /// The cell could not run; the reason is written to the CSV.
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub rule: RuleName,
    pub condition: Condition,
    pub outcome: CellOutcome,
}

impl Cell {
    pub fn evaluation(&self) -> Option<&Evaluation> {
        match &self.outcome {
            CellOutcome::Done(e) => Some(e),
            CellOutcome::Skipped(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
}

impl SweepResult {
    pub fn find(&self, rule: RuleName, prior: &str, sigma: f64, bias: f64) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.rule == rule
                && c.condition.prior == prior
                && c.condition.sigma == sigma
                && c.condition.bias == bias
        })
    }

    /// One row per cell.
    pub fn summary_csv(&self, header: &str) -> String {
        let mut out = format!("# {header}\n");
        out.push_str("rule,prior,sigma,bias,episodes,mean_error,std_error,mean_regret,std_regret,status\n");
        for c in &self.cells {
            let k = &c.condition;
            match &c.outcome {
                CellOutcome::Done(e) => {
                    let s = &e.summary;
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},ok",
                        c.rule, k.prior, k.sigma, k.bias, s.episodes, s.mean_error, s.std_error, s.mean_regret, s.std_regret
                    )
                    .unwrap();
                }
                CellOutcome::Skipped(reason) => {
                    writeln!(
                        out,
                        "{},{},{},{},0,,,,,skipped: {}",
                        c.rule,
                        k.prior,
                        k.sigma,
                        k.bias,
                        reason.replace([',', '\n'], ";")
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    /// One row per episode of every completed cell.
    pub fn episodes_csv(&self, header: &str) -> String {
        let join = |v: &ParamVector| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let mut out = format!("# {header}\n");
        out.push_str("rule,prior,sigma,bias,episode,final_error,regret,collisions,theta_star,final_theta\n");
        for c in &self.cells {
            let Some(e) = c.evaluation() else { continue };
            let k = &c.condition;
            for ep in &e.episodes {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    c.rule,
                    k.prior,
                    k.sigma,
                    k.bias,
                    ep.episode,
                    ep.final_error,
                    ep.regret,
                    ep.collisions,
                    join(&ep.theta_star),
                    join(&ep.final_theta)
                )
                .unwrap();
            }
        }
        out
    }
}

/// Runs every cell of `spec`. Cells whose weights cannot be loaded are skipped.
///
/// Episode seeds depend only on `(seed, prior index, episode)`, so every rule
/// and every noise or bias level sees the same users, and results do not
/// depend on execution order.
pub fn run_sweep(env: &EnvHandle, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let conditions = spec.conditions();
    let mut cells = Vec::with_capacity(spec.rules.len() * conditions.len());
    for &name in &spec.rules {
        let rule = spec.rule(name);
        for cond in &conditions {
            let outcome = match &rule {
                Err(reason) => {
                    log::warn!("skipping {name} under {}: {reason}", cond.prior);
                    CellOutcome::Skipped(reason.clone())
                }
                Ok(rule) => {
                    let eval_spec = EvalSpec {
                        prior: spec.priors[cond.prior_index].1.clone(),
                        theta0: spec.theta0.clone(),
                        sigma: cond.sigma,
                        bias: cond.bias,
                        alpha: spec.alpha,
                        episodes: spec.episodes,
                        seed: derive_seed(spec.seed, &[cond.prior_index as u64]),
                        resolution: spec.resolution,
                        clamp: spec.clamp,
                    };
                    let label = format!("{name} {} sigma={} bias={}", cond.prior, cond.sigma, cond.bias);
                    CellOutcome::Done(evaluate_rule(env, rule, &eval_spec, &label)?)
                }
            };
            cells.push(Cell {
                rule: name,
                condition: cond.clone(),
                outcome,
            });
        }
    }
    Ok(SweepResult { cells })
}

/// Paired comparison of two cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    /// Mean of `b − a`.
    pub mean_difference: f64,
    pub lo: f64,
    pub hi: f64,
    /// The 95 % interval excludes zero.
    pub significant: bool,
}

fn percentile_sorted(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Percentile bootstrap 95 % interval for the mean of `values`.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    assert!(!values.is_empty() && resamples > 0);
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    (percentile_sorted(&means, 0.025), percentile_sorted(&means, 0.975))
}

/// Paired bootstrap over per-episode differences `b[i] − a[i]`.
pub fn compare_cells(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<Comparison> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Config(format!(
            "paired comparison needs equal non-zero episode counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let (mean, _) = mean_std(&diffs);
    let (lo, hi) = bootstrap_mean_ci(&diffs, resamples, seed);
    Ok(Comparison {
        mean_difference: mean,
        lo,
        hi,
        significant: lo > 0.0 || hi < 0.0,
    })
}
