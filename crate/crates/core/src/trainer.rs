//! Offline training of the correction network and online evaluation of rules.
//!
//! Each epoch draws a fresh dataset of `(x, u_H, θ*, θ, u_R)` tuples from the
//! nominal human model and minimizes the mean stability margin over
//! minibatches with Adam.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{run_episode, EnvHandle, EpisodeSetup, SimulatedHuman};
use crate::error::{check_dim, Error, Result};
use crate::humansim::{noisy_action, optimal_action, sample_theta, HumanNoise, Prior, DEFAULT_RESOLUTION};
use crate::lyapunov::{training_loss, StabilityRecord};
use crate::metrics::EvalSummary;
use crate::model::{norm, ActionVector, ErrorVector, ParamBox, ParamDelta, ParamVector, StateVector};
use crate::net::{bound_scale, Adam, CorrectionNet, NetGrads, DEFAULT_HIDDEN};
use crate::rules::{g_original, net_input, net_input_dim, LearningContext, RuleName};

/// Mixes a base seed with a path of indices into an independent stream seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `strol` or `e2e`.
    pub rule: RuleName,
    pub epochs: usize,
    /// Samples per epoch `N`.
    pub samples: usize,
    pub minibatch: usize,
    pub alpha: f64,
    /// Noise std as a fraction of the action bound.
    pub sigma: f64,
    /// Bias as a fraction of the action bound, applied to every component.
    pub bias: f64,
    pub prior: Prior,
    pub seed: u64,
    pub lambda: f64,
    pub hidden: Vec<usize>,
    pub step_size: f64,
    /// Per-axis resolution of the teaching-action search.
    pub resolution: usize,
    pub bounds: ParamBox,
}

impl TrainConfig {
    pub fn new(rule: RuleName, prior: Prior, alpha: f64) -> Self {
        Self {
            rule,
            epochs: 500,
            samples: 512,
            minibatch: 128,
            alpha,
            sigma: 0.0,
            bias: 0.0,
            prior,
            seed: 0,
            lambda: 1.0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            step_size: 1e-3,
            resolution: DEFAULT_RESOLUTION,
            bounds: ParamBox::default(),
        }
    }

    pub fn validate(&self, env: &EnvHandle) -> Result<()> {
        if !self.rule.needs_net() {
            return Err(Error::Config(format!(
                "only strol and e2e are trainable, got `{}`",
                self.rule
            )));
        }
        if self.samples == 0 || self.minibatch == 0 || self.minibatch > self.samples {
            return Err(Error::Config(format!(
                "need 1 <= minibatch ({}) <= samples ({})",
                self.minibatch, self.samples
            )));
        }
        if !(self.alpha > 0.0) || !(self.step_size > 0.0) || self.lambda < 0.0 || self.sigma < 0.0 {
            return Err(Error::Config(
                "alpha and step size must be positive, lambda and sigma non-negative".into(),
            ));
        }
        if self.hidden.len() != crate::net::LAYERS - 1 {
            return Err(Error::Config(format!(
                "hidden needs {} widths, got {}",
                crate::net::LAYERS - 1,
                self.hidden.len()
            )));
        }
        self.prior.validate(env.theta_dim())
    }

    pub fn noise(&self, env: &EnvHandle) -> HumanNoise {
        HumanNoise::fractions(self.sigma, self.bias, &env.human_box())
    }
}

/// One training tuple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSample {
    pub x: StateVector,
    pub u_h: ActionVector,
    pub theta_star: ParamVector,
    pub theta: ParamVector,
    pub u_r: ActionVector,
}

impl TrainSample {
    pub fn context(&self, alpha: f64) -> LearningContext {
        LearningContext {
            x: self.x.clone(),
            u_h: self.u_h.clone(),
            u_r: self.u_r.clone(),
            theta: self.theta.clone(),
            alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean stability margin per epoch.
    pub losses: Vec<f64>,
    pub wall_time: f64,
    /// 95th percentile of `‖g‖` used to bound e2e outputs.
    pub g_max: Option<f64>,
    pub basin_fraction: Option<f64>,
}

/// Draws the samples for `epoch`. Sample `i` uses its own stream derived from
/// `(seed, epoch, i)`, so the result does not depend on thread scheduling.
pub fn generate_dataset(env: &EnvHandle, cfg: &TrainConfig, epoch: usize) -> Vec<TrainSample> {
    let noise = cfg.noise(env);
    let bx = env.human_box();
    let d = env.theta_dim();
    (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, i as u64]));
            let x = env.sample_state(&mut rng);
            let theta = ParamVector(
                (0..d)
                    .map(|_| rng.random_range(cfg.bounds.lo..=cfg.bounds.hi))
                    .collect(),
            );
            let theta_star = sample_theta(&cfg.prior, &mut rng, cfg.bounds);
            let u_r = env.plan(&x, &theta);
            let (u_star, _) =
                optimal_action(env.env(), &theta_star, &theta, &x, &u_r, cfg.alpha, cfg.resolution);
            let u_h = noisy_action(&u_star, &noise, &bx, &mut rng);
            TrainSample {
                x,
                u_h,
                theta_star,
                theta,
                u_r,
            }
        })
        .collect()
}

/// `p`-th percentile (0–100) by linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// 95th percentile of `‖g‖` over `samples`.
pub fn gradient_norm_bound(env: &EnvHandle, samples: &[TrainSample], alpha: f64) -> Result<f64> {
    let norms = samples
        .iter()
        .map(|s| Ok(norm(&g_original(&s.context(alpha), env.env())?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(percentile(&norms, 95.0))
}

/// Stability record for one sample and the gradient of its margin w.r.t. the net parameters.
///
/// For `e2e` the net's `λ` must already hold the absolute bound.
pub fn sample_loss_and_grad(
    env: &EnvHandle,
    net: &CorrectionNet,
    rule: RuleName,
    sample: &TrainSample,
    alpha: f64,
) -> Result<(StabilityRecord, NetGrads)> {
    let ctx = sample.context(alpha);
    let g = g_original(&ctx, env.env())?;
    let input = net_input(env.env(), &ctx);
    let d = g.dim();
    let (base, gnorm) = match rule {
        RuleName::Strol => (g.clone(), norm(&g)),
        RuleName::E2e => (ParamDelta::zeros(d), 1.0),
        other => {
            return Err(Error::Config(format!("rule `{other}` has no trainable net")));
        }
    };
    let scale = bound_scale(net.lambda, gnorm, d);
    let y = net.forward(&input)?;
    let gtilde = ParamDelta(base.iter().zip(&y).map(|(b, v)| b + scale * v).collect());
    let e = ErrorVector::between(&sample.theta_star, &sample.theta)?;
    // ∂margin/∂g̃ = 2α²g̃ − 2αe, pulled back through the output scaling
    let upstream: Vec<f64> = gtilde
        .iter()
        .zip(e.iter())
        .map(|(gt, ev)| scale * (2.0 * alpha * alpha * gt - 2.0 * alpha * ev))
        .collect();
    let grads = if scale == 0.0 {
        NetGrads::zeros_like(net)
    } else {
        net.backward(&input, &upstream)?
    };
    debug_assert!(norm(&gtilde.iter().zip(base.iter()).map(|(a, b)| a - b).collect::<Vec<_>>()) <= net.lambda * gnorm + 1e-12);
    Ok((StabilityRecord::new(e, gtilde, alpha)?, grads))
}

/// Mean margin over `samples`, with the gradient of that mean.
pub fn batch_loss_and_grad(
    env: &EnvHandle,
    net: &CorrectionNet,
    rule: RuleName,
    samples: &[TrainSample],
    alpha: f64,
) -> Result<(Vec<StabilityRecord>, f64, NetGrads)> {
    let parts = samples
        .par_iter()
        .map(|s| sample_loss_and_grad(env, net, rule, s, alpha))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = NetGrads::zeros_like(net);
    let mut records = Vec::with_capacity(parts.len());
    for (record, g) in parts {
        grads.add_assign(&g);
        records.push(record);
    }
    let n = samples.len() as f64;
    grads.scale(1.0 / n);
    let loss = training_loss(&records)? / n;
    Ok((records, loss, grads))
}

/// Fresh network for `cfg` on `env`.
pub fn init_net(env: &EnvHandle, cfg: &TrainConfig) -> Result<CorrectionNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX]));
    CorrectionNet::random(net_input_dim(env.env()), &cfg.hidden, env.theta_dim(), cfg.lambda, &mut rng)
}

/// Trains from a fresh network.
pub fn train(env: &EnvHandle, cfg: &TrainConfig) -> Result<(CorrectionNet, TrainReport)> {
    train_with(env, cfg, |_, _| {})
}

/// Trains and calls `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_with(
    env: &EnvHandle,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(CorrectionNet, TrainReport)> {
    cfg.validate(env)?;
    let start = Instant::now();
    let mut net = init_net(env, cfg)?;
    let mut g_max = None;
    if cfg.rule == RuleName::E2e {
        let bound = gradient_norm_bound(env, &generate_dataset(env, cfg, 0), cfg.alpha)?;
        net.lambda = cfg.lambda * bound;
        g_max = Some(bound);
    }
    let mut adam = Adam::new(&net, cfg.step_size);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let data = generate_dataset(env, cfg, epoch);
        let mut total = 0.0;
        for (b, batch) in data.chunks(cfg.minibatch).enumerate() {
            let (records, loss, grads) = batch_loss_and_grad(env, &net, cfg.rule, batch, cfg.alpha)?;
            if !loss.is_finite() {
                let k = records.iter().position(|r| !r.margin.is_finite()).unwrap_or(0);
                let sample = b * cfg.minibatch + k;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    sample,
                    detail: format!("{:?}", data[sample]),
                });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut net, &grads);
        }
        let mean = total / data.len() as f64;
        losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok((
        net,
        TrainReport {
            losses,
            wall_time: start.elapsed().as_secs_f64(),
            g_max,
            basin_fraction: None,
        },
    ))
}

/// Simulated users for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    /// Distribution the true weights are drawn from.
    pub prior: Prior,
    /// The robot's initial estimate.
    pub theta0: ParamVector,
    pub sigma: f64,
    pub bias: f64,
    pub alpha: f64,
    pub episodes: usize,
    pub seed: u64,
    pub resolution: usize,
    pub clamp: Option<ParamBox>,
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub theta_star: ParamVector,
    pub final_theta: ParamVector,
    pub final_error: f64,
    pub regret: f64,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub summary: EvalSummary,
    pub episodes: Vec<EpisodeResult>,
}

/// Start state, true weights and human seed for episode `k`; independent of the rule.
pub fn episode_draw(env: &EnvHandle, spec: &EvalSpec, k: usize) -> (StateVector, ParamVector, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[k as u64]));
    let x0 = env.start_state(&mut rng);
    let theta_star = sample_theta(&spec.prior, &mut rng, spec.clamp.unwrap_or_default());
    (x0, theta_star, rng.random())
}

/// Runs `spec.episodes` independent episodes of `rule` and aggregates error and regret.
pub fn evaluate_rule(
    env: &EnvHandle,
    rule: &dyn crate::rules::LearningRule,
    spec: &EvalSpec,
    label: &str,
) -> Result<Evaluation> {
    spec.prior.validate(env.theta_dim())?;
    check_dim("initial estimate", env.theta_dim(), spec.theta0.dim())?;
    let noise = HumanNoise::fractions(spec.sigma, spec.bias, &env.human_box());
    let episodes = (0..spec.episodes)
        .into_par_iter()
        .map(|k| {
            let (x0, theta_star, human_seed) = episode_draw(env, spec, k);
            let mut human =
                SimulatedHuman::new(theta_star.clone(), noise.clone(), spec.resolution, human_seed);
            let setup = EpisodeSetup {
                x0,
                theta0: spec.theta0.clone(),
                theta_star: Some(theta_star.clone()),
                alpha: spec.alpha,
                clamp: spec.clamp,
            };
            let log = run_episode(env, rule, &mut human, setup)?;
            Ok(EpisodeResult {
                episode: k,
                theta_star,
                final_theta: log.thetas.last().cloned().expect("log has a start estimate"),
                final_error: log.final_error.expect("θ* is set"),
                regret: log.regret.expect("θ* is set"),
                collisions: log.collisions(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = episodes.iter().map(|e| e.final_error).collect();
    let regrets: Vec<f64> = episodes.iter().map(|e| e.regret).collect();
    Ok(Evaluation {
        summary: EvalSummary::from_metrics(label, &errors, &regrets),
        episodes,
    })
}
