//! The online learning loop: plan, receive a correction, update `θ`, advance.
//!
//! [`Episode`] holds the running state and performs one tick per
//! [`Episode::advance`] call. Offline evaluation ([`run_episode`]) and the
//! interactive server both drive it, so their updates come from the same code.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{step, EnvHandle};
use crate::error::{check_dim, Result};
use crate::humansim::{noisy_action, optimal_action, HumanNoise};
use crate::lyapunov::stability_margin;
use crate::metrics::{param_error, regret};
use crate::model::{norm, ActionVector, ErrorVector, ParamBox, ParamDelta, ParamVector, StateVector};
use crate::rules::{step_estimate, LearningContext, LearningRule};

/// Source of human corrections during an episode.
pub trait HumanActor {
    /// Correction at tick `t` given the current state, estimate and robot action.
    fn act(
        &mut self,
        env: &EnvHandle,
        t: usize,
        x: &StateVector,
        theta: &ParamVector,
        u_r: &ActionVector,
        alpha: f64,
    ) -> ActionVector;
}

/// Noisy optimal teacher for a fixed `θ*`.
#[derive(Debug, Clone)]
pub struct SimulatedHuman {
    pub theta_star: ParamVector,
    pub noise: HumanNoise,
    /// Per-axis resolution of the teaching-action search.
    pub resolution: usize,
    rng: ChaCha8Rng,
}

impl SimulatedHuman {
    pub fn new(theta_star: ParamVector, noise: HumanNoise, resolution: usize, seed: u64) -> Self {
        Self {
            theta_star,
            noise,
            resolution,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl HumanActor for SimulatedHuman {
    fn act(
        &mut self,
        env: &EnvHandle,
        _t: usize,
        x: &StateVector,
        theta: &ParamVector,
        u_r: &ActionVector,
        alpha: f64,
    ) -> ActionVector {
        let (u_star, _) =
            optimal_action(env.env(), &self.theta_star, theta, x, u_r, alpha, self.resolution);
        noisy_action(&u_star, &self.noise, &env.human_box(), &mut self.rng)
    }
}

/// Replays a fixed action sequence, then stays idle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedHuman {
    pub actions: Vec<ActionVector>,
}

impl HumanActor for ScriptedHuman {
    fn act(
        &mut self,
        env: &EnvHandle,
        t: usize,
        _x: &StateVector,
        _theta: &ParamVector,
        _u_r: &ActionVector,
        _alpha: f64,
    ) -> ActionVector {
        self.actions
            .get(t)
            .cloned()
            .unwrap_or_else(|| env.human_box().zero())
    }
}

/// Everything that happened during one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Human action after clipping to its box.
    pub u_h: ActionVector,
    pub u_r: ActionVector,
    pub clipped: bool,
    pub delta: ParamDelta,
    /// Stability margin against `θ*`, when `θ*` is known.
    pub margin: Option<f64>,
    pub rule: String,
    pub collision: bool,
}

/// Full record of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// `x⁰ … x^t`, one more entry than `steps`.
    pub states: Vec<StateVector>,
    /// `θ⁰ … θ^t`.
    pub thetas: Vec<ParamVector>,
    pub steps: Vec<StepRecord>,
    pub theta_star: Option<ParamVector>,
    pub final_error: Option<f64>,
    pub regret: Option<f64>,
}

impl EpisodeLog {
    pub fn margins(&self) -> Vec<Option<f64>> {
        self.steps.iter().map(|s| s.margin).collect()
    }

    pub fn human_actions(&self) -> Vec<ActionVector> {
        self.steps.iter().map(|s| s.u_h.clone()).collect()
    }

    pub fn collisions(&self) -> usize {
        self.steps.iter().filter(|s| s.collision).count()
    }

    pub fn clipped_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.clipped).count()
    }

    /// One row per tick: the pre-step state and estimate, both actions, the margin and flags.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let (Some(x0), Some(t0)) = (self.states.first(), self.thetas.first()) else {
            return Ok(());
        };
        let mut header = vec!["t".to_string()];
        header.extend((0..x0.dim()).map(|i| format!("x{i}")));
        header.extend((0..t0.dim()).map(|i| format!("theta{i}")));
        if let Some(s) = self.steps.first() {
            header.extend((0..s.u_h.dim()).map(|i| format!("uh{i}")));
            header.extend((0..s.u_r.dim()).map(|i| format!("ur{i}")));
        }
        header.extend(["margin", "rule", "clipped", "collision"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            let mut row = vec![s.t.to_string()];
            row.extend(self.states[s.t].iter().map(|v| v.to_string()));
            row.extend(self.thetas[s.t].iter().map(|v| v.to_string()));
            row.extend(s.u_h.iter().map(|v| v.to_string()));
            row.extend(s.u_r.iter().map(|v| v.to_string()));
            row.push(s.margin.map_or(String::new(), |m| m.to_string()));
            row.push(s.rule.clone());
            row.push(u8::from(s.clipped).to_string());
            row.push(u8::from(s.collision).to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("episode logs contain only plain data")
    }
}

/// Initial conditions of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSetup {
    pub x0: StateVector,
    pub theta0: ParamVector,
    pub theta_star: Option<ParamVector>,
    pub alpha: f64,
    pub clamp: Option<ParamBox>,
}

/// A running episode.
#[derive(Debug, Clone)]
pub struct Episode {
    env: EnvHandle,
    setup: EpisodeSetup,
    x: StateVector,
    theta: ParamVector,
    t: usize,
    planned: Option<ActionVector>,
    log: EpisodeLog,
}

impl Episode {
    pub fn new(env: EnvHandle, setup: EpisodeSetup) -> Result<Self> {
        check_dim("episode start state", env.state_dim(), setup.x0.dim())?;
        check_dim("episode start estimate", env.theta_dim(), setup.theta0.dim())?;
        if let Some(ts) = &setup.theta_star {
            check_dim("episode true weights", env.theta_dim(), ts.dim())?;
        }
        let log = EpisodeLog {
            states: vec![setup.x0.clone()],
            thetas: vec![setup.theta0.clone()],
            steps: Vec::with_capacity(env.horizon),
            theta_star: setup.theta_star.clone(),
            final_error: None,
            regret: None,
        };
        Ok(Self {
            x: setup.x0.clone(),
            theta: setup.theta0.clone(),
            env,
            setup,
            t: 0,
            planned: None,
            log,
        })
    }

    pub fn env(&self) -> &EnvHandle {
        &self.env
    }

    pub fn state(&self) -> &StateVector {
        &self.x
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn theta_star(&self) -> Option<&ParamVector> {
        self.setup.theta_star.as_ref()
    }

    pub fn alpha(&self) -> f64 {
        self.setup.alpha
    }

    pub fn tick(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.env.horizon
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    /// Replaces `θ*` for the rest of the episode; later margins use the new value.
    pub fn set_theta_star(&mut self, theta_star: Option<ParamVector>) -> Result<()> {
        if let Some(ts) = &theta_star {
            check_dim("episode true weights", self.env.theta_dim(), ts.dim())?;
        }
        self.setup.theta_star = theta_star.clone();
        self.log.theta_star = theta_star;
        Ok(())
    }

    /// Robot action for the current state and estimate.
    pub fn robot_action(&mut self) -> ActionVector {
        if self.planned.is_none() {
            self.planned = Some(self.env.plan(&self.x, &self.theta));
        }
        self.planned.clone().expect("plan cached above")
    }

    /// One tick with human action `u_h`.
    ///
    /// The estimate only changes on ticks with a nonzero correction; an idle
    /// human gives the learner nothing to learn from.
    pub fn advance(&mut self, rule: &dyn LearningRule, u_h: &ActionVector) -> Result<&StepRecord> {
        check_dim("episode human action", self.env.human_box().dim, u_h.dim())?;
        let u_r = self.robot_action();
        let (u_h, clipped_h) = self.env.human_box().clip(u_h);
        let delta = if norm(&u_h) > 0.0 {
            let ctx = LearningContext {
                x: self.x.clone(),
                u_h: u_h.clone(),
                u_r: u_r.clone(),
                theta: self.theta.clone(),
                alpha: self.setup.alpha,
            };
            rule.delta(self.env.env(), &ctx)?
        } else {
            ParamDelta::zeros(self.env.theta_dim())
        };
        let margin = match &self.setup.theta_star {
            Some(ts) => Some(stability_margin(
                &ErrorVector::between(ts, &self.theta)?,
                &delta,
                self.setup.alpha,
            )),
            None => None,
        };
        self.theta = step_estimate(&self.theta, &delta, self.setup.alpha, self.setup.clamp);
        let outcome = step(self.env.env(), &self.x, &u_h, &u_r);
        self.x = outcome.state;
        let record = StepRecord {
            t: self.t,
            u_h,
            u_r,
            clipped: clipped_h || outcome.clipped,
            delta,
            margin,
            rule: rule.name().to_string(),
            collision: self.env.collision(&self.x),
        };
        self.t += 1;
        self.planned = None;
        self.log.states.push(self.x.clone());
        self.log.thetas.push(self.theta.clone());
        self.log.steps.push(record);
        Ok(self.log.steps.last().expect("record pushed above"))
    }

    /// Planned rollout from the current state under the current estimate.
    pub fn preview(&self) -> Vec<StateVector> {
        super::plan_trajectory(
            self.env.env(),
            &self.x,
            &self.theta,
            self.env.lookahead,
            self.env.plan_resolution,
        )
        .trajectory
        .states
    }

    /// Closes the log, filling in final error and regret when `θ*` is known.
    pub fn finish(mut self) -> Result<EpisodeLog> {
        if let Some(ts) = &self.setup.theta_star {
            self.log.final_error = Some(param_error(ts, &self.theta)?);
            self.log.regret = Some(regret(&self.env, ts, &self.theta, &self.setup.x0)?);
        }
        Ok(self.log)
    }
}

/// Runs a full episode: corrections from `human` during the first `env.window`
/// ticks, an idle human afterwards.
pub fn run_episode(
    env: &EnvHandle,
    rule: &dyn LearningRule,
    human: &mut dyn HumanActor,
    setup: EpisodeSetup,
) -> Result<EpisodeLog> {
    let mut episode = Episode::new(env.clone(), setup)?;
    let idle = env.human_box().zero();
    while !episode.is_done() {
        let t = episode.tick();
        let u_h = if t < env.window {
            let u_r = episode.robot_action();
            human.act(env, t, episode.state(), episode.theta(), &u_r, episode.alpha())
        } else {
            idle.clone()
        };
        episode.advance(rule, &u_h)?;
    }
    episode.finish()
}
