//! Experiment configuration files (TOML).
//!
//! Every section is optional except `[env]`; unset values fall back to the
//! per-environment defaults in [`EnvDefaults`]. Relative paths are resolved
//! against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::bench::SweepSpec;
use crate::envs::{Demo2d, Demo2dScene, EnvHandle, EnvName, Environment, Highway, HighwayScene, Robot, RobotScene};
use crate::error::{Error, Result};
use crate::humansim::{Prior, DEFAULT_RESOLUTION};
use crate::lyapunov::{BasinSpec, DEFAULT_RHO, DEFAULT_STEPS};
use crate::model::{ParamBox, ParamVector, StateVector};
use crate::net::{CorrectionNet, DEFAULT_HIDDEN};
use crate::rules::{RuleKind, RuleName, DEFAULT_MOF_BETA};
use crate::trainer::{EvalSpec, TrainConfig};

/// Per-environment defaults used when a config leaves a value unset.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvDefaults {
    pub horizon: usize,
    pub window: usize,
    pub alpha: f64,
    /// Training noise level.
    pub sigma: f64,
    pub epochs: usize,
    pub episodes: usize,
    pub prior: Prior,
}

impl EnvDefaults {
    pub fn for_env(name: EnvName) -> Self {
        match name {
            EnvName::Robot => Self {
                horizon: 30,
                window: 5,
                alpha: 2.0,
                sigma: 0.25,
                epochs: 500,
                episodes: 100,
                prior: Prior::modes(&[&[-1.0, 1.0], &[1.0, -1.0]], 0.1),
            },
            EnvName::Highway => Self {
                horizon: 60,
                window: 5,
                alpha: 0.5,
                sigma: 0.1,
                epochs: 1000,
                episodes: 250,
                prior: Prior::modes(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, -1.0]], 0.1),
            },
            EnvName::Demo2d => Self {
                horizon: 30,
                window: 5,
                alpha: 0.25,
                sigma: 0.0,
                epochs: 100,
                episodes: 100,
                prior: Prior::modes(&[&[-1.0], &[1.0]], 0.01),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: EnvName,
    pub horizon: Option<usize>,
    pub window: Option<usize>,
    pub lookahead: Option<usize>,
    pub plan_resolution: Option<usize>,
    /// Scene overrides; keys depend on the environment.
    pub scene: Option<toml::Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    pub alpha: Option<f64>,
    /// Clamp estimates into `[-1, 1]^d` after every update.
    pub clamp: Option<bool>,
    pub mof_beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanSection {
    pub sigma: Option<f64>,
    pub bias: Option<f64>,
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub rule: Option<RuleName>,
    pub epochs: Option<usize>,
    pub samples: Option<usize>,
    pub minibatch: Option<usize>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub step_size: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub rule: Option<RuleName>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    /// Prior id the true weights are drawn from (`train` by default).
    pub prior: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub rules: Vec<RuleName>,
    pub noise: Option<Vec<f64>>,
    #[serde(default)]
    pub bias: Option<Vec<f64>>,
    pub priors: Option<Vec<String>>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinSection {
    pub rule: Option<RuleName>,
    pub resolution: Option<usize>,
    pub steps: Option<usize>,
    pub rho: Option<f64>,
    pub x_start: Option<Vec<f64>>,
    pub theta_start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub tick_ms: Option<u64>,
    pub rule: Option<RuleName>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: EnvSection,
    #[serde(default)]
    learning: LearningSection,
    #[serde(default)]
    human: HumanSection,
    /// Training prior; also the robot's belief for `θ⁰` and MOF modes.
    prior: Option<Prior>,
    /// Extra named priors for evaluation and sweeps.
    #[serde(default)]
    priors: BTreeMap<String, Prior>,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    eval: EvalSection,
    bench: Option<BenchSection>,
    #[serde(default)]
    basin: BasinSection,
    #[serde(default)]
    serve: ServeSection,
    /// Weight files per rule.
    #[serde(default)]
    weights: BTreeMap<RuleName, PathBuf>,
}

/// A parsed configuration file.
#[derive(Debug, Clone)]
pub struct Config {
    raw: RawConfig,
    defaults: EnvDefaults,
    base_dir: PathBuf,
    hash: String,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let defaults = EnvDefaults::for_env(raw.env.name);
        let hash = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let cfg = Self {
            raw,
            defaults,
            base_dir: base_dir.into(),
            hash,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let env = self.env_handle()?;
        let d = env.theta_dim();
        self.train_prior()
            .validate(d)
            .map_err(|e| Error::Config(format!("prior: {e}")))?;
        for (id, p) in &self.raw.priors {
            p.validate(d)
                .map_err(|e| Error::Config(format!("priors.{id}: {e}")))?;
        }
        if !(self.alpha() > 0.0) {
            return Err(Error::Config("learning.alpha must be positive".into()));
        }
        if self.sigma() < 0.0 {
            return Err(Error::Config("human.sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 of the config text, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn env_name(&self) -> EnvName {
        self.raw.env.name
    }

    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn env_handle(&self) -> Result<EnvHandle> {
        let e = &self.raw.env;
        let scene = |what: &str| -> Result<Option<toml::Value>> {
            match &e.scene {
                Some(v) if !v.is_table() => Err(Error::Config(format!("env.scene for {what} must be a table"))),
                other => Ok(other.clone()),
            }
        };
        let parse_err = |err: toml::de::Error| Error::Config(format!("env.scene: {err}"));
        let env: Arc<dyn Environment> = match e.name {
            EnvName::Robot => Arc::new(Robot::new(match scene("robot")? {
                Some(v) => v.try_into::<RobotScene>().map_err(parse_err)?,
                None => RobotScene::default(),
            })),
            EnvName::Highway => Arc::new(Highway::new(match scene("highway")? {
                Some(v) => v.try_into::<HighwayScene>().map_err(parse_err)?,
                None => HighwayScene::default(),
            })),
            EnvName::Demo2d => Arc::new(Demo2d::new(match scene("demo2d")? {
                Some(v) => v.try_into::<Demo2dScene>().map_err(parse_err)?,
                None => Demo2dScene::default(),
            })),
        };
        let horizon = e.horizon.unwrap_or(self.defaults.horizon);
        if horizon == 0 {
            return Err(Error::Config("env.horizon must be at least 1".into()));
        }
        let lookahead = e.lookahead.unwrap_or(5);
        let resolution = e.plan_resolution.unwrap_or(5);
        if lookahead == 0 || resolution == 0 {
            return Err(Error::Config("env.lookahead and env.plan_resolution must be at least 1".into()));
        }
        Ok(EnvHandle::new(env, horizon, e.window.unwrap_or(self.defaults.window))
            .with_planner(lookahead, resolution))
    }

    pub fn alpha(&self) -> f64 {
        self.raw.learning.alpha.unwrap_or(self.defaults.alpha)
    }

    pub fn clamp(&self) -> Option<ParamBox> {
        self.raw.learning.clamp.unwrap_or(true).then(ParamBox::default)
    }

    pub fn mof_beta(&self) -> f64 {
        self.raw.learning.mof_beta.unwrap_or(DEFAULT_MOF_BETA)
    }

    pub fn sigma(&self) -> f64 {
        self.raw.human.sigma.unwrap_or(self.defaults.sigma)
    }

    pub fn bias(&self) -> f64 {
        self.raw.human.bias.unwrap_or(0.0)
    }

    pub fn resolution(&self) -> usize {
        self.raw.human.resolution.unwrap_or(DEFAULT_RESOLUTION)
    }

    pub fn train_prior(&self) -> Prior {
        self.raw.prior.clone().unwrap_or_else(|| self.defaults.prior.clone())
    }

    /// `train` is the training prior, `uniform` the full parameter box;
    /// anything else must be declared under `[priors]`.
    pub fn prior(&self, id: &str) -> Result<Prior> {
        if let Some(p) = self.raw.priors.get(id) {
            return Ok(p.clone());
        }
        match id {
            "train" => Ok(self.train_prior()),
            "uniform" => Ok(Prior::uniform(self.env_handle()?.theta_dim(), ParamBox::default())),
            other => Err(Error::Config(format!("unknown prior id `{other}`"))),
        }
    }

    /// The robot's initial estimate: the mean of the training prior.
    pub fn theta0(&self) -> ParamVector {
        self.train_prior().mean()
    }

    pub fn train_rule(&self) -> RuleName {
        self.raw.train.rule.unwrap_or(RuleName::Strol)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.raw.train;
        let mut cfg = TrainConfig::new(self.train_rule(), self.train_prior(), self.alpha());
        cfg.epochs = t.epochs.unwrap_or(self.defaults.epochs);
        cfg.samples = t.samples.unwrap_or(512);
        cfg.minibatch = t.minibatch.unwrap_or(128.min(cfg.samples));
        cfg.sigma = self.sigma();
        cfg.bias = self.bias();
        cfg.seed = t.seed.unwrap_or(0);
        cfg.lambda = t.lambda.unwrap_or(1.0);
        cfg.hidden = t.hidden.clone().unwrap_or_else(|| DEFAULT_HIDDEN.to_vec());
        cfg.step_size = t.step_size.unwrap_or(1e-3);
        cfg.resolution = self.resolution();
        cfg
    }

    pub fn eval_rule(&self) -> RuleName {
        self.raw.eval.rule.unwrap_or(RuleName::Strol)
    }

    pub fn eval_spec(&self) -> Result<EvalSpec> {
        let e = &self.raw.eval;
        Ok(EvalSpec {
            prior: self.prior(e.prior.as_deref().unwrap_or("train"))?,
            theta0: self.theta0(),
            sigma: self.sigma(),
            bias: self.bias(),
            alpha: self.alpha(),
            episodes: e.episodes.unwrap_or(self.defaults.episodes),
            seed: e.seed.unwrap_or(0),
            resolution: self.resolution(),
            clamp: self.clamp(),
        })
    }

    /// Weight file configured for `rule`, resolved against the config directory.
    pub fn weights(&self, rule: RuleName) -> Option<PathBuf> {
        self.raw.weights.get(&rule).map(|p| self.resolve(p))
    }

    /// Builds a rule, loading its network from `weights` or the configured file.
    pub fn rule(&self, name: RuleName, weights: Option<&Path>) -> Result<RuleKind> {
        Ok(match name {
            RuleName::Gradient => RuleKind::Gradient,
            RuleName::One => RuleKind::One,
            RuleName::Mof => RuleKind::Mof {
                beta: self.mof_beta(),
                modes: self.train_prior().mode_means(),
                resolution: self.resolution(),
            },
            RuleName::E2e | RuleName::Strol => {
                let path = weights
                    .map(Path::to_path_buf)
                    .or_else(|| self.weights(name))
                    .ok_or(Error::NetMissing(name.as_str()))?;
                let net = CorrectionNet::load(path)?;
                if name == RuleName::Strol {
                    RuleKind::strol(net)
                } else {
                    RuleKind::e2e(net)
                }
            }
        })
    }

    pub fn has_bench(&self) -> bool {
        self.raw.bench.is_some()
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let b = self
            .raw
            .bench
            .as_ref()
            .ok_or_else(|| Error::Config("missing [bench] section".into()))?;
        let priors = b
            .priors
            .clone()
            .unwrap_or_else(|| vec!["train".into()])
            .into_iter()
            .map(|id| Ok((id.clone(), self.prior(&id)?)))
            .collect::<Result<Vec<_>>>()?;
        let weights = [RuleName::E2e, RuleName::Strol]
            .into_iter()
            .filter_map(|r| self.weights(r).map(|p| (r, p)))
            .collect();
        let spec = SweepSpec {
            rules: b.rules.clone(),
            noise: b.noise.clone().unwrap_or_else(|| vec![self.sigma()]),
            bias: b.bias.clone().unwrap_or_else(|| vec![0.0]),
            priors,
            episodes: b.episodes.unwrap_or(self.defaults.episodes),
            seed: b.seed.unwrap_or(0),
            alpha: self.alpha(),
            theta0: self.theta0(),
            mof_modes: self.train_prior().mode_means(),
            mof_beta: self.mof_beta(),
            resolution: self.resolution(),
            clamp: self.clamp(),
            weights,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn basin_rule(&self) -> RuleName {
        self.raw.basin.rule.unwrap_or(RuleName::Strol)
    }

    pub fn basin_spec(&self) -> Result<BasinSpec> {
        let b = &self.raw.basin;
        let env = self.env_handle()?;
        let x_start = match &b.x_start {
            Some(x) => StateVector(x.clone()),
            None => {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                env.start_state(&mut rng)
            }
        };
        let theta_start = b.theta_start.clone().map(ParamVector).unwrap_or_else(|| self.theta0());
        let mut spec = BasinSpec::new(x_start, theta_start, self.train_prior().mode_means(), self.alpha());
        spec.resolution = b.resolution.unwrap_or(41);
        spec.steps = b.steps.unwrap_or(DEFAULT_STEPS);
        spec.rho = b.rho.unwrap_or(DEFAULT_RHO);
        spec.clamp = self.clamp();
        if spec.resolution == 0 {
            return Err(Error::Config("basin.resolution must be at least 1".into()));
        }
        Ok(spec)
    }

    pub fn serve_port(&self) -> u16 {
        self.raw.serve.port.unwrap_or(8765)
    }

    pub fn tick_ms(&self) -> u64 {
        self.raw.serve.tick_ms.unwrap_or(100)
    }

    pub fn serve_rule(&self) -> Option<RuleName> {
        self.raw.serve.rule
    }
}
