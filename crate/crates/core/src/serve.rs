//! WebSocket host for interactive correction sessions.
//!
//! Each connection gets its own [`Session`]: one simulated episode advanced
//! one tick per period. Messages are JSON objects tagged by `type`.
//!
//! Server to client: `hello`, `snapshot`, `log`, `error`.
//! Client to server: `correct {vector}`, `set_rule {name}`,
//! `set_theta_star {vector | null}`, `reset {seed}`, `pause {on}`, plus
//! `step {}` (advance one tick, also while paused) and `get_log {}`.
//!
//! A correction is applied on the next tick only; a newer correction replaces
//! a pending one.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

use crate::envs::{EnvHandle, Episode, EpisodeLog, EpisodeSetup};
use crate::error::{Error, Result};
use crate::model::{ActionVector, ParamBox, ParamVector};
use crate::rules::{LearningRule, RuleKind, RuleName};
use crate::trainer::derive_seed;

/// Smallest allowed tick period.
pub const MIN_TICK_MS: u64 = 20;

/// Settings shared by every session of a server.
#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub env: EnvHandle,
    /// Rules clients may switch between.
    pub rules: BTreeMap<RuleName, Arc<RuleKind>>,
    pub default_rule: RuleName,
    pub theta0: ParamVector,
    pub alpha: f64,
    pub clamp: Option<ParamBox>,
    pub tick_ms: u64,
    /// Seed of the first episode of every session.
    pub seed: u64,
}

impl ServeConfig {
    /// Starts with the gradient and one rules; add others with [`ServeConfig::with_rule`].
    pub fn new(env: EnvHandle, theta0: ParamVector, alpha: f64) -> Self {
        let rules = [(RuleName::Gradient, Arc::new(RuleKind::Gradient)), (RuleName::One, Arc::new(RuleKind::One))]
            .into_iter()
            .collect();
        Self {
            env,
            rules,
            default_rule: RuleName::Gradient,
            theta0,
            alpha,
            clamp: Some(ParamBox::default()),
            tick_ms: 100,
            seed: 0,
        }
    }

    pub fn with_rule(mut self, rule: RuleKind) -> Self {
        self.rules.insert(rule.kind(), Arc::new(rule));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tick_ms < MIN_TICK_MS {
            return Err(Error::Config(format!("tick period must be at least {MIN_TICK_MS} ms")));
        }
        if !self.rules.contains_key(&self.default_rule) {
            return Err(Error::Config(format!("default rule `{}` is not loaded", self.default_rule)));
        }
        Ok(())
    }

    /// Episode a session starts after `reset {seed}`.
    pub fn setup(&self, seed: u64, theta_star: Option<ParamVector>) -> EpisodeSetup {
        session_setup(&self.env, &self.theta0, self.alpha, self.clamp, seed, theta_star)
    }
}

/// Initial conditions of a served episode: the start state is drawn from `seed`.
pub fn session_setup(
    env: &EnvHandle,
    theta0: &ParamVector,
    alpha: f64,
    clamp: Option<ParamBox>,
    seed: u64,
    theta_star: Option<ParamVector>,
) -> EpisodeSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EpisodeSetup {
        x0: env.start_state(&mut rng),
        theta0: theta0.clone(),
        theta_star,
        alpha,
        clamp,
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ClientMessage {
    Correct { vector: Vec<f64> },
    SetRule { name: String },
    SetThetaStar { vector: Option<Vec<f64>> },
    Reset { seed: Option<u64> },
    Pause { on: bool },
    Step {},
    GetLog {},
}

const CLIENT_TYPES: [&str; 7] = ["correct", "set_rule", "set_theta_star", "reset", "pause", "step", "get_log"];

fn error_message(code: &str, message: impl Into<String>) -> Value {
    json!({"type": "error", "code": code, "message": message.into()})
}

/// One client's simulation. Independent of the network so it can be driven directly.
#[derive(Debug)]
pub struct Session {
    id: String,
    cfg: Arc<ServeConfig>,
    episode: Episode,
    rule: RuleName,
    pending: Option<ActionVector>,
    paused: bool,
}

impl Session {
    pub fn new(cfg: Arc<ServeConfig>, id: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        let episode = Episode::new(cfg.env.clone(), cfg.setup(cfg.seed, None))?;
        Ok(Self {
            id: id.into(),
            rule: cfg.default_rule,
            cfg,
            episode,
            pending: None,
            paused: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rule(&self) -> RuleName {
        self.rule
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    /// Whether the periodic timer should advance the episode.
    pub fn is_running(&self) -> bool {
        !self.paused && !self.episode.is_done()
    }

    pub fn hello(&self) -> Value {
        let env = &self.cfg.env;
        json!({
            "type": "hello",
            "session_id": self.id,
            "env": {
                "name": env.name().to_string(),
                "geometry": env.geometry(),
                "dt": env.dt(),
                "T": env.horizon,
                "window": env.window,
                "human_box": env.human_box(),
                "robot_box": env.robot_box(),
                "state_dim": env.state_dim(),
            },
            "rules": self.cfg.rules.keys().map(|r| r.as_str()).collect::<Vec<_>>(),
            "rule": self.rule.as_str(),
            "theta_dim": env.theta_dim(),
            "tick_ms": self.cfg.tick_ms,
        })
    }

    pub fn snapshot(&self) -> Value {
        let last = self.episode.log().steps.last();
        json!({
            "type": "snapshot",
            "tick": self.episode.tick(),
            "state": self.episode.state(),
            "theta": self.episode.theta(),
            "theta_star": self.episode.theta_star(),
            "margin": last.and_then(|s| s.margin),
            "u_h": last.map(|s| &s.u_h),
            "plan": self.episode.preview(),
            "episode_done": self.episode.is_done(),
            "rule": self.rule.as_str(),
            "paused": self.paused,
        })
    }

    /// The episode so far; once it is over, with final error and regret filled in.
    pub fn log(&self) -> Result<EpisodeLog> {
        if self.episode.is_done() {
            self.episode.clone().finish()
        } else {
            Ok(self.episode.log().clone())
        }
    }

    /// Advances one tick using the pending correction (or none). No-op once the episode is over.
    pub fn tick(&mut self) -> Result<bool> {
        if self.episode.is_done() {
            return Ok(false);
        }
        let u_h = self
            .pending
            .take()
            .unwrap_or_else(|| self.cfg.env.human_box().zero());
        let rule: &dyn LearningRule = self.cfg.rules[&self.rule].as_ref();
        self.episode.advance(rule, &u_h)?;
        Ok(true)
    }

    /// Handles one text frame and returns the replies.
    pub fn handle(&mut self, text: &str) -> Vec<Value> {
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![error_message("bad_message", e.to_string())],
        };
        let Some(kind) = value.get("type").and_then(Value::as_str) else {
            return vec![error_message("bad_message", "message needs a string `type` field")];
        };
        if !CLIENT_TYPES.contains(&kind) {
            return vec![error_message("unknown_type", format!("unknown message type `{kind}`"))];
        }
        let msg: ClientMessage = match serde_json::from_value(value) {
            Ok(m) => m,
            Err(e) => return vec![error_message("bad_message", e.to_string())],
        };
        match self.apply(msg) {
            Ok(replies) => replies,
            Err(e) => vec![error_message("invalid", e.to_string())],
        }
    }

    fn apply(&mut self, msg: ClientMessage) -> Result<Vec<Value>> {
        let env = &self.cfg.env;
        Ok(match msg {
            ClientMessage::Correct { vector } => {
                crate::error::check_dim("correction", env.human_box().dim, vector.len())?;
                // clipped (and flagged in the log) when the tick applies it
                self.pending = Some(ActionVector(vector));
                vec![]
            }
            ClientMessage::SetRule { name } => {
                let rule: RuleName = name.parse()?;
                if !self.cfg.rules.contains_key(&rule) {
                    return Ok(vec![error_message("unknown_rule", format!("rule `{rule}` is not loaded"))]);
                }
                self.rule = rule;
                vec![self.snapshot()]
            }
            ClientMessage::SetThetaStar { vector } => {
                let theta_star = vector.map(|v| {
                    let mut ts = ParamVector(v);
                    ParamBox::default().clamp(&mut ts);
                    ts
                });
                self.episode.set_theta_star(theta_star)?;
                vec![self.snapshot()]
            }
            ClientMessage::Reset { seed } => {
                let theta_star = self.episode.theta_star().cloned();
                let setup = self.cfg.setup(seed.unwrap_or(self.cfg.seed), theta_star);
                self.episode = Episode::new(self.cfg.env.clone(), setup)?;
                self.pending = None;
                vec![self.snapshot()]
            }
            ClientMessage::Pause { on } => {
                self.paused = on;
                vec![self.snapshot()]
            }
            ClientMessage::Step {} => {
                self.tick()?;
                vec![self.snapshot()]
            }
            ClientMessage::GetLog {} => vec![json!({"type": "log", "log": self.log()?})],
        })
    }
}

/// Binds the listening socket on localhost. A busy port is reported as [`Error::PortBusy`].
pub async fn bind(port: u16) -> Result<TcpListener> {
    TcpListener::bind(("127.0.0.1", port)).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            Error::PortBusy { port, source }
        } else {
            Error::io(format!("127.0.0.1:{port}"), source)
        }
    })
}

/// Accepts connections forever, one session per connection.
pub async fn serve(listener: TcpListener, cfg: Arc<ServeConfig>) -> Result<()> {
    cfg.validate()?;
    let mut count = 0u64;
    loop {
        let (stream, peer) = listener
            .accept()
            .await
            .map_err(|e| Error::io("accept", e))?;
        count += 1;
        let id = format!("{:016x}", derive_seed(cfg.seed, &[count]));
        let cfg = Arc::clone(&cfg);
        tokio::spawn(async move {
            if let Err(e) = run_session(stream, peer, cfg, id).await {
                log::warn!("session with {peer} ended: {e}");
            }
        });
    }
}

async fn run_session(
    stream: TcpStream,
    peer: SocketAddr,
    cfg: Arc<ServeConfig>,
    id: String,
) -> std::result::Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let mut session = Session::new(Arc::clone(&cfg), id)?;
    log::info!("session {} opened for {peer}", session.id());
    tx.send(Message::Text(session.hello().to_string())).await?;
    tx.send(Message::Text(session.snapshot().to_string())).await?;
    let mut timer = tokio::time::interval(Duration::from_millis(cfg.tick_ms));
    timer.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    timer.tick().await;
    loop {
        tokio::select! {
            frame = rx.next() => {
                let replies = match frame {
                    None | Some(Ok(Message::Close(_))) => break,
                    Some(Err(e)) => return Err(e.into()),
                    Some(Ok(Message::Text(text))) => session.handle(&text),
                    Some(Ok(Message::Binary(_))) => vec![error_message("bad_message", "expected a text frame")],
                    Some(Ok(_)) => vec![],
                };
                for reply in replies {
                    tx.send(Message::Text(reply.to_string())).await?;
                }
            }
            _ = timer.tick(), if session.is_running() => {
                let reply = match session.tick() {
                    Ok(_) => session.snapshot(),
                    Err(e) => {
                        session.paused = true;
                        error_message("tick_failed", e.to_string())
                    }
                };
                tx.send(Message::Text(reply.to_string())).await?;
            }
        }
    }
    log::info!("session {} closed", session.id());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{run_episode, ScriptedHuman};

    fn demo_session() -> Session {
        let cfg = ServeConfig::new(EnvHandle::demo2d(), ParamVector(vec![0.0]), 0.25);
        Session::new(Arc::new(cfg), "test").unwrap()
    }

    fn send(s: &mut Session, v: Value) -> Vec<Value> {
        s.handle(&v.to_string())
    }

    #[test]
    fn unknown_and_malformed_messages_get_error_codes() {
        let mut s = demo_session();
        assert_eq!(send(&mut s, json!({"type": "dance"}))[0]["code"], "unknown_type");
        assert_eq!(s.handle("{not json")[0]["code"], "bad_message");
        assert_eq!(send(&mut s, json!({"type": "correct"}))[0]["code"], "bad_message");
        assert_eq!(send(&mut s, json!({"type": "correct", "vector": [1.0]}))[0]["code"], "invalid");
        assert_eq!(send(&mut s, json!({"type": "set_rule", "name": "strol"}))[0]["code"], "unknown_rule");
        assert_eq!(send(&mut s, json!({"type": "step"}))[0]["tick"], 1);
    }

    #[test]
    fn correction_is_clipped_and_held_one_tick() {
        let mut s = demo_session();
        send(&mut s, json!({"type": "correct", "vector": [0.01, 0.0]}));
        send(&mut s, json!({"type": "correct", "vector": [-5.0, 5.0]}));
        let bound = s.cfg.env.human_box().bound;
        let snap = &send(&mut s, json!({"type": "step"}))[0];
        assert_eq!(snap["u_h"], json!([-bound, bound]));
        let snap = &send(&mut s, json!({"type": "step"}))[0];
        assert_eq!(snap["u_h"], json!([0.0, 0.0]));
    }

    #[test]
    fn rule_switch_keeps_theta() {
        let mut s = demo_session();
        send(&mut s, json!({"type": "correct", "vector": [-0.1, -0.1]}));
        send(&mut s, json!({"type": "step"}));
        let before = s.episode().theta().clone();
        assert_ne!(before.values(), &[0.0]);
        let snap = &send(&mut s, json!({"type": "set_rule", "name": "one"}))[0];
        assert_eq!(snap["rule"], "one");
        assert_eq!(snap["theta"], json!(before));
        send(&mut s, json!({"type": "step"}));
        assert_eq!(s.episode().log().steps.last().unwrap().rule, "one");
    }

    #[test]
    fn scripted_session_matches_offline_episode() {
        let mut s = demo_session();
        send(&mut s, json!({"type": "set_theta_star", "vector": [-1.0]}));
        send(&mut s, json!({"type": "reset", "seed": 7}));
        let actions: Vec<ActionVector> = (0..5).map(|k| ActionVector(vec![-0.1, -0.02 * k as f64])).collect();
        for u in &actions {
            send(&mut s, json!({"type": "correct", "vector": u}));
            send(&mut s, json!({"type": "step"}));
        }
        while s.is_running() {
            s.tick().unwrap();
        }
        let env = s.cfg.env.clone();
        let setup = s.cfg.setup(7, Some(ParamVector(vec![-1.0])));
        let offline = run_episode(&env, &RuleKind::Gradient, &mut ScriptedHuman { actions }, setup).unwrap();
        assert_eq!(s.log().unwrap(), offline);
    }
}
