use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use strol::config::Config;
use strol::envs::{run_episode, EpisodeLog, ScriptedHuman};
use strol::model::{ActionVector, ParamVector};
use strol::net::CorrectionNet;
use strol::rules::{RuleKind, RuleName};
use strol::serve::{bind, serve, ServeConfig};
use strol::trainer::train;

const DEMO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/demo2d.toml");

fn demo_net(epochs: usize) -> CorrectionNet {
    let cfg = Config::load(DEMO).unwrap();
    let mut tc = cfg.train_config();
    tc.epochs = epochs;
    train(&cfg.env_handle().unwrap(), &tc).unwrap().0
}

fn demo_config(net: CorrectionNet) -> ServeConfig {
    let cfg = Config::load(DEMO).unwrap();
    let mut sc = ServeConfig::new(cfg.env_handle().unwrap(), cfg.theta0(), cfg.alpha()).with_rule(RuleKind::strol(net));
    sc.tick_ms = 20;
    sc
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    async fn connect(cfg: ServeConfig) -> (Client, Value) {
        let listener = bind(0).await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(serve(listener, Arc::new(cfg)));
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap();
        let mut client = Client { ws };
        let hello = client.recv().await;
        (client, hello)
    }

    async fn send(&mut self, v: Value) {
        self.ws.send(Message::Text(v.to_string())).await.unwrap();
    }

    async fn recv(&mut self) -> Value {
        let frame = tokio::time::timeout(Duration::from_secs(10), self.ws.next())
            .await
            .expect("server answers")
            .unwrap()
            .unwrap();
        match frame {
            Message::Text(t) => serde_json::from_str(&t).unwrap(),
            other => panic!("unexpected frame {other:?}"),
        }
    }

    /// Skips messages until one of type `kind` arrives.
    async fn recv_type(&mut self, kind: &str) -> Value {
        loop {
            let v = self.recv().await;
            if v["type"] == kind {
                return v;
            }
        }
    }

    /// Sends `msg` and returns the snapshot it triggers.
    async fn request(&mut self, msg: Value) -> Value {
        self.send(msg).await;
        self.recv_type("snapshot").await
    }

    /// Pauses the timer and restarts the episode so later ticks are driven by `step`.
    async fn take_control(&mut self, seed: u64) {
        self.send(json!({"type": "pause", "on": true})).await;
        // timer snapshots sent before the pause may still be in flight
        while self.recv_type("snapshot").await["paused"] != true {}
        let snap = self.request(json!({"type": "reset", "seed": seed})).await;
        assert_eq!(snap["tick"], 0);
    }

    async fn log(&mut self) -> EpisodeLog {
        self.send(json!({"type": "get_log"})).await;
        let v = self.recv_type("log").await;
        serde_json::from_value(v["log"].clone()).unwrap()
    }
}

#[tokio::test]
async fn hello_describes_environment_and_rules() {
    let (mut client, hello) = Client::connect(demo_config(demo_net(1))).await;
    assert_eq!(hello["type"], "hello");
    assert!(hello["session_id"].as_str().is_some_and(|s| !s.is_empty()));
    assert_eq!(hello["env"]["name"], "demo2d");
    assert_eq!(hello["env"]["T"], 30);
    assert!(hello["env"]["dt"].as_f64().unwrap() > 0.0);
    assert!(hello["env"]["geometry"].is_object());
    assert_eq!(hello["theta_dim"], 1);
    assert_eq!(hello["rules"], json!(["gradient", "one", "strol"]));
    let first = client.recv().await;
    assert_eq!(first["type"], "snapshot");
    assert!(first["theta_star"].is_null());
}

#[tokio::test]
async fn timer_advances_unpaused_sessions() {
    let (mut client, _) = Client::connect(demo_config(demo_net(1))).await;
    let mut last = -1;
    for _ in 0..4 {
        let snap = client.recv_type("snapshot").await;
        let tick = snap["tick"].as_i64().unwrap();
        assert!(tick > last);
        last = tick;
    }
    assert!(last >= 3);
}

#[tokio::test]
async fn unknown_messages_are_reported_and_the_session_continues() {
    let (mut client, _) = Client::connect(demo_config(demo_net(1))).await;
    client.take_control(0).await;
    client.send(json!({"type": "teleport", "to": [0, 0]})).await;
    let err = client.recv_type("error").await;
    assert_eq!(err["code"], "unknown_type");
    client.ws.send(Message::Text("not json".into())).await.unwrap();
    assert_eq!(client.recv_type("error").await["code"], "bad_message");
    let snap = client.request(json!({"type": "step"})).await;
    assert_eq!(snap["tick"], 1);
}

#[tokio::test]
async fn scripted_session_replays_offline_episode_bit_exactly() {
    let net = demo_net(20);
    let sc = demo_config(net.clone());
    let env = sc.env.clone();
    let theta_star = ParamVector(vec![-0.9]);
    let (mut client, _) = Client::connect(sc.clone()).await;
    client.request(json!({"type": "set_rule", "name": "strol"})).await;
    client.request(json!({"type": "set_theta_star", "vector": theta_star})).await;
    client.take_control(42).await;

    let actions: Vec<ActionVector> = (0..env.window)
        .map(|k| ActionVector(vec![-0.08 + 0.01 * k as f64, -0.1]))
        .collect();
    for u in &actions {
        client.send(json!({"type": "correct", "vector": u})).await;
        client.request(json!({"type": "step"})).await;
    }
    let mut snap = client.request(json!({"type": "pause", "on": false})).await;
    while snap["episode_done"] != true {
        snap = client.recv_type("snapshot").await;
    }
    let served = client.log().await;

    let offline = run_episode(
        &env,
        &RuleKind::strol(net),
        &mut ScriptedHuman { actions },
        sc.setup(42, Some(theta_star)),
    )
    .unwrap();
    assert_eq!(served.steps.len(), env.horizon);
    assert_eq!(served, offline);
}

#[tokio::test]
async fn corrections_are_clipped_and_latest_wins() {
    let (mut client, hello) = Client::connect(demo_config(demo_net(1))).await;
    let bound = hello["env"]["human_box"]["bound"].as_f64().unwrap();
    client.take_control(0).await;
    client.send(json!({"type": "correct", "vector": [0.01, 0.01]})).await;
    client.send(json!({"type": "correct", "vector": [10.0, -0.02]})).await;
    let snap = client.request(json!({"type": "step"})).await;
    assert_eq!(snap["u_h"], json!([bound, -0.02]));
    let snap = client.request(json!({"type": "step"})).await;
    assert_eq!(snap["u_h"], json!([0.0, 0.0]));
    let log = client.log().await;
    assert_eq!(log.steps[0].u_h.values(), &[bound, -0.02]);
    assert!(log.steps[0].clipped);
}

#[tokio::test]
async fn rule_switch_applies_next_tick_without_resetting_theta() {
    let (mut client, _) = Client::connect(demo_config(demo_net(20))).await;
    client.take_control(0).await;
    let push = json!({"type": "correct", "vector": [-0.1, -0.1]});
    let mut thetas = Vec::new();
    for rule in ["gradient", "strol", "gradient"] {
        let snap = client.request(json!({"type": "set_rule", "name": rule})).await;
        assert_eq!(snap["rule"], rule);
        if let Some(prev) = thetas.last() {
            assert_eq!(&snap["theta"], prev, "switching must not touch the estimate");
        }
        client.send(push.clone()).await;
        let snap = client.request(json!({"type": "step"})).await;
        assert_eq!(snap["rule"], rule);
        thetas.push(snap["theta"].clone());
    }
    let log = client.log().await;
    let rules: Vec<&str> = log.steps.iter().map(|s| s.rule.as_str()).collect();
    assert_eq!(rules, ["gradient", "strol", "gradient"]);
    for w in log.thetas.windows(2) {
        assert!(w[1].values()[0] < w[0].values()[0]);
    }
}

#[tokio::test]
async fn pushing_away_from_the_laptop_moves_toward_the_avoid_mode() {
    let (mut client, _) = Client::connect(demo_config(demo_net(100))).await;
    client.request(json!({"type": "set_rule", "name": RuleName::Strol.as_str()})).await;
    client.take_control(0).await;
    // the robot starts at (-0.6, -0.6); pushing further out means "keep away"
    let mut theta = 0.0;
    for _ in 0..10 {
        client.send(json!({"type": "correct", "vector": [-0.1, -0.1]})).await;
        let snap = client.request(json!({"type": "step"})).await;
        let next = snap["theta"][0].as_f64().unwrap();
        assert!(next < theta, "estimate should fall toward -1, got {next}");
        theta = next;
    }
}
