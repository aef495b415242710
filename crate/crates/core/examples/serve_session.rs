//! Starts the session server on a free port and drives it with a scripted
//! WebSocket client: a few corrections, a rule switch, then the episode log.
//!
//! Run: `cargo run --release --example serve_session`

use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use strol::envs::EnvHandle;
use strol::model::ParamVector;
use strol::serve::{bind, serve, ServeConfig};
use tokio_tungstenite::tungstenite::Message;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ServeConfig::new(EnvHandle::demo2d(), ParamVector(vec![0.0]), 0.25);
    let listener = bind(0).await?;
    let addr = listener.local_addr()?;
    tokio::spawn(serve(listener, Arc::new(cfg)));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await?;
    let mut next = async || -> Value {
        loop {
            if let Some(Ok(Message::Text(t))) = ws.next().await {
                return serde_json::from_str(&t).expect("server sends JSON");
            }
        }
    };
    let hello = next().await;
    println!("hello: env {} rules {}", hello["env"]["name"], hello["rules"]);
    drop(next);

    let script = [
        json!({"type": "pause", "on": true}),
        json!({"type": "set_theta_star", "vector": [-1.0]}),
        json!({"type": "reset", "seed": 1}),
        json!({"type": "correct", "vector": [-0.1, -0.1]}),
        json!({"type": "step"}),
        json!({"type": "set_rule", "name": "one"}),
        json!({"type": "correct", "vector": [-0.1, -0.05]}),
        json!({"type": "step"}),
        json!({"type": "get_log"}),
    ];
    for msg in script {
        ws.send(Message::Text(msg.to_string())).await?;
    }
    while let Some(frame) = ws.next().await {
        let Message::Text(text) = frame? else { continue };
        let v: Value = serde_json::from_str(&text)?;
        match v["type"].as_str() {
            Some("snapshot") => println!("tick {} rule {} theta {} margin {}", v["tick"], v["rule"], v["theta"], v["margin"]),
            Some("log") => {
                println!("log has {} steps", v["log"]["steps"].as_array().map_or(0, Vec::len));
                break;
            }
            _ => println!("{v}"),
        }
    }
    Ok(())
}
