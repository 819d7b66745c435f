//! Scripted lockdown scenario against an in-process stub upstream.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{StatusCode, Uri};
use axum::Router;
use canary_core::stack::{Stack, StackConfig};
use canary_core::{OrgKey, Scheme, TokenRegistry};
use serde::Serialize;
use serde_json::json;

use crate::{spawn, ProxyConfig, ProxyError, ProxyState, CHAT_PATH};

/// Requests received by the stub, as (path and query, body).
pub type Received = Arc<Mutex<Vec<(String, Bytes)>>>;

/// Starts an upstream that records every request and answers 200 with a
/// fixed completion.
pub async fn stub_upstream() -> std::io::Result<(SocketAddr, Received)> {
    let seen: Received = Arc::default();
    async fn record(State(seen): State<Received>, uri: Uri, body: Bytes) -> (StatusCode, String) {
        seen.lock().expect("stub lock").push((uri.to_string(), body));
        let answer = json!({
            "object": "chat.completion",
            "choices": [{ "index": 0, "message": { "role": "assistant", "content": "ok" }, "finish_reason": "stop" }]
        });
        (StatusCode::OK, answer.to_string())
    }
    let app = Router::new().fallback(record).with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move { axum::serve(listener, app).await });
    Ok((addr, seen))
}

#[derive(Clone, Debug, Serialize)]
pub struct Step {
    pub label: String,
    pub canary: bool,
    pub status: u16,
    pub expected: u16,
    /// For forwarded requests: upstream saw exactly the bytes sent.
    pub byte_identical: Option<bool>,
}

impl Step {
    pub fn ok(&self) -> bool {
        self.status == self.expected && self.byte_identical != Some(false)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub steps: Vec<Step>,
    pub locked_at_end: bool,
    pub millis: u128,
}

impl Scenario {
    pub fn passed(&self) -> bool {
        self.locked_at_end && self.steps.iter().all(Step::ok)
    }
}

fn chat_body(content: &str) -> String {
    json!({ "model": "any", "messages": [
        { "role": "system", "content": "You are a helpful assistant." },
        { "role": "user", "content": content }
    ]})
    .to_string()
}

/// Three benign requests, one carrying an M5 canary, then one more benign
/// request. Expected statuses: 200, 200, 200, 403, 423.
pub async fn run_lockdown_scenario() -> Result<Scenario, ProxyError> {
    let started = std::time::Instant::now();
    let (upstream, seen) = stub_upstream().await.map_err(|source| ProxyError::Bind {
        addr: "127.0.0.1:0".parse().expect("literal address"),
        source,
    })?;

    let key = OrgKey::new(b"e2e-scenario-organization-key".to_vec())?;
    let payload = Scheme::Hmac.derive(&key, "finance/q3-board-deck.txt")?;
    let mut registry = TokenRegistry::new();
    registry.insert_token(canary_core::tokens::HmacToken(
        payload.as_slice().try_into().expect("16-byte token"),
    ));
    let cover = &canary_core::corpus::embedded()[0].text;
    let config = StackConfig::named("M5").expect("named config");
    let canary = Stack::for_scheme(Scheme::Hmac).encode(&config, &payload, Some(cover))?;

    let proxy_config = ProxyConfig::new("127.0.0.1:0".parse().expect("literal address"), format!("http://{upstream}"));
    let state = ProxyState::with_registry(proxy_config, registry)?;
    let proxy = spawn(state.clone()).await?;
    let url = format!("http://{}{CHAT_PATH}", proxy.addr);
    let client = reqwest::Client::new();

    let script = [
        ("benign 1", "What is the boiling point of water at sea level?".to_string(), false, 200),
        ("benign 2", "Summarize the plot of a heist film in two lines.".to_string(), false, 200),
        ("benign 3", "Translate 'good morning' into French.".to_string(), false, 200),
        ("canary", format!("Summarize this document:\n\n{canary}"), true, 403),
        ("benign 4", "What is the capital of Portugal?".to_string(), false, 423),
    ];
    let mut steps = Vec::new();
    for (label, content, is_canary, expected) in script {
        let body = chat_body(&content);
        let before = seen.lock().expect("stub lock").len();
        let status = match client.post(&url).body(body.clone()).send().await {
            Ok(r) => r.status().as_u16(),
            Err(_) => 0,
        };
        let received = seen.lock().expect("stub lock");
        let byte_identical = (received.len() > before).then(|| received[before].1 == body.as_bytes());
        steps.push(Step {
            label: label.to_string(),
            canary: is_canary,
            status,
            expected,
            byte_identical,
        });
    }
    proxy.handle.abort();
    Ok(Scenario {
        steps,
        locked_at_end: state.is_locked(),
        millis: started.elapsed().as_millis(),
    })
}
