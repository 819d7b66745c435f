use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{StatusCode, Uri};
use axum::Router;
use canary_core::stack::{Stack, StackConfig};
use canary_core::tokens::derive_hmac_token;
use canary_core::{OrgKey, Scheme, TokenRegistry};
use canary_proxy::{spawn, ProxyConfig, ProxyState, ResponseMode, RunningProxy};
use serde_json::{json, Value};

type Seen = Arc<Mutex<Vec<(String, Bytes)>>>;

/// Records every request and answers with a fixed completion.
async fn stub_upstream() -> (SocketAddr, Seen) {
    let seen: Seen = Arc::default();
    async fn record(State(seen): State<Seen>, uri: Uri, body: Bytes) -> (StatusCode, String) {
        seen.lock().unwrap().push((uri.to_string(), body));
        (
            StatusCode::OK,
            json!({ "choices": [{ "message": { "role": "assistant", "content": "ok" } }] }).to_string(),
        )
    }
    let app = Router::new().fallback(record).with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await });
    (addr, seen)
}

struct Fixture {
    proxy: RunningProxy,
    seen: Seen,
    canary: String,
    client: reqwest::Client,
}

impl Fixture {
    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.proxy.addr)
    }

    async fn chat(&self, content: &str) -> reqwest::Response {
        let body = json!({ "model": "m", "messages": [{ "role": "user", "content": content }] });
        self.client
            .post(self.url("/v1/chat/completions"))
            .body(body.to_string())
            .header("content-type", "application/json")
            .send()
            .await
            .unwrap()
    }

    async fn reset(&self, token: &str) -> StatusCode {
        self.client
            .post(self.url("/admin/reset"))
            .header("x-admin-token", token)
            .send()
            .await
            .unwrap()
            .status()
    }
}

async fn fixture(mode: ResponseMode, audit: Option<std::path::PathBuf>) -> Fixture {
    let (upstream, seen) = stub_upstream().await;
    let key = OrgKey::new(b"proxy-test-organization-key".to_vec()).unwrap();
    let token = derive_hmac_token(&key, "q3-forecast.xlsx").unwrap();
    let mut registry = TokenRegistry::new();
    registry.insert_token(token);
    let cover = &canary_core::corpus::embedded()[4].text;
    let canary = Stack::for_scheme(Scheme::Hmac)
        .encode(&StackConfig::named("M5").unwrap(), token.as_bytes(), Some(cover))
        .unwrap();

    let mut config = ProxyConfig::new("127.0.0.1:0".parse().unwrap(), format!("http://{upstream}"));
    config.response_mode = mode;
    config.admin_token = Some("let-me-in".into());
    config.audit_log = audit;
    let state = ProxyState::with_registry(config, registry).unwrap();
    Fixture {
        proxy: spawn(state).await.unwrap(),
        seen,
        canary,
        client: reqwest::Client::new(),
    }
}

#[tokio::test]
async fn clean_request_is_forwarded_byte_identical() {
    let f = fixture(ResponseMode::Block, None).await;
    let raw = r#"{"model":"m",  "messages":[{"role":"user","content":"hello there"}]}"#;
    let resp = f
        .client
        .post(f.url("/v1/chat/completions?x=1"))
        .body(raw)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let seen = f.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].0, "/v1/chat/completions?x=1");
    assert_eq!(&seen[0].1[..], raw.as_bytes());
}

#[tokio::test]
async fn canary_blocks_then_locks_until_reset() {
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let f = fixture(ResponseMode::Block, Some(audit.clone())).await;

    let resp = f.chat(&f.canary).await;
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);
    let body: Value = serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap();
    assert_eq!(body["blocked"], true);
    assert_eq!(body["layer"], "WS");
    assert_eq!(body["identity_digest"].as_str().unwrap().len(), 32);
    assert_eq!(body["choices"][0]["message"]["content"], "");
    assert!(f.proxy.state.is_locked());

    // locked: even clean traffic is refused, on every path
    assert_eq!(f.chat("harmless").await.status(), StatusCode::LOCKED);
    let other = f.client.get(f.url("/v1/models")).send().await.unwrap();
    assert_eq!(other.status(), StatusCode::LOCKED);
    assert!(f.seen.lock().unwrap().is_empty());

    assert_eq!(f.reset("wrong").await, StatusCode::UNAUTHORIZED);
    assert!(f.proxy.state.is_locked());
    assert_eq!(f.reset("let-me-in").await, StatusCode::OK);
    assert!(!f.proxy.state.is_locked());
    assert_eq!(f.proxy.state.lockdown().epoch, 1);
    // a second reset is a no-op
    assert_eq!(f.reset("let-me-in").await, StatusCode::OK);
    assert_eq!(f.proxy.state.lockdown().epoch, 1);

    assert_eq!(f.chat("harmless").await.status(), StatusCode::OK);

    let log = std::fs::read_to_string(&audit).unwrap();
    let events: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let names: Vec<&str> = events.iter().map(|e| e["event"].as_str().unwrap()).collect();
    assert_eq!(names[0], "blocked");
    assert!(names.contains(&"rejected_locked"));
    assert!(names.contains(&"reset_denied"));
    assert!(names.contains(&"reset"));
    assert!(names.contains(&"reset_noop"));
    assert_eq!(events[0]["matched"], true);
    assert_eq!(events[0]["layer"], "WS");
}

#[tokio::test]
async fn flag_mode_forwards_and_audits() {
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let f = fixture(ResponseMode::Flag, Some(audit.clone())).await;
    let resp = f.chat(&f.canary).await;
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(!f.proxy.state.is_locked());
    assert_eq!(f.seen.lock().unwrap().len(), 1);
    let log = std::fs::read_to_string(&audit).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["event"], "flagged");
    assert_eq!(first["matched"], true);
}

#[tokio::test]
async fn array_content_is_scanned() {
    let f = fixture(ResponseMode::Block, None).await;
    let body = json!({ "messages": [{ "role": "user", "content": [
        { "type": "text", "text": "summarize this" },
        { "type": "text", "text": f.canary }
    ]}]});
    let resp = f
        .client
        .post(f.url("/v1/chat/completions"))
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn bad_json_is_rejected() {
    let f = fixture(ResponseMode::Block, None).await;
    for body in ["{not json", r#"{"prompt":"x"}"#] {
        let resp = f
            .client
            .post(f.url("/v1/chat/completions"))
            .body(body)
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    }
    assert!(f.seen.lock().unwrap().is_empty());
}

#[tokio::test]
async fn other_paths_pass_through() {
    let f = fixture(ResponseMode::Block, None).await;
    // a canary on a non-chat path is not scanned
    let resp = f
        .client
        .post(f.url("/v1/embeddings"))
        .body(f.canary.clone())
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let seen = f.seen.lock().unwrap();
    assert_eq!(seen[0].0, "/v1/embeddings");
    assert_eq!(&seen[0].1[..], f.canary.as_bytes());
}

#[tokio::test]
async fn registry_swap_takes_effect() {
    let f = fixture(ResponseMode::Block, None).await;
    f.proxy.state.replace_registry(TokenRegistry::new());
    assert_eq!(f.chat(&f.canary).await.status(), StatusCode::OK);
}

#[tokio::test]
async fn scan_timeout_falls_back_to_flag() {
    let (upstream, seen) = stub_upstream().await;
    let mut config = ProxyConfig::new("127.0.0.1:0".parse().unwrap(), format!("http://{upstream}"));
    config.scan_budget = Duration::ZERO;
    let state = ProxyState::with_registry(config, TokenRegistry::new()).unwrap();
    let proxy = spawn(state).await.unwrap();
    let body = json!({ "messages": [{ "role": "user", "content": "x ".repeat(5000) }] });
    let resp = reqwest::Client::new()
        .post(format!("http://{}/v1/chat/completions", proxy.addr))
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn unreachable_upstream() {
    // grab a free port, then close it
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let upstream = format!("http://127.0.0.1:{port}");
    let config = ProxyConfig::new("127.0.0.1:0".parse().unwrap(), upstream.clone());
    let state = ProxyState::with_registry(config, TokenRegistry::new()).unwrap();
    assert!(spawn(state.clone()).await.is_err());

    // serving anyway: forwarding yields 502
    let app = canary_proxy::router(state);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await });
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/v1/chat/completions"))
        .body(r#"{"messages":[{"role":"user","content":"hi"}]}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_GATEWAY);
}

#[tokio::test]
async fn generative_canary_inside_instructions_is_caught_by_region() {
    let (upstream, seen) = stub_upstream().await;
    let key = OrgKey::new(b"proxy-test-organization-key".to_vec()).unwrap();
    let token = derive_hmac_token(&key, "board-minutes.docx").unwrap();
    let mut registry = TokenRegistry::new();
    registry.insert_token(token);
    let canary = Stack::for_scheme(Scheme::Hmac)
        .encode(&StackConfig::named("M6").unwrap(), token.as_bytes(), None)
        .unwrap();
    let prompt = format!(
        "Please summarize the document below in three bullets.\n<doc>\n{canary}\n</doc>\nKeep it short, thanks."
    );

    let mut config = ProxyConfig::new("127.0.0.1:0".parse().unwrap(), format!("http://{upstream}"));
    config.policy.region_delimiters = Some(("<doc>\n".into(), "\n</doc>".into()));
    let proxy = spawn(ProxyState::with_registry(config, registry).unwrap()).await.unwrap();
    let body = json!({ "model": "m", "messages": [
        { "role": "system", "content": "You are a helpful assistant." },
        { "role": "user", "content": prompt },
    ]});
    let resp = reqwest::Client::new()
        .post(format!("http://{}/v1/chat/completions", proxy.addr))
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);
    assert!(seen.lock().unwrap().is_empty());
}
