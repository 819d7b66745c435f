//! Reverse proxy for OpenAI-style chat-completion APIs that scans message
//! content for canaries before anything reaches the upstream model.
//!
//! A verified match in block mode answers 403 and locks the proxy; every
//! later upstream-bound request gets 423 until an administrator resets it.

pub mod e2e;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderName, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use canary_core::scanner::{ScanPolicy, ScanVerdict, Scanner};
use canary_core::TokenRegistry;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::{json, Value};

pub const CHAT_PATH: &str = "/v1/chat/completions";
pub const RESET_PATH: &str = "/admin/reset";
pub const STATUS_PATH: &str = "/admin/status";
pub const ADMIN_HEADER: &str = "x-admin-token";

#[derive(Debug, thiserror::Error)]
pub enum ProxyError {
    #[error("upstream {url} is not reachable: {reason}")]
    UpstreamUnreachable { url: String, reason: String },
    #[error("invalid upstream url {0}")]
    BadUpstream(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("audit log {path}: {source}")]
    Audit {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] canary_core::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseMode {
    #[default]
    Block,
    Flag,
}

impl std::str::FromStr for ResponseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "block" => Ok(ResponseMode::Block),
            "flag" => Ok(ResponseMode::Flag),
            other => Err(format!("unknown response mode {other:?} (block|flag)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    /// Base URL, e.g. `http://127.0.0.1:9000`. Request paths are appended.
    pub upstream: String,
    pub policy: ScanPolicy,
    pub response_mode: ResponseMode,
    pub lockdown_enabled: bool,
    pub admin_token: Option<String>,
    pub audit_log: Option<PathBuf>,
    /// Scans running longer than this are handled as in flag mode.
    pub scan_budget: Duration,
}

impl ProxyConfig {
    pub fn new(listen: SocketAddr, upstream: impl Into<String>) -> Self {
        ProxyConfig {
            listen,
            upstream: upstream.into(),
            policy: ScanPolicy::default(),
            response_mode: ResponseMode::Block,
            lockdown_enabled: true,
            admin_token: None,
            audit_log: None,
            scan_budget: Duration::from_secs(5),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LockdownState {
    pub locked: bool,
    pub trigger: Option<ScanVerdict>,
    pub locked_at: Option<DateTime<Utc>>,
    /// Number of resets so far.
    pub epoch: u64,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    timestamp: String,
    event: &'a str,
    path: &'a str,
    matched: bool,
    layer: Option<String>,
    identity_digest: Option<String>,
    latency_us: u64,
}

pub struct ProxyState {
    config: ProxyConfig,
    scanner: RwLock<Arc<Scanner>>,
    lockdown: Mutex<LockdownState>,
    client: reqwest::Client,
    audit: Option<Mutex<File>>,
}

impl ProxyState {
    pub fn new(config: ProxyConfig, scanner: Scanner) -> Result<Arc<Self>, ProxyError> {
        let audit = match &config.audit_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ProxyError::Audit {
                        path: path.clone(),
                        source,
                    })?,
            )),
            None => None,
        };
        Ok(Arc::new(ProxyState {
            config,
            scanner: RwLock::new(Arc::new(scanner)),
            lockdown: Mutex::new(LockdownState::default()),
            client: reqwest::Client::new(),
            audit,
        }))
    }

    /// Builds a scanner over `registry` with the embedded model.
    pub fn with_registry(config: ProxyConfig, registry: TokenRegistry) -> Result<Arc<Self>, ProxyError> {
        let scanner = Scanner::with_default_model(Arc::new(registry), config.policy.clone());
        Self::new(config, scanner)
    }

    /// Swaps in a new registry; in-flight scans keep the old snapshot.
    pub fn replace_registry(&self, registry: TokenRegistry) {
        let scanner = Scanner::with_default_model(Arc::new(registry), self.config.policy.clone());
        *self.scanner.write().expect("scanner lock") = Arc::new(scanner);
    }

    pub fn lockdown(&self) -> LockdownState {
        self.lockdown.lock().expect("lockdown lock").clone()
    }

    pub fn is_locked(&self) -> bool {
        self.lockdown.lock().expect("lockdown lock").locked
    }

    fn scanner(&self) -> Arc<Scanner> {
        self.scanner.read().expect("scanner lock").clone()
    }

    fn lock(&self, verdict: &ScanVerdict) {
        let mut l = self.lockdown.lock().expect("lockdown lock");
        if !l.locked {
            l.locked = true;
            l.trigger = Some(verdict.clone());
            l.locked_at = Some(Utc::now());
        }
    }

    fn audit(&self, event: &str, path: &str, verdict: Option<&ScanVerdict>, latency: Duration) {
        let entry = AuditEntry {
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            event,
            path,
            matched: verdict.is_some_and(|v| v.matched),
            layer: verdict.and_then(|v| v.layer).map(|l| l.to_string()),
            identity_digest: verdict.and_then(|v| v.identity.as_ref()).map(|i| i.digest()),
            latency_us: latency.as_micros() as u64,
        };
        tracing::info!(
            event,
            path,
            matched = entry.matched,
            layer = entry.layer.as_deref(),
            latency_us = entry.latency_us,
            "audit"
        );
        if let Some(f) = &self.audit {
            if let Ok(line) = serde_json::to_string(&entry) {
                let mut f = f.lock().expect("audit lock");
                let _ = writeln!(f, "{line}");
            }
        }
    }
}

pub fn router(state: Arc<ProxyState>) -> Router {
    Router::new()
        .route(CHAT_PATH, post(chat_completions))
        .route(RESET_PATH, post(reset_lockdown))
        .route(STATUS_PATH, get(status))
        .fallback(passthrough)
        .with_state(state)
}

fn error_body(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": { "message": message, "code": status.as_u16() } }))).into_response()
}

fn locked_response() -> Response {
    error_body(StatusCode::LOCKED, "proxy is in lockdown after a canary match")
}

/// Text of every message: `content` may be a string or a list of parts
/// with `text` fields.
pub fn message_texts(body: &Value) -> Option<Vec<String>> {
    let messages = body.get("messages")?.as_array()?;
    let mut out = Vec::new();
    for m in messages {
        match m.get("content") {
            Some(Value::String(s)) => out.push(s.clone()),
            Some(Value::Array(parts)) => out.extend(
                parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .map(str::to_string),
            ),
            _ => {}
        }
    }
    Some(out)
}

enum ScanOutcome {
    Clean,
    Matched(ScanVerdict),
    TimedOut,
}

async fn scan_messages(state: &Arc<ProxyState>, texts: Vec<String>) -> ScanOutcome {
    let scanner = state.scanner();
    let job = tokio::task::spawn_blocking(move || {
        texts
            .iter()
            .map(|t| scanner.scan(t))
            .find(|v| v.matched)
    });
    match tokio::time::timeout(state.config.scan_budget, job).await {
        Ok(Ok(Some(v))) => ScanOutcome::Matched(v),
        Ok(Ok(None)) => ScanOutcome::Clean,
        // a panicked scan is treated like a timeout: logged, never dropped
        Ok(Err(_)) | Err(_) => ScanOutcome::TimedOut,
    }
}

async fn chat_completions(
    State(state): State<Arc<ProxyState>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let path = uri.path().to_string();
    if state.is_locked() {
        state.audit("rejected_locked", &path, None, Duration::ZERO);
        return locked_response();
    }
    let parsed: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(_) => return error_body(StatusCode::BAD_REQUEST, "request body is not valid JSON"),
    };
    let Some(texts) = message_texts(&parsed) else {
        return error_body(StatusCode::BAD_REQUEST, "request has no messages array");
    };

    let started = Instant::now();
    match scan_messages(&state, texts).await {
        ScanOutcome::Clean => {
            state.audit("clean", &path, None, started.elapsed());
        }
        ScanOutcome::TimedOut => {
            state.audit("scan_timeout", &path, None, started.elapsed());
        }
        ScanOutcome::Matched(verdict) => {
            let latency = started.elapsed();
            if state.config.response_mode == ResponseMode::Flag {
                state.audit("flagged", &path, Some(&verdict), latency);
            } else {
                if state.config.lockdown_enabled {
                    state.lock(&verdict);
                }
                state.audit("blocked", &path, Some(&verdict), latency);
                return blocked_response(&verdict);
            }
        }
    }
    forward(&state, method, &uri, headers, body).await
}

/// Looks like a completion with empty content so chat clients just see a
/// failed answer.
fn blocked_response(verdict: &ScanVerdict) -> Response {
    let body = json!({
        "blocked": true,
        "layer": verdict.layer.map(|l| l.to_string()),
        "identity_digest": verdict.identity.as_ref().map(|i| i.digest()),
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": "" },
            "finish_reason": "content_filter"
        }]
    });
    (StatusCode::FORBIDDEN, Json(body)).into_response()
}

async fn passthrough(State(state): State<Arc<ProxyState>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let path = parts.uri.path().to_string();
    if state.is_locked() {
        state.audit("rejected_locked", &path, None, Duration::ZERO);
        return locked_response();
    }
    let body = match axum::body::to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(_) => return error_body(StatusCode::BAD_REQUEST, "unreadable request body"),
    };
    state.audit("passthrough", &path, None, Duration::ZERO);
    forward(&state, parts.method, &parts.uri, parts.headers, body).await
}

const HOP_BY_HOP: [HeaderName; 4] = [
    header::CONNECTION,
    header::HOST,
    header::TRANSFER_ENCODING,
    header::CONTENT_LENGTH,
];

/// Sends the request upstream unchanged and relays the response as it
/// streams in.
async fn forward(state: &ProxyState, method: Method, uri: &Uri, headers: HeaderMap, body: Bytes) -> Response {
    let target = format!(
        "{}{}",
        state.config.upstream.trim_end_matches('/'),
        uri.path_and_query().map_or("/", |p| p.as_str())
    );
    let mut out = HeaderMap::new();
    for (k, v) in &headers {
        if !HOP_BY_HOP.contains(k) {
            out.append(k.clone(), v.clone());
        }
    }
    let upstream = state.client.request(method, &target).headers(out).body(body).send().await;
    let resp = match upstream {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(error = %e, "upstream request failed");
            return error_body(StatusCode::BAD_GATEWAY, "upstream unreachable");
        }
    };
    let mut builder = Response::builder().status(resp.status());
    for (k, v) in resp.headers() {
        if !HOP_BY_HOP.contains(k) {
            builder = builder.header(k, v);
        }
    }
    builder
        .body(Body::from_stream(resp.bytes_stream()))
        .unwrap_or_else(|_| error_body(StatusCode::BAD_GATEWAY, "bad upstream response"))
}

fn admin_token(headers: &HeaderMap) -> Option<&str> {
    if let Some(v) = headers.get(ADMIN_HEADER).and_then(|v| v.to_str().ok()) {
        return Some(v);
    }
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

/// Compares without short-circuiting on the first differing byte.
fn token_matches(given: &str, expected: &str) -> bool {
    let (a, b) = (given.as_bytes(), expected.as_bytes());
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn reset_lockdown(State(state): State<Arc<ProxyState>>, headers: HeaderMap) -> Response {
    let authorized = match (&state.config.admin_token, admin_token(&headers)) {
        (Some(expected), Some(given)) => token_matches(given, expected),
        _ => false,
    };
    if !authorized {
        state.audit("reset_denied", RESET_PATH, None, Duration::ZERO);
        return error_body(StatusCode::UNAUTHORIZED, "invalid admin token");
    }
    let was_locked = {
        let mut l = state.lockdown.lock().expect("lockdown lock");
        let was = l.locked;
        if was {
            l.locked = false;
            l.trigger = None;
            l.locked_at = None;
            l.epoch += 1;
        }
        was
    };
    state.audit(
        if was_locked { "reset" } else { "reset_noop" },
        RESET_PATH,
        None,
        Duration::ZERO,
    );
    Json(json!({ "ok": true, "was_locked": was_locked })).into_response()
}

async fn status(State(state): State<Arc<ProxyState>>) -> Response {
    let l = state.lockdown();
    Json(json!({
        "locked": l.locked,
        "locked_at": l.locked_at,
        "layer": l.trigger.as_ref().and_then(|v| v.layer).map(|m| m.to_string()),
        "epoch": l.epoch,
    }))
    .into_response()
}

/// Fails unless a TCP connection to the upstream host succeeds.
pub async fn check_upstream(upstream: &str) -> Result<(), ProxyError> {
    let url = reqwest::Url::parse(upstream).map_err(|_| ProxyError::BadUpstream(upstream.to_string()))?;
    let host = url
        .host_str()
        .ok_or_else(|| ProxyError::BadUpstream(upstream.to_string()))?;
    let port = url
        .port_or_known_default()
        .ok_or_else(|| ProxyError::BadUpstream(upstream.to_string()))?;
    let connect = tokio::net::TcpStream::connect((host, port));
    match tokio::time::timeout(Duration::from_secs(3), connect).await {
        Ok(Ok(_)) => Ok(()),
        Ok(Err(e)) => Err(ProxyError::UpstreamUnreachable {
            url: upstream.to_string(),
            reason: e.to_string(),
        }),
        Err(_) => Err(ProxyError::UpstreamUnreachable {
            url: upstream.to_string(),
            reason: "connect timed out".to_string(),
        }),
    }
}

/// A proxy listening on a bound socket.
pub struct RunningProxy {
    pub addr: SocketAddr,
    pub state: Arc<ProxyState>,
    pub handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

/// Checks the upstream, binds and serves in a background task.
pub async fn spawn(state: Arc<ProxyState>) -> Result<RunningProxy, ProxyError> {
    check_upstream(&state.config.upstream).await?;
    let listen = state.config.listen;
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|source| ProxyError::Bind { addr: listen, source })?;
    let addr = listener.local_addr().map_err(|source| ProxyError::Bind { addr: listen, source })?;
    let app = router(state.clone());
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    tracing::info!(%addr, upstream = %state.config.upstream, "proxy listening");
    Ok(RunningProxy { addr, state, handle })
}
