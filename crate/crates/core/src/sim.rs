//! Reference servers with configurable verification flaws.
//!
//! Each profile describes one simulated site: which fields its sign-in
//! message carries and which verifications its AUTH endpoint actually
//! performs. A fleet of profiles serves on one port under per-profile
//! path prefixes, giving every scanner and guard claim a ground truth
//! that can be checked at desk scale.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::crypto::{recover_address, Address, SignatureBundle};
use crate::message::{is_uuid_token, tokenize, ADDRESS_PATTERN, DATETIME_PATTERN, UUID_PATTERN};
use crate::transport::now_ms;

/// Anti-replay behavior of a profile's nonce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimNonce {
    /// The message carries no nonce at all.
    None,
    /// Record-based, consumed by the first successful AUTH.
    OneTime,
    /// Record-based, reusable until the ttl elapses.
    Temporary { ttl_ms: u64 },
    /// Client-embedded timestamp checked against a window; `window_ms:
    /// null` reproduces the no-expiry flaw (only future values rejected).
    TimeBased { window_ms: Option<u64> },
    /// A nonce is issued but never verified.
    Unchecked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyCheck {
    /// Issued and submitted static content must be equal (variable
    /// fields disregarded).
    Exact,
    /// The issued body only has to occur somewhere inside the submitted
    /// message — the containment flaw.
    RegexContains,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtField {
    Address,
    Version(String),
    IssuedAt,
    ExpirationTime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VulnProfile {
    pub label: String,
    pub display_name: String,
    pub host: String,
    pub include_domain: bool,
    pub include_name: bool,
    pub statement: String,
    pub nonce_kind: SimNonce,
    pub body_check: BodyCheck,
    pub message_check: bool,
    pub sig_check: bool,
    pub addr_check: bool,
    #[serde(default = "default_token_ttl")]
    pub token_ttl_ms: u64,
    #[serde(default)]
    pub ext_fields: Vec<ExtField>,
}

fn default_token_ttl() -> u64 {
    600_000
}

/// A piece of the canonical message: fixed text or a variable slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Static(String),
    Slot(SlotKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Address,
    Uuid,
    Timestamp,
    DateTime,
}

impl SlotKind {
    fn pattern(self) -> &'static str {
        match self {
            SlotKind::Address => ADDRESS_PATTERN,
            SlotKind::Uuid => UUID_PATTERN,
            SlotKind::Timestamp => r"(?:\d{13}|\d{10})",
            SlotKind::DateTime => DATETIME_PATTERN,
        }
    }
}

/// Concrete values for the slots of one composed message.
#[derive(Debug, Clone)]
pub struct SlotValues {
    pub address: String,
    pub nonce: String,
    pub issued_at: String,
    pub expiration: String,
}

impl VulnProfile {
    /// The canonical message skeleton: statics plus variable slots.
    pub fn message_parts(&self) -> Vec<Part> {
        let mut text = String::new();
        let mut parts = Vec::new();
        if self.include_name {
            text.push_str(&format!("Welcome to {}!\n", self.display_name));
        }
        if !self.statement.is_empty() {
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&self.statement);
            text.push('\n');
        }
        if self.include_domain {
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&format!(
                "Sign in at https://{}/login to continue.\n",
                self.host
            ));
        }
        let slot = |parts: &mut Vec<Part>, text: &mut String, label: &str, kind: SlotKind| {
            text.push_str(label);
            parts.push(Part::Static(std::mem::take(text)));
            parts.push(Part::Slot(kind));
            text.push('\n');
        };
        let mut machinery = false;
        for ext in &self.ext_fields {
            match ext {
                ExtField::Address => {
                    if !machinery && !text.is_empty() {
                        text.push('\n');
                    }
                    machinery = true;
                    slot(&mut parts, &mut text, "Wallet address:", SlotKind::Address);
                }
                ExtField::Version(v) => {
                    if !machinery && !text.is_empty() {
                        text.push('\n');
                    }
                    machinery = true;
                    text.push_str(&format!("Version: {v}\n"));
                }
                _ => {}
            }
        }
        match self.nonce_kind {
            SimNonce::None => {}
            SimNonce::TimeBased { .. } => {
                if !machinery && !text.is_empty() {
                    text.push('\n');
                }
                machinery = true;
                slot(&mut parts, &mut text, "Timestamp:", SlotKind::Timestamp);
            }
            _ => {
                if !machinery && !text.is_empty() {
                    text.push('\n');
                }
                machinery = true;
                slot(&mut parts, &mut text, "Nonce:", SlotKind::Uuid);
            }
        }
        for ext in &self.ext_fields {
            match ext {
                ExtField::IssuedAt => {
                    if !machinery && !text.is_empty() {
                        text.push('\n');
                    }
                    machinery = true;
                    slot(&mut parts, &mut text, "Issued At:", SlotKind::DateTime);
                }
                ExtField::ExpirationTime => {
                    if !machinery && !text.is_empty() {
                        text.push('\n');
                    }
                    machinery = true;
                    slot(
                        &mut parts,
                        &mut text,
                        "Expiration Time:",
                        SlotKind::DateTime,
                    );
                }
                _ => {}
            }
        }
        let _ = machinery;
        let trailing = text.trim_end_matches('\n');
        if !trailing.is_empty() {
            parts.push(Part::Static(trailing.to_string()));
        }
        parts
    }

    pub fn compose(&self, values: &SlotValues) -> String {
        let mut out = String::new();
        let mut datetimes_seen = 0;
        for part in self.message_parts() {
            match part {
                Part::Static(s) => out.push_str(&s),
                Part::Slot(kind) => {
                    out.push(' ');
                    out.push_str(match kind {
                        SlotKind::Address => &values.address,
                        SlotKind::Uuid | SlotKind::Timestamp => &values.nonce,
                        SlotKind::DateTime => {
                            datetimes_seen += 1;
                            if datetimes_seen == 1 {
                                &values.issued_at
                            } else {
                                &values.expiration
                            }
                        }
                    });
                }
            }
        }
        out
    }

    /// Labels of the machinery fields the composed message carries.
    pub fn required_labels(&self) -> Vec<String> {
        let mut labels = Vec::new();
        for ext in &self.ext_fields {
            match ext {
                ExtField::Address => labels.push("Wallet address:".to_string()),
                ExtField::Version(_) => labels.push("Version:".to_string()),
                ExtField::IssuedAt => labels.push("Issued At:".to_string()),
                ExtField::ExpirationTime => labels.push("Expiration Time:".to_string()),
            }
        }
        match self.nonce_kind {
            SimNonce::None => {}
            SimNonce::TimeBased { .. } => labels.push("Timestamp:".to_string()),
            _ => labels.push("Nonce:".to_string()),
        }
        labels
    }

    fn body_regex(&self, anchored: bool) -> Regex {
        let mut pattern = String::from("(?s)");
        if anchored {
            pattern.push_str(r"\A");
        }
        for part in self.message_parts() {
            match part {
                Part::Static(s) => pattern.push_str(&regex::escape(&s)),
                // slot and its leading separator are jointly optional, so
                // a message with the value excised still compares equal
                Part::Slot(kind) => pattern.push_str(&format!(r"(?:[ \t]*{})?", kind.pattern())),
            }
        }
        if anchored {
            pattern.push_str(r"\z");
        }
        Regex::new(&pattern).expect("profile body regex")
    }
}

use crate::transport::rfc3339_ms as rfc3339;

fn random_uuid() -> String {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    bytes[6] = (bytes[6] & 0x0f) | 0x40;
    bytes[8] = (bytes[8] & 0x3f) | 0x80;
    let h = hex::encode(bytes);
    format!(
        "{}-{}-{}-{}-{}",
        &h[..8],
        &h[8..12],
        &h[12..16],
        &h[16..20],
        &h[20..]
    )
}

#[derive(Debug, Clone)]
pub struct NonceRecord {
    pub address: String,
    pub issued_at_ms: u64,
    pub used: bool,
}

#[derive(Debug, Clone)]
pub struct TokenRecord {
    pub address: String,
    pub expires_at_ms: u64,
}

/// Mutable per-profile state: issued nonces and live tokens.
#[derive(Debug, Default)]
pub struct ServerState {
    pub nonces: HashMap<String, NonceRecord>,
    pub tokens: HashMap<String, TokenRecord>,
    last_timestamp_ms: u64,
}

/// A compiled profile: verification regexes are built once.
pub struct Site {
    pub profile: VulnProfile,
    exact_re: Regex,
    contains_re: Regex,
    labels: Vec<String>,
    pub state: Mutex<ServerState>,
}

impl Site {
    pub fn new(profile: VulnProfile) -> Site {
        Site {
            labels: profile.required_labels(),
            exact_re: profile.body_regex(true),
            contains_re: profile.body_regex(false),
            profile,
            state: Mutex::new(ServerState::default()),
        }
    }

    /// Issues a sign-in message for `address`, recording the nonce when
    /// the profile is record-based.
    pub fn handle_query(&self, address: &str, now: u64) -> String {
        let mut state = self.state.lock().unwrap();
        // strictly increasing issue time so consecutive queries always
        // differ in their time-valued fields
        let issue_ms = now.max(state.last_timestamp_ms + 1);
        state.last_timestamp_ms = issue_ms;
        let nonce = match self.profile.nonce_kind {
            SimNonce::None => String::new(),
            SimNonce::TimeBased { .. } => issue_ms.to_string(),
            SimNonce::OneTime | SimNonce::Temporary { .. } => {
                let value = random_uuid();
                state.nonces.insert(
                    value.clone(),
                    NonceRecord {
                        address: address.to_string(),
                        issued_at_ms: now,
                        used: false,
                    },
                );
                value
            }
            SimNonce::Unchecked => random_uuid(),
        };
        self.profile.compose(&SlotValues {
            address: address.to_string(),
            nonce,
            issued_at: rfc3339(issue_ms),
            expiration: rfc3339(issue_ms + 86_400_000),
        })
    }

    /// Runs the profile's verification pipeline and issues a token on
    /// success. Each stage rejects with its own (stage, reason) pair so
    /// scanner evidence stays legible.
    pub fn handle_auth(
        &self,
        message: &str,
        signature: &str,
        address: &str,
        now: u64,
    ) -> Result<String, (String, String)> {
        let reject = |stage: &str, reason: &str| (stage.to_string(), reason.to_string());

        if self.profile.sig_check {
            let sig = SignatureBundle::from_hex(signature)
                .map_err(|e| reject("signature", &e.to_string()))?;
            let recovered =
                recover_address(message, &sig).map_err(|e| reject("signature", &e.to_string()))?;
            if self.profile.addr_check {
                let claimed = Address::from_hex(address)
                    .ok_or_else(|| reject("address", "malformed address"))?;
                if recovered != claimed {
                    return Err(reject("address", "signer does not match address"));
                }
            }
        }

        if self.profile.message_check {
            for label in &self.labels {
                if !message.contains(label.as_str()) {
                    return Err(reject(
                        "message",
                        &format!("required field '{label}' missing"),
                    ));
                }
            }
            match self.profile.body_check {
                BodyCheck::Exact => {
                    if !self.exact_re.is_match(message) {
                        return Err(reject("body", "static content differs from issued message"));
                    }
                }
                BodyCheck::RegexContains => {
                    if !self.contains_re.is_match(message) {
                        return Err(reject("body", "issued body not found in message"));
                    }
                }
                BodyCheck::None => {}
            }
        }

        match self.profile.nonce_kind {
            SimNonce::None | SimNonce::Unchecked => {}
            SimNonce::OneTime => {
                let value = extract_uuid(message).ok_or_else(|| reject("nonce", "missing"))?;
                let mut state = self.state.lock().unwrap();
                let record = state
                    .nonces
                    .get_mut(&value)
                    .ok_or_else(|| reject("nonce", "unknown"))?;
                if record.used {
                    return Err(reject("nonce", "already used"));
                }
                record.used = true;
            }
            SimNonce::Temporary { ttl_ms } => {
                let value = extract_uuid(message).ok_or_else(|| reject("nonce", "missing"))?;
                let state = self.state.lock().unwrap();
                let record = state
                    .nonces
                    .get(&value)
                    .ok_or_else(|| reject("nonce", "unknown"))?;
                if now.saturating_sub(record.issued_at_ms) > ttl_ms {
                    return Err(reject("nonce", "expired"));
                }
            }
            SimNonce::TimeBased { window_ms } => {
                let stamp = extract_timestamp(message);
                match window_ms {
                    Some(window) => {
                        let value = stamp.ok_or_else(|| reject("nonce", "missing timestamp"))?;
                        if value.abs_diff(now) > window {
                            return Err(reject("nonce", "timestamp outside window"));
                        }
                    }
                    None => {
                        // the no-expiry flaw: only future values rejected
                        if let Some(value) = stamp {
                            if value > now + 60_000 {
                                return Err(reject("nonce", "future timestamp"));
                            }
                        }
                    }
                }
            }
        }

        let token = random_uuid();
        let mut state = self.state.lock().unwrap();
        state.tokens.insert(
            token.clone(),
            TokenRecord {
                address: address.to_lowercase(),
                expires_at_ms: now + self.profile.token_ttl_ms,
            },
        );
        Ok(token)
    }

    pub fn handle_access(&self, token: &str, now: u64) -> Option<(String, String)> {
        let state = self.state.lock().unwrap();
        let record = state.tokens.get(token)?;
        if record.expires_at_ms <= now {
            return None;
        }
        Some((record.address.clone(), self.profile.label.clone()))
    }
}

fn clean_token(token: &str) -> &str {
    token.trim_matches(|c: char| ",.;:!?\"'()".contains(c))
}

fn extract_uuid(message: &str) -> Option<String> {
    tokenize(message)
        .into_iter()
        .map(clean_token)
        .find(|t| is_uuid_token(t))
        .map(str::to_string)
}

fn extract_timestamp(message: &str) -> Option<u64> {
    for token in tokenize(message) {
        let token = clean_token(token);
        if (token.len() == 10 || token.len() == 13) && token.bytes().all(|b| b.is_ascii_digit()) {
            let value: u64 = token.parse().ok()?;
            return Some(if token.len() == 10 {
                value * 1000
            } else {
                value
            });
        }
    }
    None
}

// ---------------------------------------------------------------------------
// HTTP fleet

struct Fleet {
    sites: HashMap<String, Site>,
    requests: AtomicU64,
}

#[derive(Clone)]
struct AppState(Arc<Fleet>);

#[derive(Deserialize)]
struct QueryBody {
    address: String,
}

#[derive(Deserialize)]
struct AuthBody {
    message: String,
    signature: String,
    address: String,
}

fn not_found() -> (StatusCode, Json<serde_json::Value>) {
    (
        StatusCode::NOT_FOUND,
        Json(json!({"error": {"stage": "routing", "reason": "unknown profile"}})),
    )
}

async fn query_handler(
    State(state): State<AppState>,
    Path(label): Path<String>,
    Json(body): Json<QueryBody>,
) -> impl IntoResponse {
    state.0.requests.fetch_add(1, Ordering::Relaxed);
    match state.0.sites.get(&label) {
        Some(site) => {
            let message = site.handle_query(&body.address, now_ms());
            (
                StatusCode::OK,
                Json(json!({"data": {"auth": {"message": message}}})),
            )
        }
        None => not_found(),
    }
}

async fn auth_handler(
    State(state): State<AppState>,
    Path(label): Path<String>,
    Json(body): Json<AuthBody>,
) -> impl IntoResponse {
    state.0.requests.fetch_add(1, Ordering::Relaxed);
    match state.0.sites.get(&label) {
        Some(site) => {
            match site.handle_auth(&body.message, &body.signature, &body.address, now_ms()) {
                Ok(token) => (
                    StatusCode::OK,
                    Json(json!({"data": {"auth": {"token": token}}})),
                ),
                Err((stage, reason)) => (
                    StatusCode::UNAUTHORIZED,
                    Json(json!({"error": {"stage": stage, "reason": reason}})),
                ),
            }
        }
        None => not_found(),
    }
}

async fn access_handler(
    State(state): State<AppState>,
    Path(label): Path<String>,
    headers: axum::http::HeaderMap,
) -> impl IntoResponse {
    state.0.requests.fetch_add(1, Ordering::Relaxed);
    let token = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or_default();
    match state.0.sites.get(&label) {
        Some(site) => match site.handle_access(token, now_ms()) {
            Some((address, profile)) => (
                StatusCode::OK,
                Json(json!({"data": {"address": address, "profile": profile}})),
            ),
            None => (
                StatusCode::UNAUTHORIZED,
                Json(json!({"error": {"stage": "access", "reason": "invalid or expired token"}})),
            ),
        },
        None => not_found(),
    }
}

/// A running fleet. Dropping the handle shuts the server down.
pub struct SimHandle {
    pub base_url: String,
    requests: Arc<Fleet>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl SimHandle {
    /// Requests handled so far across all profiles.
    pub fn request_count(&self) -> u64 {
        self.requests.requests.load(Ordering::Relaxed)
    }

    pub fn profile_base(&self, label: &str) -> String {
        format!("{}/p/{}", self.base_url, label)
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("no profiles to serve")]
    EmptyFleet,
    #[error("failed to bind port: {0}")]
    Bind(String),
}

/// Serves every profile on one port (0 picks a free one) under
/// `/p/<label>/{query,auth,access}`. Runs on a background thread with
/// its own runtime, so callers stay synchronous.
pub fn spawn_fleet(profiles: Vec<VulnProfile>, port: u16) -> Result<SimHandle, SimError> {
    if profiles.is_empty() {
        return Err(SimError::EmptyFleet);
    }
    let fleet = Arc::new(Fleet {
        sites: profiles
            .into_iter()
            .map(|p| (p.label.clone(), Site::new(p)))
            .collect(),
        requests: AtomicU64::new(0),
    });
    let app_state = AppState(fleet.clone());
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();

    let thread = std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
        runtime.block_on(async move {
            let bind = match tokio::net::TcpListener::bind(("127.0.0.1", port)).await {
                Ok(listener) => listener,
                Err(e) => {
                    let _ = addr_tx.send(Err(e.to_string()));
                    return;
                }
            };
            let local = bind.local_addr().expect("local addr");
            let _ = addr_tx.send(Ok(local));
            let app = Router::new()
                .route("/p/{label}/query", post(query_handler))
                .route("/p/{label}/auth", post(auth_handler))
                .route("/p/{label}/access", get(access_handler))
                .with_state(app_state);
            let _ = axum::serve(bind, app)
                .with_graceful_shutdown(async move {
                    let _ = shutdown_rx.await;
                })
                .await;
        });
    });

    let addr = addr_rx
        .recv()
        .map_err(|_| SimError::Bind("server thread died".into()))?
        .map_err(SimError::Bind)?;
    Ok(SimHandle {
        base_url: format!("http://{addr}"),
        requests: fleet,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}
