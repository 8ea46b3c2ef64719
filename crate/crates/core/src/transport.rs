//! Templated HTTP requests with key substitution and session threading.
//!
//! Every site exposes the same three logical calls — QUERY a message,
//! AUTH with a signature, ACCESS with the issued token — behind wildly
//! different APIs. A target config describes each call once with
//! `{{ key }}` placeholders; a sequence then threads extracted response
//! values through a session so the same probe code drives any site.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("malformed target document at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("target '{0}' must contain exactly one AUTH request")]
    InvalidTarget(String),
    #[error("unresolved placeholder key '{0}'")]
    MissingKey(String),
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    NetworkError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Query,
    Auth,
    Access,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Query => "QUERY",
            Role::Auth => "AUTH",
            Role::Access => "ACCESS",
        })
    }
}

/// One templated HTTP call. `inputs` are default bindings, `outputs`
/// map binding keys to response paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestItem {
    pub role: Role,
    pub method: String,
    pub url: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub body: Option<String>,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

/// A named set of request items plus the metadata the checkers need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetConfig {
    pub label: String,
    pub host: String,
    #[serde(default)]
    pub expected_name: Option<String>,
    #[serde(default = "default_token_key")]
    pub token_key: String,
    pub requests: Vec<RequestItem>,
}

fn default_token_key() -> String {
    "token".to_string()
}

impl TargetConfig {
    pub fn item(&self, role: Role) -> Option<&RequestItem> {
        self.requests.iter().find(|r| r.role == role)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetDocument {
    targets: Vec<TargetConfig>,
}

/// Loads a target collection document (format under the crate README).
pub fn load_targets(document: &str) -> Result<Vec<TargetConfig>, TransportError> {
    let doc: TargetDocument =
        serde_json::from_str(document).map_err(|e| TransportError::ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let mut targets = doc.targets;
    for target in &mut targets {
        let auth_count = target
            .requests
            .iter()
            .filter(|r| r.role == Role::Auth)
            .count();
        let query_count = target
            .requests
            .iter()
            .filter(|r| r.role == Role::Query)
            .count();
        let access_count = target
            .requests
            .iter()
            .filter(|r| r.role == Role::Access)
            .count();
        if auth_count != 1 || query_count > 1 || access_count > 1 {
            return Err(TransportError::InvalidTarget(target.label.clone()));
        }
        target.requests.sort_by_key(|r| r.role);
    }
    Ok(targets)
}

pub fn serialize_targets(targets: &[TargetConfig]) -> String {
    serde_json::to_string_pretty(&serde_json::json!({ "targets": targets })).unwrap()
}

/// A fully rendered request, every placeholder resolved.
#[derive(Debug, Clone, Serialize)]
pub struct ConcreteRequest {
    pub method: String,
    pub url: String,
    pub headers: BTreeMap<String, String>,
    pub body: Option<String>,
}

impl ConcreteRequest {
    pub fn host(&self) -> String {
        reqwest::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct Response {
    pub status: u16,
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

impl Response {
    pub fn header(&self, name: &str) -> Option<String> {
        let lower = name.to_ascii_lowercase();
        self.headers
            .iter()
            .find(|(k, _)| k.to_ascii_lowercase() == lower)
            .map(|(_, v)| v.clone())
    }
}

/// One executed (or failed) request inside a sequence.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub role: Role,
    pub request: Option<ConcreteRequest>,
    pub status: Option<u16>,
    pub error: Option<String>,
    pub extracted: BTreeMap<String, String>,
    pub misses: Vec<String>,
}

/// Key-value store threaded through a QUERY→AUTH→ACCESS sequence.
/// Bindings only grow; later extractions shadow earlier keys.
#[derive(Debug, Clone, Default)]
pub struct SessionContext {
    pub bindings: BTreeMap<String, String>,
    pub trace: Vec<TraceEntry>,
}

impl SessionContext {
    pub fn new() -> SessionContext {
        SessionContext::default()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.bindings.get(key).map(String::as_str)
    }
}

static PLACEHOLDER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\{\{ ([A-Za-z0-9_().]+) \}\}").unwrap());

/// Substitutes placeholders in a bare template string under the same
/// precedence rules as `render`. Used for values that live outside an
/// item's url/headers/body, such as a client-composed message template
/// in the AUTH item's inputs.
pub fn render_template(
    template: &str,
    item: &RequestItem,
    session: &SessionContext,
    local: &BTreeMap<String, String>,
) -> Result<String, TransportError> {
    substitute(template, item, session, local)
}

/// Escapes a value for insertion inside a JSON string literal.
fn json_escape(value: &str) -> String {
    let quoted = serde_json::to_string(value).expect("string serializes");
    quoted[1..quoted.len() - 1].to_string()
}

fn substitute(
    template: &str,
    item: &RequestItem,
    session: &SessionContext,
    local: &BTreeMap<String, String>,
) -> Result<String, TransportError> {
    let mut out = String::with_capacity(template.len());
    let mut cursor = 0;
    for caps in PLACEHOLDER_RE.captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let key = &caps[1];
        let value = local
            .get(key)
            .or_else(|| session.bindings.get(key))
            .or_else(|| item.inputs.get(key))
            .ok_or_else(|| TransportError::MissingKey(key.to_string()))?;
        // values insert verbatim — data that happens to contain
        // placeholder syntax is never re-interpreted
        let in_json_string =
            template[..whole.start()].ends_with('"') && template[whole.end()..].starts_with('"');
        out.push_str(&template[cursor..whole.start()]);
        if in_json_string {
            // inside a JSON string literal; escape so multi-line
            // messages render to valid JSON
            out.push_str(&json_escape(value));
        } else {
            out.push_str(value);
        }
        cursor = whole.end();
    }
    out.push_str(&template[cursor..]);
    Ok(out)
}

/// Renders an item against the scopes. Pure: same inputs, same output.
pub fn render(
    item: &RequestItem,
    session: &SessionContext,
    local: &BTreeMap<String, String>,
) -> Result<ConcreteRequest, TransportError> {
    let url = substitute(&item.url, item, session, local)?;
    let mut headers = BTreeMap::new();
    for (name, value) in &item.headers {
        headers.insert(name.clone(), substitute(value, item, session, local)?);
    }
    let body = match &item.body {
        Some(template) => Some(substitute(template, item, session, local)?),
        None => None,
    };
    Ok(ConcreteRequest {
        method: item.method.to_uppercase(),
        url,
        headers,
        body,
    })
}

/// Deterministic source for generated values (seeded) plus the clock.
#[derive(Debug, Clone)]
pub struct ValueGenerator {
    rng: ChaCha8Rng,
}

impl ValueGenerator {
    pub fn from_seed(seed: u64) -> ValueGenerator {
        ValueGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uuid4(&mut self) -> String {
        let mut bytes = [0u8; 16];
        self.rng.fill(&mut bytes);
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

    pub fn rand_digits(&mut self, n: usize) -> String {
        (0..n)
            .map(|_| char::from(b'0' + self.rng.gen_range(0..10u8)))
            .collect()
    }

    pub fn rand_letters(&mut self, n: usize) -> String {
        (0..n)
            .map(|_| char::from(b'a' + self.rng.gen_range(0..26u8)))
            .collect()
    }

    pub fn rand_alnum(&mut self, n: usize) -> String {
        const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
        (0..n)
            .map(|_| char::from(ALPHABET[self.rng.gen_range(0..ALPHABET.len())]))
            .collect()
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap()
        .as_millis() as u64
}

pub fn now_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap()
        .as_secs()
}

/// RFC 3339 with millisecond precision and a `Z` suffix.
pub fn rfc3339_ms(ms: u64) -> String {
    use chrono::TimeZone;
    chrono::Utc
        .timestamp_millis_opt(ms as i64)
        .single()
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

static RAND_DIGITS_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^rand_digits\((\d+)\)$").unwrap());

fn builtin_value(key: &str, gen: &mut ValueGenerator) -> Option<String> {
    match key {
        "now_ms" => return Some(now_ms().to_string()),
        "now_s" => return Some(now_s().to_string()),
        "uuid4" => return Some(gen.uuid4()),
        _ => {}
    }
    let caps = RAND_DIGITS_RE.captures(key)?;
    let n: usize = caps[1].parse().ok()?;
    Some(gen.rand_digits(n.min(64)))
}

/// Evaluates built-in generator keys (`now_ms`, `now_s`, `uuid4`,
/// `rand_digits(n)`) referenced anywhere in the item or its scopes and
/// returns `local` augmented with their values, so `render` itself stays
/// pure.
pub fn resolve_builtins(
    item: &RequestItem,
    session: &SessionContext,
    local: &BTreeMap<String, String>,
    gen: &mut ValueGenerator,
) -> BTreeMap<String, String> {
    let mut texts: Vec<&str> = vec![&item.url];
    texts.extend(item.headers.values().map(String::as_str));
    if let Some(body) = &item.body {
        texts.push(body);
    }
    texts.extend(item.inputs.values().map(String::as_str));
    texts.extend(local.values().map(String::as_str));

    let mut out = local.clone();
    for text in texts {
        for caps in PLACEHOLDER_RE.captures_iter(text) {
            let key = &caps[1];
            let bound = out.contains_key(key)
                || session.bindings.contains_key(key)
                || item.inputs.contains_key(key);
            if bound {
                continue;
            }
            if let Some(value) = builtin_value(key, gen) {
                out.insert(key.to_string(), value);
            }
        }
    }
    out
}

/// Keeps at least `min_interval` between requests to the same host.
#[derive(Debug, Default)]
pub struct RateLimiter {
    last: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    pub fn new() -> RateLimiter {
        RateLimiter::default()
    }

    pub fn acquire(&self, host: &str, min_interval: Duration) {
        if min_interval.is_zero() {
            return;
        }
        loop {
            let wait = {
                let mut last = self.last.lock().unwrap();
                let now = Instant::now();
                match last.get(host) {
                    Some(prev) if now.duration_since(*prev) < min_interval => {
                        min_interval - now.duration_since(*prev)
                    }
                    _ => {
                        last.insert(host.to_string(), now);
                        return;
                    }
                }
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderProfile {
    /// Browser-style headers so test traffic looks like a real client.
    ChromeLike,
    Plain,
}

#[derive(Debug, Clone)]
pub struct ExecutePolicy {
    pub timeout: Duration,
    pub min_interval: Duration,
    pub headers_profile: HeaderProfile,
}

impl Default for ExecutePolicy {
    fn default() -> ExecutePolicy {
        ExecutePolicy {
            timeout: Duration::from_secs(10),
            min_interval: Duration::from_secs(60),
            headers_profile: HeaderProfile::ChromeLike,
        }
    }
}

fn is_loopback(host: &str) -> bool {
    host == "127.0.0.1" || host == "localhost" || host == "::1"
}

const CHROME_HEADERS: &[(&str, &str)] = &[
    ("User-Agent", "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/120.0.0.0 Safari/537.36"),
    ("Accept", "application/json, text/plain, */*"),
    ("Accept-Language", "en-US,en;q=0.9"),
    ("Sec-Fetch-Mode", "cors"),
];

pub struct HttpClient {
    inner: reqwest::blocking::Client,
    limiter: std::sync::Arc<RateLimiter>,
    policy: ExecutePolicy,
}

impl HttpClient {
    pub fn new(policy: ExecutePolicy, limiter: std::sync::Arc<RateLimiter>) -> HttpClient {
        let inner = reqwest::blocking::Client::builder()
            .timeout(policy.timeout)
            .build()
            .expect("reqwest client");
        HttpClient {
            inner,
            limiter,
            policy,
        }
    }

    /// Runs one concrete request under the policy: waits out the per-host
    /// interval (loopback is exempt), attaches the header profile, and
    /// maps failures to `Timeout` / `NetworkError`.
    pub fn execute(&self, request: &ConcreteRequest) -> Result<Response, TransportError> {
        let host = request.host();
        let interval = if is_loopback(&host) {
            Duration::ZERO
        } else {
            self.policy.min_interval
        };
        self.limiter.acquire(&host, interval);

        let method = reqwest::Method::from_bytes(request.method.as_bytes())
            .map_err(|_| TransportError::NetworkError(format!("bad method {}", request.method)))?;
        let mut builder = self.inner.request(method, &request.url);
        if self.policy.headers_profile == HeaderProfile::ChromeLike {
            for (name, value) in CHROME_HEADERS {
                builder = builder.header(*name, *value);
            }
        }
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        if let Some(body) = &request.body {
            builder = builder
                .header("Content-Type", "application/json")
                .body(body.clone());
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::NetworkError(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or_default().to_string()))
            .collect();
        let body = resp.text().unwrap_or_default();
        Ok(Response {
            status,
            headers,
            body,
        })
    }
}

/// Resolves a response path: `status`, `header:<name>`, or a dotted path
/// into the JSON body with decimal segments as array indices.
pub fn resolve_path(response: &Response, path: &str) -> Option<String> {
    if path == "status" {
        return Some(response.status.to_string());
    }
    if let Some(name) = path.strip_prefix("header:") {
        return response.header(name);
    }
    let root: serde_json::Value = serde_json::from_str(&response.body).ok()?;
    let mut cursor = &root;
    for segment in path.split('.') {
        if segment.is_empty() {
            return None;
        }
        cursor = match cursor {
            serde_json::Value::Object(map) => map.get(segment)?,
            serde_json::Value::Array(items) => items.get(segment.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    match cursor {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Null => None,
        other => Some(other.to_string()),
    }
}

/// Binds each resolvable output path into the session; unresolvable
/// paths are soft misses recorded on the sequence's latest trace entry.
pub fn extract_outputs(
    response: &Response,
    outputs: &BTreeMap<String, String>,
    session: &mut SessionContext,
) {
    let mut extracted = BTreeMap::new();
    let mut misses = Vec::new();
    for (key, path) in outputs {
        match resolve_path(response, path) {
            Some(value) => {
                session.bindings.insert(key.clone(), value.clone());
                extracted.insert(key.clone(), value);
            }
            None => misses.push(key.clone()),
        }
    }
    if session.trace.is_empty() {
        session.trace.push(TraceEntry {
            role: Role::Query,
            request: None,
            status: Some(response.status),
            error: None,
            extracted: BTreeMap::new(),
            misses: Vec::new(),
        });
    }
    let entry = session.trace.last_mut().unwrap();
    entry.extracted.extend(extracted);
    entry.misses.extend(misses);
}

/// Per-role local bindings injected into a sequence.
pub type RoleOverrides = HashMap<Role, BTreeMap<String, String>>;

/// Executes the target's QUERY→AUTH→ACCESS items in order (absent roles
/// are skipped), threading the session. `hook` runs before each role and
/// can contribute local bindings computed from the session so far —
/// signing the queried message being the canonical use. Execution and
/// render failures land in the trace; a failing role listed in
/// `required` stops the sequence.
pub fn run_sequence(
    client: &HttpClient,
    target: &TargetConfig,
    overrides: &RoleOverrides,
    required: &[Role],
    gen: &mut ValueGenerator,
    mut hook: impl FnMut(Role, &SessionContext) -> BTreeMap<String, String>,
) -> SessionContext {
    let mut session = SessionContext::new();
    for item in &target.requests {
        let mut local = overrides.get(&item.role).cloned().unwrap_or_default();
        local.extend(hook(item.role, &session));
        let local = resolve_builtins(item, &session, &local, gen);
        let rendered = render(item, &session, &local);
        match rendered {
            Ok(request) => match client.execute(&request) {
                Ok(response) => {
                    session.trace.push(TraceEntry {
                        role: item.role,
                        request: Some(request),
                        status: Some(response.status),
                        error: None,
                        extracted: BTreeMap::new(),
                        misses: Vec::new(),
                    });
                    extract_outputs(&response, &item.outputs, &mut session);
                }
                Err(err) => {
                    session.trace.push(TraceEntry {
                        role: item.role,
                        request: Some(request),
                        status: None,
                        error: Some(err.to_string()),
                        extracted: BTreeMap::new(),
                        misses: Vec::new(),
                    });
                    if required.contains(&item.role) {
                        break;
                    }
                }
            },
            Err(err) => {
                session.trace.push(TraceEntry {
                    role: item.role,
                    request: None,
                    status: None,
                    error: Some(err.to_string()),
                    extracted: BTreeMap::new(),
                    misses: Vec::new(),
                });
                if required.contains(&item.role) {
                    break;
                }
            }
        }
    }
    session
}
