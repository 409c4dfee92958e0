//! Chat-completion client shared by every LLM agent.
//!
//! A [`Gateway`] routes a [`ChatRequest`] to a registered [`ProviderProfile`]
//! by model-id prefix, maps it onto the provider's wire dialect, and retries
//! transient failures (HTTP 429 and 5xx, transport errors) with capped
//! exponential backoff. Auth and validation failures are never retried.
//!
//! HTTP, time and credentials are injected ([`Transport`], [`Timer`],
//! [`CredentialSource`]) so tests run offline and deterministically.
//! [`FixtureBackend`] replaces the whole gateway in `--mock` mode.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::util::stable_hash;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    /// The first message is always the system prompt.
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Local annotations (game, phase, role). Never sent to a provider.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            Some(m) if m.role == ChatRole::System => {}
            _ => return Err(GatewayError::BadRequest("first message must be the system prompt".into())),
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::BadRequest(format!("temperature {} out of range", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::BadRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub requests: u64,
}

impl TokenUsage {
    pub fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.requests += other.requests;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Model text, byte-exact.
    pub content: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub provider_request_id: Option<String>,
    /// Backoff delays slept before the successful attempt.
    pub backoff_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts (last status: {})", last_status.map(|s| s.to_string()).unwrap_or_else(|| "transport error".into()))]
    Exhausted { attempts: u32, last_status: Option<u16> },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("provider profile `{0}` is already registered")]
    DuplicateProfile(String),
}

/// Anything that turns a chat request into a reply.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Declarative request/response field mapping for one wire dialect.
/// Response fields are JSON pointers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialect {
    /// Top-level request field for the system prompt; `None` keeps it in
    /// the message list.
    pub system_field: Option<String>,
    pub max_tokens_field: String,
    pub content_pointer: String,
    pub prompt_tokens_pointer: String,
    pub completion_tokens_pointer: String,
    pub request_id_pointer: String,
}

impl Dialect {
    pub fn openai_chat() -> Self {
        Dialect {
            system_field: None,
            max_tokens_field: "max_tokens".into(),
            content_pointer: "/choices/0/message/content".into(),
            prompt_tokens_pointer: "/usage/prompt_tokens".into(),
            completion_tokens_pointer: "/usage/completion_tokens".into(),
            request_id_pointer: "/id".into(),
        }
    }

    pub fn anthropic_messages() -> Self {
        Dialect {
            system_field: Some("system".into()),
            max_tokens_field: "max_tokens".into(),
            content_pointer: "/content/0/text".into(),
            prompt_tokens_pointer: "/usage/input_tokens".into(),
            completion_tokens_pointer: "/usage/output_tokens".into(),
            request_id_pointer: "/id".into(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "openai_chat" => Some(Self::openai_chat()),
            "anthropic_messages" => Some(Self::anthropic_messages()),
            _ => None,
        }
    }

    fn request_body(&self, req: &ChatRequest) -> Value {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(req.model_id));
        let messages: Vec<Value> = req
            .messages
            .iter()
            .filter(|m| self.system_field.is_none() || m.role != ChatRole::System)
            .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
            .collect();
        if let Some(field) = &self.system_field {
            let system: Vec<&str> =
                req.messages.iter().filter(|m| m.role == ChatRole::System).map(|m| m.content.as_str()).collect();
            body.insert(field.clone(), json!(system.join("\n\n")));
        }
        body.insert("messages".into(), Value::Array(messages));
        body.insert("temperature".into(), json!(req.temperature));
        body.insert(self.max_tokens_field.clone(), json!(req.max_output_tokens));
        Value::Object(body)
    }

    fn parse_response(&self, body: &str) -> Result<(String, TokenUsage, Option<String>), String> {
        let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
        let content = v
            .pointer(&self.content_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| format!("response has no text at {}", self.content_pointer))?
            .to_string();
        let count = |p: &str| v.pointer(p).and_then(Value::as_u64).unwrap_or(0);
        let usage = TokenUsage {
            prompt_tokens: count(&self.prompt_tokens_pointer),
            completion_tokens: count(&self.completion_tokens_pointer),
            requests: 1,
        };
        let id = v.pointer(&self.request_id_pointer).and_then(Value::as_str).map(str::to_string);
        Ok((content, usage, id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DialectRef {
    Builtin(String),
    Custom(Dialect),
}

impl DialectRef {
    pub fn resolve(&self) -> Result<Dialect, GatewayError> {
        match self {
            DialectRef::Custom(d) => Ok(d.clone()),
            DialectRef::Builtin(name) => {
                Dialect::builtin(name).ok_or_else(|| GatewayError::BadRequest(format!("unknown dialect `{name}`")))
            }
        }
    }
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

/// Where and how to reach one provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderProfile {
    pub name: String,
    /// Model ids starting with any of these route here (longest match wins).
    pub model_prefixes: Vec<String>,
    pub endpoint: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Prepended to the key in the auth header, e.g. `"Bearer "`.
    #[serde(default)]
    pub auth_prefix: String,
    #[serde(default)]
    pub extra_headers: BTreeMap<String, String>,
    pub dialect: DialectRef,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl ProviderProfile {
    pub fn openai() -> Self {
        ProviderProfile {
            name: "openai".into(),
            model_prefixes: vec!["gpt-".into(), "o1".into(), "o3".into(), "o4".into()],
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            extra_headers: BTreeMap::new(),
            dialect: DialectRef::Builtin("openai_chat".into()),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn anthropic() -> Self {
        ProviderProfile {
            name: "anthropic".into(),
            model_prefixes: vec!["claude-".into()],
            endpoint: "https://api.anthropic.com/v1/messages".into(),
            api_key_env: "ANTHROPIC_API_KEY".into(),
            auth_header: "x-api-key".into(),
            auth_prefix: String::new(),
            extra_headers: [("anthropic-version".to_string(), "2023-06-01".to_string())].into(),
            dialect: DialectRef::Builtin("anthropic_messages".into()),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn builtins() -> Vec<Self> {
        vec![Self::openai(), Self::anthropic()]
    }
}

/// Outgoing HTTP request. `Debug` masks every header value.
#[derive(Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

impl fmt::Debug for HttpRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers: Vec<String> = self.headers.iter().map(|(k, _)| format!("{k}: <redacted>")).collect();
        f.debug_struct("HttpRequest")
            .field("url", &self.url)
            .field("headers", &headers)
            .field("body", &self.body)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTPS transport.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client =
            reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| TransportError(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = self.client.post(&request.url).body(request.body.clone());
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        let resp = builder.send().map_err(|e| TransportError(e.without_url().to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

pub trait Timer: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep(&self, duration: Duration);
}

pub struct SystemTimer {
    origin: Instant,
}

impl Default for SystemTimer {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Timer for SystemTimer {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Timer that never blocks: sleeping advances the clock and is recorded.
#[derive(Default)]
pub struct FakeTimer {
    now: Mutex<u64>,
    sleeps: Mutex<Vec<u64>>,
}

impl FakeTimer {
    pub fn sleeps_ms(&self) -> Vec<u64> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Timer for FakeTimer {
    fn now_ms(&self) -> u64 {
        *self.now.lock().unwrap()
    }
    fn sleep(&self, duration: Duration) {
        let ms = duration.as_millis() as u64;
        *self.now.lock().unwrap() += ms;
        self.sleeps.lock().unwrap().push(ms);
    }
}

pub trait CredentialSource: Send + Sync {
    fn get(&self, name: &str) -> Option<String>;
}

pub struct EnvCredentials;

impl CredentialSource for EnvCredentials {
    fn get(&self, name: &str) -> Option<String> {
        std::env::var(name).ok()
    }
}

impl CredentialSource for BTreeMap<String, String> {
    fn get(&self, name: &str) -> Option<String> {
        BTreeMap::get(self, name).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay_ms: 500, max_delay_ms: 60_000, jitter: true }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt `attempt` (1-based).
    ///
    /// `base * 2^(attempt-1) * (1 + jitter)` with `jitter` in `[0, 1)`, capped
    /// at `max_delay_ms`. The jitter factor stays below 2, so delays never
    /// decrease from one attempt to the next.
    pub fn delay_ms(&self, attempt: u32, jitter_unit: f64) -> u64 {
        let exp = 2f64.powi(attempt.saturating_sub(1).min(62) as i32);
        let factor = if self.jitter { 1.0 + jitter_unit.clamp(0.0, 0.999_999) } else { 1.0 };
        let raw = self.base_delay_ms as f64 * exp * factor;
        (raw.min(self.max_delay_ms as f64)) as u64
    }
}

/// Caps concurrent requests per profile.
pub struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.in_flight.lock().unwrap() -= 1;
        self.limiter.freed.notify_one();
    }
}

/// One attempt against a provider, as recorded for diagnostics. Carries no
/// header or credential material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayEvent {
    pub profile: String,
    pub model_id: String,
    pub attempt: u32,
    pub status: Option<u16>,
    pub backoff_ms: Option<u64>,
}

struct Registered {
    profile: ProviderProfile,
    dialect: Dialect,
    limiter: Limiter,
}

pub struct Gateway {
    profiles: Vec<Registered>,
    transport: Arc<dyn Transport>,
    timer: Arc<dyn Timer>,
    credentials: Arc<dyn CredentialSource>,
    retry: RetryPolicy,
    jitter: Mutex<ChaCha8Rng>,
    events: Mutex<Vec<GatewayEvent>>,
}

impl Gateway {
    pub fn new(
        transport: Arc<dyn Transport>,
        timer: Arc<dyn Timer>,
        credentials: Arc<dyn CredentialSource>,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            profiles: Vec::new(),
            transport,
            timer,
            credentials,
            retry,
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(0x6a17)),
            events: Mutex::new(Vec::new()),
        }
    }

    /// Real HTTP, wall-clock timer, keys from the environment, built-in
    /// provider profiles.
    pub fn from_env() -> Result<Self, GatewayError> {
        let transport =
            ReqwestTransport::new(Duration::from_secs(120)).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
        let mut gw = Gateway::new(
            Arc::new(transport),
            Arc::new(SystemTimer::default()),
            Arc::new(EnvCredentials),
            RetryPolicy::default(),
        );
        for p in ProviderProfile::builtins() {
            gw.register_provider(p)?;
        }
        Ok(gw)
    }

    pub fn with_jitter_seed(self, seed: u64) -> Self {
        *self.jitter.lock().unwrap() = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn register_provider(&mut self, profile: ProviderProfile) -> Result<(), GatewayError> {
        if self.profiles.iter().any(|r| r.profile.name == profile.name) {
            return Err(GatewayError::DuplicateProfile(profile.name));
        }
        let dialect = profile.dialect.resolve()?;
        let limiter = Limiter::new(profile.max_in_flight);
        self.profiles.push(Registered { profile, dialect, limiter });
        Ok(())
    }

    /// Replaces a registered profile of the same name, or adds it.
    pub fn upsert_provider(&mut self, profile: ProviderProfile) -> Result<(), GatewayError> {
        self.profiles.retain(|r| r.profile.name != profile.name);
        self.register_provider(profile)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &ProviderProfile> {
        self.profiles.iter().map(|r| &r.profile)
    }

    pub fn events(&self) -> Vec<GatewayEvent> {
        self.events.lock().unwrap().clone()
    }

    fn route(&self, model_id: &str) -> Result<&Registered, GatewayError> {
        self.profiles
            .iter()
            .flat_map(|r| {
                r.profile.model_prefixes.iter().filter(|p| model_id.starts_with(p.as_str())).map(move |p| (p.len(), r))
            })
            .max_by_key(|(len, _)| *len)
            .map(|(_, r)| r)
            .ok_or_else(|| GatewayError::BadRequest(format!("no provider registered for model `{model_id}`")))
    }

    pub fn profile_for(&self, model_id: &str) -> Result<&ProviderProfile, GatewayError> {
        self.route(model_id).map(|r| &r.profile)
    }

    /// Fails with `AuthError` if the credential for `model_id`'s provider is
    /// not available. Makes no network call.
    pub fn check_credentials(&self, model_id: &str) -> Result<(), GatewayError> {
        let reg = self.route(model_id)?;
        self.api_key(&reg.profile).map(|_| ())
    }

    fn api_key(&self, profile: &ProviderProfile) -> Result<String, GatewayError> {
        match self.credentials.get(&profile.api_key_env) {
            Some(k) if !k.trim().is_empty() => Ok(k),
            _ => Err(GatewayError::AuthError(format!(
                "no API key for provider `{}` (set {})",
                profile.name, profile.api_key_env
            ))),
        }
    }

    fn build_http(&self, reg: &Registered, req: &ChatRequest, key: &str) -> HttpRequest {
        let mut headers = vec![
            ("Content-Type".to_string(), "application/json".to_string()),
            (reg.profile.auth_header.clone(), format!("{}{}", reg.profile.auth_prefix, key)),
        ];
        headers.extend(reg.profile.extra_headers.iter().map(|(k, v)| (k.clone(), v.clone())));
        HttpRequest { url: reg.profile.endpoint.clone(), headers, body: reg.dialect.request_body(req).to_string() }
    }

    fn record(&self, event: GatewayEvent) {
        log::debug!(
            "provider={} model={} attempt={} status={:?} backoff_ms={:?}",
            event.profile,
            event.model_id,
            event.attempt,
            event.status,
            event.backoff_ms
        );
        self.events.lock().unwrap().push(event);
    }
}

impl ChatBackend for Gateway {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let reg = self.route(&req.model_id)?;
        let key = self.api_key(&reg.profile)?;
        let http = self.build_http(reg, req, &key);
        let _permit = reg.limiter.acquire();
        let started = self.timer.now_ms();
        let mut backoff = Vec::new();
        let mut last_status = None;
        let max_attempts = self.retry.max_attempts.max(1);
        for attempt in 1..=max_attempts {
            let result = self.transport.send(&http);
            let status = result.as_ref().ok().map(|r| r.status);
            match result {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    self.record(GatewayEvent {
                        profile: reg.profile.name.clone(),
                        model_id: req.model_id.clone(),
                        attempt,
                        status,
                        backoff_ms: None,
                    });
                    let (content, usage, id) =
                        reg.dialect.parse_response(&resp.body).map_err(GatewayError::BadRequest)?;
                    return Ok(ChatResponse {
                        content,
                        usage,
                        latency_ms: self.timer.now_ms().saturating_sub(started),
                        provider_request_id: id,
                        backoff_ms: backoff,
                    });
                }
                Ok(resp) if resp.status == 401 || resp.status == 403 => {
                    self.record(GatewayEvent {
                        profile: reg.profile.name.clone(),
                        model_id: req.model_id.clone(),
                        attempt,
                        status,
                        backoff_ms: None,
                    });
                    return Err(GatewayError::AuthError(format!(
                        "provider `{}` rejected the credential (HTTP {})",
                        reg.profile.name, resp.status
                    )));
                }
                Ok(resp) if resp.status != 429 && !(500..600).contains(&resp.status) => {
                    let snippet: String = resp.body.chars().take(200).collect();
                    return Err(GatewayError::BadRequest(format!("HTTP {}: {snippet}", resp.status)));
                }
                Ok(_) => last_status = status,
                Err(e) => {
                    log::warn!("provider={} attempt={attempt}: {e}", reg.profile.name);
                    last_status = None;
                }
            }
            let delay = if attempt < max_attempts {
                let unit: f64 = self.jitter.lock().unwrap().gen();
                Some(self.retry.delay_ms(attempt, unit))
            } else {
                None
            };
            self.record(GatewayEvent {
                profile: reg.profile.name.clone(),
                model_id: req.model_id.clone(),
                attempt,
                status,
                backoff_ms: delay,
            });
            if let Some(ms) = delay {
                backoff.push(ms);
                self.timer.sleep(Duration::from_millis(ms));
            }
        }
        Err(GatewayError::Exhausted { attempts: max_attempts, last_status })
    }
}

/// Offline backend serving canned replies.
///
/// Replies are grouped by `<game>_<phase>` (from request metadata, falling
/// back to `default`). The reply is picked by a stable hash of the model id
/// and the full message list, so identical requests always get identical
/// replies.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    replies: BTreeMap<String, Vec<String>>,
}

const BUILTIN_FIXTURES: [(&str, &str); 6] = [
    ("ultimatum_propose", include_str!("../fixtures/mock/ultimatum_propose.txt")),
    ("ultimatum_respond", include_str!("../fixtures/mock/ultimatum_respond.txt")),
    ("buysell_propose", include_str!("../fixtures/mock/buysell_propose.txt")),
    ("buysell_respond", include_str!("../fixtures/mock/buysell_respond.txt")),
    ("resource_propose", include_str!("../fixtures/mock/resource_propose.txt")),
    ("resource_respond", include_str!("../fixtures/mock/resource_respond.txt")),
];

impl FixtureBackend {
    pub fn builtin() -> Self {
        let mut backend = FixtureBackend::default();
        for (key, text) in BUILTIN_FIXTURES {
            backend.replies.insert(key.to_string(), split_fixture(text));
        }
        backend
    }

    /// Loads every `*.txt` file in `dir`; the file stem is the group key and
    /// replies are separated by lines containing only `---`.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut backend = FixtureBackend::default();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let replies = split_fixture(&std::fs::read_to_string(&path)?);
            if !replies.is_empty() {
                backend.replies.insert(stem.to_string(), replies);
            }
        }
        if backend.replies.is_empty() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("no fixture replies found in {}", dir.display()),
            ));
        }
        Ok(backend)
    }

    pub fn with_replies(mut self, key: &str, replies: Vec<String>) -> Self {
        self.replies.insert(key.to_string(), replies);
        self
    }
}

fn split_fixture(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim() == "---" {
            if !current.trim().is_empty() {
                out.push(current.trim().to_string());
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        out.push(current.trim().to_string());
    }
    out
}

impl ChatBackend for FixtureBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let key = match (req.metadata.get("game"), req.metadata.get("phase")) {
            (Some(g), Some(p)) => format!("{g}_{p}"),
            _ => "default".to_string(),
        };
        let replies = self
            .replies
            .get(&key)
            .or_else(|| self.replies.get("default"))
            .ok_or_else(|| GatewayError::BadRequest(format!("no fixture replies for `{key}`")))?;
        let mut parts: Vec<&[u8]> = vec![req.model_id.as_bytes()];
        for m in &req.messages {
            parts.push(m.role.as_str().as_bytes());
            parts.push(m.content.as_bytes());
        }
        let pick = (stable_hash(&parts) % replies.len() as u64) as usize;
        let content = replies[pick].clone();
        let prompt_chars: usize = req.messages.iter().map(|m| m.content.chars().count()).sum();
        Ok(ChatResponse {
            usage: TokenUsage {
                prompt_tokens: (prompt_chars as u64).div_ceil(4),
                completion_tokens: (content.chars().count() as u64).div_ceil(4),
                requests: 1,
            },
            content,
            latency_ms: 0,
            provider_request_id: Some(format!("fixture-{key}-{pick}")),
            backoff_ms: Vec::new(),
        })
    }
}
