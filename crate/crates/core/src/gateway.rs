//! Chat-completion access to model providers.
//!
//! Real providers speak the OpenAI-compatible chat JSON dialect over HTTP.
//! Mock providers answer from a [`MockScript`] and never touch the network.
//! Every attempt, failed or not, is appended to a [`CallLedger`].

use std::collections::{BTreeMap, HashMap};
use std::num::NonZeroU32;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Generate,
    Fix,
    Refine,
    Classify,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Fix => "fix",
            Self::Refine => "refine",
            Self::Classify => "classify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProviderKind {
    #[default]
    OpenAICompatible,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    pub base_ms: u64,
    pub factor: f64,
    /// Relative jitter; 0.2 spreads each delay over ±20%.
    pub jitter: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self { base_ms: 1000, factor: 2.0, jitter: 0.2 }
    }
}

impl BackoffPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.base_ms as f64 * self.factor.powi(retry.saturating_sub(1) as i32);
        let spread = if self.jitter > 0.0 { rng.gen_range(-self.jitter..=self.jitter) } else { 0.0 };
        Duration::from_secs_f64((nominal * (1.0 + spread)).max(0.0) / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Substring(String),
    /// Hex SHA-256 of the full request text.
    RequestHash(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub matcher: Matcher,
    pub response: String,
}

/// Deterministic scripted responses: the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_response: String,
}

impl MockScript {
    pub fn new(default_response: impl Into<String>) -> Self {
        Self { rules: Vec::new(), default_response: default_response.into() }
    }

    pub fn on_substring(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule { matcher: Matcher::Substring(needle.into()), response: response.into() });
        self
    }

    pub fn on_request(mut self, request: &str, response: impl Into<String>) -> Self {
        self.rules.push(MockRule { matcher: Matcher::RequestHash(request_hash(request)), response: response.into() });
        self
    }

    pub fn respond(&self, request: &str) -> &str {
        let mut hash = None;
        for rule in &self.rules {
            let hit = match &rule.matcher {
                Matcher::Substring(s) => request.contains(s.as_str()),
                Matcher::RequestHash(h) => hash.get_or_insert_with(|| request_hash(request)).eq_ignore_ascii_case(h),
            };
            if hit {
                return &rule.response;
            }
        }
        &self.default_response
    }
}

pub fn request_hash(request: &str) -> String {
    hex::encode(Sha256::digest(request.as_bytes()))
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub provider_id: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default)]
    pub backoff: BackoffPolicy,
    #[serde(default)]
    pub mock: Option<MockScript>,
}

impl ProviderSpec {
    pub fn mock(provider_id: impl Into<String>, script: MockScript) -> Self {
        let id = provider_id.into();
        Self {
            model_name: id.clone(),
            provider_id: id,
            endpoint: String::new(),
            auth_env_var: String::new(),
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            kind: ProviderKind::Mock,
            temperature: 0.0,
            max_tokens: None,
            requests_per_minute: None,
            backoff: BackoffPolicy::default(),
            mock: Some(script),
        }
    }

    pub fn openai(provider_id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>, auth_env_var: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            endpoint: endpoint.into(),
            model_name: model.into(),
            auth_env_var: auth_env_var.into(),
            kind: ProviderKind::OpenAICompatible,
            mock: None,
            ..Self::mock("", MockScript::default())
        }
    }

    fn chat_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ProvidersFile {
    Wrapped { providers: Vec<ProviderSpec> },
    Bare(Vec<ProviderSpec>),
}

/// Load a provider list from JSON or TOML (`[[providers]]` tables).
pub fn load_providers(path: &Path) -> Result<Vec<ProviderSpec>, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    let parsed: ProvidersFile = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| GatewayError::Config(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| GatewayError::Config(e.to_string()))?
    };
    let list = match parsed {
        ProvidersFile::Wrapped { providers } | ProvidersFile::Bare(providers) => providers,
    };
    let mut seen = std::collections::HashSet::new();
    for p in &list {
        if !seen.insert(p.provider_id.as_str()) {
            return Err(GatewayError::Config(format!("duplicate provider_id {}", p.provider_id)));
        }
    }
    Ok(list)
}

/// One provider call attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub provider_id: String,
    pub purpose: Purpose,
    pub request_text: String,
    pub response_text: String,
    /// 1-based attempt number; on the returned exchange, the attempts used.
    pub attempts: u32,
    pub latency_ms: f64,
    /// Set on failed attempts.
    #[serde(default)]
    pub error: Option<String>,
}

/// Append-only call log; clones share the same storage.
#[derive(Debug, Clone, Default)]
pub struct CallLedger(Arc<Mutex<Vec<ChatExchange>>>);

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, exchange: ChatExchange) {
        self.0.lock().expect("ledger poisoned").push(exchange);
    }

    pub fn snapshot(&self) -> Vec<ChatExchange> {
        self.0.lock().expect("ledger poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("ledger poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Provider,
    Purpose,
    /// Same buckets as `Purpose`; classification calls form their own stage.
    Stage,
}

/// Count ledger entries per group. Counts always sum to `ledger.len()`.
pub fn call_totals(ledger: &[ChatExchange], group_by: GroupBy) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for ex in ledger {
        let key = match group_by {
            GroupBy::Provider => ex.provider_id.clone(),
            GroupBy::Purpose | GroupBy::Stage => ex.purpose.as_str().to_string(),
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("provider {provider}: environment variable {var} is unset or empty")]
    AuthMissing { provider: String, var: String },
    #[error("provider {provider}: gave up after {attempts} attempts (last status {last_status:?}): {message}")]
    RetriesExhausted { provider: String, attempts: u32, last_status: Option<u16>, message: String },
    #[error("provider {provider}: HTTP {status}: {body}")]
    NonRetryable { provider: String, status: u16, body: String },
    #[error("unknown provider {0}")]
    UnknownProvider(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

/// Anything that can answer a prompt on behalf of a named provider.
pub trait ChatService: Send + Sync {
    /// Complete `prompt`; every attempt is appended to `sink`.
    fn complete(&self, provider_id: &str, prompt: &str, purpose: Purpose, sink: &CallLedger) -> Result<ChatExchange, GatewayError>;
}

enum Attempt {
    Ok(String),
    Retryable { status: Option<u16>, message: String },
    Fatal { status: u16, body: String },
}

pub struct Gateway {
    providers: BTreeMap<String, ProviderSpec>,
    ledger: CallLedger,
    client: reqwest::blocking::Client,
    limiters: HashMap<String, DefaultDirectRateLimiter>,
}

impl Gateway {
    pub fn new(providers: Vec<ProviderSpec>) -> Result<Self, GatewayError> {
        let mut map = BTreeMap::new();
        let mut limiters = HashMap::new();
        for p in providers {
            if let Some(rpm) = p.requests_per_minute.and_then(NonZeroU32::new) {
                limiters.insert(p.provider_id.clone(), RateLimiter::direct(Quota::per_minute(rpm)));
            }
            if map.insert(p.provider_id.clone(), p).is_some() {
                return Err(GatewayError::Config("duplicate provider_id".into()));
            }
        }
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { providers: map, ledger: CallLedger::new(), client, limiters })
    }

    pub fn provider(&self, id: &str) -> Option<&ProviderSpec> {
        self.providers.get(id)
    }

    pub fn provider_ids(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    /// Global ledger of every attempt made through this gateway.
    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    fn wait_for_slot(&self, provider_id: &str) {
        if let Some(lim) = self.limiters.get(provider_id) {
            while let Err(not_until) = lim.check() {
                let wait = not_until.wait_time_from(governor::clock::Clock::now(&governor::clock::DefaultClock::default()));
                std::thread::sleep(wait.max(Duration::from_millis(1)));
            }
        }
    }

    fn attempt_http(&self, spec: &ProviderSpec, key: &str, prompt: &str) -> Attempt {
        let mut body = serde_json::json!({
            "model": spec.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": spec.temperature,
        });
        if let Some(max) = spec.max_tokens {
            body["max_tokens"] = max.into();
        }
        let resp = self
            .client
            .post(spec.chat_url())
            .bearer_auth(key)
            .timeout(Duration::from_secs_f64(spec.timeout_secs))
            .json(&body)
            .send();
        let resp = match resp {
            Ok(r) => r,
            Err(e) => return Attempt::Retryable { status: None, message: e.to_string() },
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retryable { status: Some(status), message: e.to_string() },
        };
        if status == 429 || (500..600).contains(&status) {
            return Attempt::Retryable { status: Some(status), message: truncate(&text) };
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal { status, body: truncate(&text) };
        }
        let parsed: Result<serde_json::Value, _> = serde_json::from_str(&text);
        match parsed.ok().and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_string)) {
            Some(content) => Attempt::Ok(content),
            None => Attempt::Fatal { status, body: format!("unexpected response body: {}", truncate(&text)) },
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(400).collect()
}

impl ChatService for Gateway {
    fn complete(&self, provider_id: &str, prompt: &str, purpose: Purpose, sink: &CallLedger) -> Result<ChatExchange, GatewayError> {
        let spec = self.providers.get(provider_id).ok_or_else(|| GatewayError::UnknownProvider(provider_id.to_string()))?;
        let record = |attempt: u32, started: Instant, response: &str, error: Option<String>| {
            let ex = ChatExchange {
                provider_id: provider_id.to_string(),
                purpose,
                request_text: prompt.to_string(),
                response_text: response.to_string(),
                attempts: attempt,
                latency_ms: started.elapsed().as_secs_f64() * 1000.0,
                error,
            };
            self.ledger.append(ex.clone());
            sink.append(ex.clone());
            ex
        };

        if spec.kind == ProviderKind::Mock {
            let started = Instant::now();
            let script = spec.mock.as_ref().ok_or_else(|| GatewayError::Config(format!("{provider_id}: mock provider without script")))?;
            return Ok(record(1, started, script.respond(prompt), None));
        }

        let key = std::env::var(&spec.auth_env_var).unwrap_or_default();
        if key.is_empty() {
            return Err(GatewayError::AuthMissing { provider: provider_id.to_string(), var: spec.auth_env_var.clone() });
        }
        let mut rng = rand::thread_rng();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.wait_for_slot(provider_id);
            let started = Instant::now();
            match self.attempt_http(spec, &key, prompt) {
                Attempt::Ok(text) => return Ok(record(attempt, started, &text, None)),
                Attempt::Fatal { status, body } => {
                    record(attempt, started, "", Some(format!("HTTP {status}")));
                    return Err(GatewayError::NonRetryable { provider: provider_id.to_string(), status, body });
                }
                Attempt::Retryable { status, message } => {
                    let label = status.map(|s| format!("HTTP {s}")).unwrap_or_else(|| message.clone());
                    record(attempt, started, "", Some(label));
                    if attempt > spec.max_retries {
                        return Err(GatewayError::RetriesExhausted {
                            provider: provider_id.to_string(),
                            attempts: attempt,
                            last_status: status,
                            message,
                        });
                    }
                    let delay = spec.backoff.delay(attempt, &mut rng);
                    tracing::debug!(provider = provider_id, attempt, ?delay, "retrying");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
