//! Completion backends: remote chat services, a keyword mock and scripted replay.

mod limit;
mod mock;
pub(crate) use mock::SHIPPED_RULES;
mod remote;
mod replay;
mod retry;
mod store;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompting::RenderedPrompt;

pub use limit::{InFlight, InFlightGuard, TokenBucket};
pub use mock::{MockRule, MockRules};
pub use remote::RemoteChat;
pub use replay::ReplayScript;
pub use retry::{
    classify_repeat, classify_with_retry, Backoff, ClassificationFailure, Classified, ClassifyError,
    RetryPolicy,
};
pub use store::{AuditLog, AuditRecord, ResponseCache};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("credential variable {var} is not set")]
    MissingCredential { var: String },
    #[error("credential rejected by {endpoint} (HTTP {status})")]
    Unauthorized { endpoint: String, status: u16 },
    #[error("transport failed after {tries} tries: {message}")]
    Transport {
        status: Option<u16>,
        tries: u32,
        message: String,
    },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("replay script has no attempt {attempt} for {fingerprint} (post {post_id})")]
    ReplayMissing {
        fingerprint: String,
        post_id: String,
        attempt: u32,
    },
    #[error("remote backends are disabled in offline mode")]
    Offline,
    #[error("mock rules: {0}")]
    Rules(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BackendError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteChat,
    #[default]
    MockRules,
    Replay,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::RemoteChat => "remote-chat",
            BackendKind::MockRules => "mock-rules",
            BackendKind::Replay => "replay",
        }
    }

    /// Whether repeated identical requests may return different text.
    pub fn is_deterministic(self, temperature: f64) -> bool {
        self != BackendKind::RemoteChat || temperature == 0.0
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote-chat" => Ok(Self::RemoteChat),
            "mock-rules" => Ok(Self::MockRules),
            "replay" => Ok(Self::Replay),
            other => Err(BackendError::Config(format!("unknown backend kind {other:?}"))),
        }
    }
}

fn default_max_tokens() -> u32 {
    256
}

fn default_timeout() -> f64 {
    60.0
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    /// Chat-completions URL for `remote-chat`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Opaque model identifier; also used in result labels.
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Sent as a separate system message when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    /// Rule table for `mock-rules`; the shipped table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<PathBuf>,
    /// Script file for `replay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Token-bucket rate; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_second: Option<f64>,
}

impl BackendConfig {
    pub fn mock(model: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::MockRules,
            endpoint: None,
            model: model.into(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            credential_env: None,
            timeout_secs: default_timeout(),
            system_prompt: None,
            rules: None,
            replay: None,
            max_in_flight: default_in_flight(),
            requests_per_second: None,
        }
    }

    pub fn replay(model: impl Into<String>, script: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Replay,
            replay: Some(script.into()),
            ..Self::mock(model)
        }
    }

    pub fn remote(model: impl Into<String>, endpoint: impl Into<String>, credential_env: Option<&str>) -> Self {
        Self {
            kind: BackendKind::RemoteChat,
            endpoint: Some(endpoint.into()),
            credential_env: credential_env.map(str::to_string),
            ..Self::mock(model)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(m.to_string()));
        if self.model.trim().is_empty() {
            return bad("model id is empty");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be finite and non-negative");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if let Some(r) = self.requests_per_second {
            if !(r.is_finite() && r > 0.0) {
                return bad("requests_per_second must be positive");
            }
        }
        match self.kind {
            BackendKind::RemoteChat if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) => {
                bad("remote-chat requires an endpoint")
            }
            BackendKind::Replay if self.replay.is_none() => bad("replay requires a script path"),
            _ => Ok(()),
        }
    }

    /// Whether repeats can differ and so warrant several runs.
    pub fn is_deterministic(&self) -> bool {
        self.kind.is_deterministic(self.temperature)
    }
}

/// Content hash identifying a request: model, temperature, template version
/// and prompt text, each length-prefixed.
pub fn cache_key(cfg: &BackendConfig, prompt: &RenderedPrompt) -> String {
    let mut h = Sha256::new();
    let temperature = format!("{:?}", cfg.temperature);
    for part in [cfg.model.as_str(), temperature.as_str(), prompt.version.as_str(), prompt.text.as_str()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// One call as seen by a backend implementation.
#[derive(Debug, Clone, Copy)]
pub struct Request<'a> {
    pub prompt: &'a RenderedPrompt,
    /// Text actually sent; differs from `prompt.text` on re-asks.
    pub text: &'a str,
    pub fingerprint: &'a str,
    /// 1-based.
    pub attempt: u32,
    /// 0-based repeat index of the run.
    pub repeat: u32,
}

pub trait Completer: Send + Sync {
    fn respond(&self, req: &Request<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    /// Verbatim model output.
    pub raw_text: String,
    pub attempts: u32,
    pub kind: BackendKind,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub cache_hit: bool,
    pub fingerprint: String,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClientOptions {
    /// Refuse to construct remote backends.
    pub offline: bool,
    /// Persistent response cache (remote kind only).
    pub cache_path: Option<PathBuf>,
    pub audit_path: Option<PathBuf>,
    pub backoff: Backoff,
}

/// A configured backend with its cache, audit log and limiters.
pub struct Client {
    cfg: BackendConfig,
    backend: Box<dyn Completer>,
    cache: Option<ResponseCache>,
    audit: Option<AuditLog>,
    bucket: Option<TokenBucket>,
    in_flight: InFlight,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Client {
    /// Validates the config and resolves credentials, scripts and rules.
    /// No network traffic happens here.
    pub fn new(cfg: BackendConfig, opts: ClientOptions) -> Result<Self, BackendError> {
        cfg.validate()?;
        let backend: Box<dyn Completer> = match cfg.kind {
            BackendKind::RemoteChat => {
                if opts.offline {
                    return Err(BackendError::Offline);
                }
                Box::new(RemoteChat::new(&cfg, opts.backoff.clone())?)
            }
            BackendKind::MockRules => Box::new(match &cfg.rules {
                Some(path) => MockRules::load(path)?,
                None => MockRules::shipped(),
            }),
            BackendKind::Replay => {
                let path = cfg.replay.as_deref().expect("validated");
                Box::new(ReplayScript::load(path)?)
            }
        };
        Self::with_backend(cfg, backend, opts)
    }

    /// Wraps a caller-supplied backend implementation.
    pub fn with_backend(
        cfg: BackendConfig,
        backend: Box<dyn Completer>,
        opts: ClientOptions,
    ) -> Result<Self, BackendError> {
        let cache = match (&opts.cache_path, cfg.kind) {
            (Some(path), BackendKind::RemoteChat) => Some(ResponseCache::open(path)?),
            _ => None,
        };
        let audit = opts.audit_path.as_deref().map(AuditLog::open).transpose()?;
        Ok(Self {
            bucket: cfg.requests_per_second.map(|r| TokenBucket::new(r, cfg.max_in_flight.max(1) as f64)),
            in_flight: InFlight::new(cfg.max_in_flight),
            cfg,
            backend,
            cache,
            audit,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn kind(&self) -> BackendKind {
        self.cfg.kind
    }

    pub fn fingerprint(&self, prompt: &RenderedPrompt) -> String {
        cache_key(&self.cfg, prompt)
    }

    /// First attempt of the first repeat.
    pub fn complete(&self, prompt: &RenderedPrompt) -> Result<CompletionResult, BackendError> {
        self.complete_attempt(prompt, &prompt.text, 1, 0)
    }

    /// Sends `text` on behalf of `prompt`. Cache entries and replay lookups
    /// are keyed by the fingerprint of the original prompt, the repeat index
    /// and the attempt number.
    pub fn complete_attempt(
        &self,
        prompt: &RenderedPrompt,
        text: &str,
        attempt: u32,
        repeat: u32,
    ) -> Result<CompletionResult, BackendError> {
        let fingerprint = self.fingerprint(prompt);
        let slot = format!("{fingerprint}/{repeat}/{attempt}");
        let started = Instant::now();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&slot)) {
            self.log(&fingerprint, attempt, "cache-hit", started.elapsed(), true)?;
            return Ok(CompletionResult {
                raw_text: hit,
                attempts: attempt,
                kind: self.cfg.kind,
                latency: started.elapsed(),
                cache_hit: true,
                fingerprint,
            });
        }
        let response = {
            let _slot = self.in_flight.acquire();
            if let Some(bucket) = &self.bucket {
                bucket.acquire();
            }
            self.backend.respond(&Request {
                prompt,
                text,
                fingerprint: &fingerprint,
                attempt,
                repeat,
            })
        };
        let latency = started.elapsed();
        match response {
            Ok(raw_text) => {
                if let Some(cache) = &self.cache {
                    cache.put(&slot, &raw_text)?;
                }
                self.log(&fingerprint, attempt, "ok", latency, false)?;
                Ok(CompletionResult {
                    raw_text,
                    attempts: attempt,
                    kind: self.cfg.kind,
                    latency,
                    cache_hit: false,
                    fingerprint,
                })
            }
            Err(e) => {
                let status = match &e {
                    BackendError::Transport { status: Some(s), .. } => format!("error-{s}"),
                    BackendError::Unauthorized { status, .. } => format!("error-{status}"),
                    _ => "error".to_string(),
                };
                self.log(&fingerprint, attempt, &status, latency, false)?;
                Err(e)
            }
        }
    }

    fn log(&self, fingerprint: &str, attempt: u32, status: &str, latency: Duration, cache_hit: bool) -> Result<(), BackendError> {
        match &self.audit {
            Some(log) => log.append(&AuditRecord {
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                kind: self.cfg.kind,
                model: self.cfg.model.clone(),
                fingerprint: fingerprint.to_string(),
                attempt,
                status: status.to_string(),
                latency_ms: latency.as_millis() as u64,
                cache_hit,
            }),
            None => Ok(()),
        }
    }
}

/// One-off completion with default client options.
pub fn complete(cfg: &BackendConfig, prompt: &RenderedPrompt) -> Result<CompletionResult, BackendError> {
    Client::new(cfg.clone(), ClientOptions::default())?.complete(prompt)
}


#[cfg(test)]
mod tests {
    use super::test_support::v3_prompt;
    use super::*;

    #[test]
    fn cache_key_sensitivity() {
        let cfg = BackendConfig::mock("m");
        let p = v3_prompt("p1", "tranq wounds on my arm");
        assert_eq!(cache_key(&cfg, &p), cache_key(&cfg, &p));
        let mut q = p.clone();
        q.text.push('.');
        assert_ne!(cache_key(&cfg, &p), cache_key(&cfg, &q));
        let warm = BackendConfig {
            temperature: 0.7,
            ..cfg.clone()
        };
        assert_ne!(cache_key(&cfg, &p), cache_key(&warm, &p));
        let other = BackendConfig::mock("m2");
        assert_ne!(cache_key(&cfg, &p), cache_key(&other, &p));
        // Post id is not part of the request content.
        let mut r = p.clone();
        r.post_id = "zz".into();
        assert_eq!(cache_key(&cfg, &p), cache_key(&cfg, &r));
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::mock("m").validate().is_ok());
        let mut c = BackendConfig::mock("m");
        c.temperature = f64::NAN;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::remote("m", "", None);
        assert!(c.validate().is_err());
        c.endpoint = Some("http://localhost:1/v1/chat/completions".into());
        assert!(c.validate().is_ok());
        let c = BackendConfig {
            kind: BackendKind::Replay,
            ..BackendConfig::mock("m")
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_credential_fails_before_network() {
        let var = "THEMATIC_TEST_UNSET_CREDENTIAL";
        std::env::remove_var(var);
        // Port 9 on localhost would refuse; the error must come first regardless.
        let cfg = BackendConfig::remote("m", "http://127.0.0.1:9/v1/chat/completions", Some(var));
        let err = complete(&cfg, &v3_prompt("p", "x")).unwrap_err();
        assert!(matches!(err, BackendError::MissingCredential { ref var } if var == "THEMATIC_TEST_UNSET_CREDENTIAL"));
    }

    #[test]
    fn offline_refuses_remote() {
        let cfg = BackendConfig::remote("m", "http://127.0.0.1:9/", None);
        let opts = ClientOptions {
            offline: true,
            ..Default::default()
        };
        assert!(matches!(Client::new(cfg, opts), Err(BackendError::Offline)));
    }

    #[test]
    fn config_toml_defaults() {
        let cfg: BackendConfig = toml::from_str("kind = \"remote-chat\"\nmodel = \"gpt-4o\"\nendpoint = \"https://example.invalid/v1/chat/completions\"\ncredential_env = \"OPENAI_API_KEY\"\n").unwrap();
        assert_eq!(cfg.temperature, 0.0);
        assert_eq!(cfg.max_in_flight, 4);
        assert!(cfg.is_deterministic());
        assert!(toml::from_str::<BackendConfig>("model = \"m\"\nbogus = 1\n").is_err());
    }
}
