use std::time::Duration;

use serde_json::{json, Value};

use super::{Backoff, BackendConfig, BackendError, Completer, Request};

/// Chat-completions client: POSTs `{model, messages, temperature, max_tokens}`
/// and returns the first choice's message text.
pub struct RemoteChat {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    token: Option<String>,
    system: Option<String>,
    backoff: Backoff,
}

impl std::fmt::Debug for RemoteChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteChat")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish_non_exhaustive()
    }
}

impl RemoteChat {
    /// Resolves the credential variable; fails before any network use.
    pub fn new(cfg: &BackendConfig, backoff: Backoff) -> Result<Self, BackendError> {
        let token = match &cfg.credential_env {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.trim().is_empty() => Some(v),
                _ => return Err(BackendError::MissingCredential { var: var.clone() }),
            },
            None => None,
        };
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("remote-chat requires an endpoint".into()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            http,
            endpoint,
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_output_tokens,
            token,
            system: cfg.system_prompt.clone(),
            backoff,
        })
    }

    fn body(&self, text: &str) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &self.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": text}));
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    fn send_once(&self, body: &Value) -> Result<String, Failure> {
        let mut request = self.http.post(&self.endpoint).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| Failure::Transient(None, transport_message(&e)))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(Failure::Auth(status)),
            429 | 500..=599 => return Err(Failure::Transient(Some(status), format!("HTTP {status}"))),
            _ => return Err(Failure::Permanent(Some(status), format!("HTTP {status}"))),
        }
        let value: Value = response
            .json()
            .map_err(|e| Failure::Malformed(format!("response is not JSON: {e}")))?;
        extract_text(&value).ok_or_else(|| Failure::Malformed("no choices[0].message.content".into()))
    }
}

enum Failure {
    Transient(Option<u16>, String),
    Permanent(Option<u16>, String),
    Auth(u16),
    Malformed(String),
}

// reqwest error text can embed the URL; never anything from the headers.
fn transport_message(e: &reqwest::Error) -> String {
    if e.is_timeout() {
        "request timed out".into()
    } else if e.is_connect() {
        "connection failed".into()
    } else {
        e.to_string()
    }
}

fn extract_text(v: &Value) -> Option<String> {
    let choice = v.get("choices")?.get(0)?;
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl Completer for RemoteChat {
    fn respond(&self, req: &Request<'_>) -> Result<String, BackendError> {
        let body = self.body(req.text);
        let mut tries = 0;
        loop {
            tries += 1;
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Auth(status)) => {
                    return Err(BackendError::Unauthorized {
                        endpoint: self.endpoint.clone(),
                        status,
                    })
                }
                Err(Failure::Malformed(m)) => return Err(BackendError::Response(m)),
                Err(Failure::Permanent(status, message)) => {
                    return Err(BackendError::Transport { status, tries, message })
                }
                Err(Failure::Transient(status, message)) => {
                    if tries > self.backoff.max_retries {
                        return Err(BackendError::Transport { status, tries, message });
                    }
                    std::thread::sleep(self.backoff.delay(tries - 1));
                }
            }
        }
    }
}
