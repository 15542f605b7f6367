use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, Client, CompletionResult};
use crate::codebook::LabelVector;
use crate::parsing::{FailureReason, ParseFailure, ParseOutcome};
use crate::prompting::RenderedPrompt;

/// Exponential delay schedule for transport retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backoff {
    pub initial_ms: u64,
    pub multiplier: f64,
    pub cap_ms: u64,
    /// Retries after the first transport failure.
    pub max_retries: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial_ms: 500,
            multiplier: 2.0,
            cap_ms: 30_000,
            max_retries: 4,
        }
    }
}

impl Backoff {
    /// Delay before retry `i` (0-based).
    pub fn delay(&self, i: u32) -> Duration {
        let ms = self.initial_ms as f64 * self.multiplier.max(1.0).powi(i as i32);
        Duration::from_millis(ms.min(self.cap_ms as f64) as u64)
    }
}

fn default_max_attempts() -> u32 {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total model calls allowed per prompt, including the first.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Ask again with a format reminder when a response does not parse.
    #[serde(default = "default_true")]
    pub re_ask: bool,
    #[serde(default)]
    pub backoff: Backoff,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: default_max_attempts(),
            re_ask: true,
            backoff: Backoff::default(),
        }
    }
}

impl RetryPolicy {
    pub fn with_attempts(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be at least 1".into()));
        }
        if !(self.backoff.multiplier.is_finite() && self.backoff.multiplier >= 1.0) {
            return Err(BackendError::Config("backoff multiplier must be at least 1".into()));
        }
        Ok(())
    }

    /// Calls permitted per prompt once `re_ask` is taken into account.
    pub fn effective_attempts(&self) -> u32 {
        if self.re_ask {
            self.max_attempts
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classified {
    pub labels: LabelVector,
    /// The accepted response; `attempts` is its 1-based attempt number.
    pub result: CompletionResult,
    /// Every response received, in order, the accepted one last.
    pub raw_attempts: Vec<String>,
}

/// A prompt whose responses never parsed within the attempt budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationFailure {
    pub post_id: String,
    pub fingerprint: String,
    pub raw_attempts: Vec<String>,
    /// Parse failure of the last attempt.
    pub failure: ParseFailure,
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("post {} unparseable after {} attempts: {}", .0.post_id, .0.raw_attempts.len(), .0.failure)]
    Failed(Box<ClassificationFailure>),
}

/// [`classify_repeat`] for repeat 0.
pub fn classify_with_retry(
    client: &Client,
    policy: &RetryPolicy,
    prompt: &RenderedPrompt,
    parser: impl Fn(&str) -> ParseOutcome,
) -> Result<Classified, ClassifyError> {
    classify_repeat(client, policy, prompt, 0, parser)
}

/// Completes `prompt` and parses the reply. Unparseable replies are re-asked
/// as fresh calls with the target's one-line format reminder appended, up to
/// the policy's attempt budget.
pub fn classify_repeat(
    client: &Client,
    policy: &RetryPolicy,
    prompt: &RenderedPrompt,
    repeat: u32,
    parser: impl Fn(&str) -> ParseOutcome,
) -> Result<Classified, ClassifyError> {
    policy.validate()?;
    let budget = policy.effective_attempts();
    let reask_text = format!("{}\n{}\n", prompt.text.trim_end(), prompt.target.reminder());
    let mut raw_attempts = Vec::new();
    let mut attempt = 1;
    loop {
        let text = if attempt == 1 { prompt.text.as_str() } else { reask_text.as_str() };
        let result = client.complete_attempt(prompt, text, attempt, repeat)?;
        raw_attempts.push(result.raw_text.clone());
        let target = prompt.target.alphabet();
        let outcome = parser(&result.raw_text).and_then(|labels| {
            if labels.covers(&target) {
                Ok(labels)
            } else {
                let missing = target.iter().copied().filter(|c| labels.get(*c).is_none()).collect();
                Err(ParseFailure::new(FailureReason::MissingCode, missing, "parser result not total"))
            }
        });
        match outcome {
            Ok(labels) => {
                return Ok(Classified {
                    labels,
                    result,
                    raw_attempts,
                })
            }
            Err(failure) if attempt >= budget => {
                return Err(ClassifyError::Failed(Box::new(ClassificationFailure {
                    post_id: prompt.post_id.clone(),
                    fingerprint: result.fingerprint,
                    raw_attempts,
                    failure,
                })))
            }
            Err(_) => attempt += 1,
        }
    }
}
