//! Chat-completion backends.
//!
//! [`HttpProvider`] speaks the common `/chat/completions` wire format;
//! [`StubProvider`] is a scripted stand-in used by tests and offline demos.

mod http;
mod stub;

use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::PromptBundle;

pub use http::{HttpProvider, Sleeper, TokioSleeper};
pub use stub::{fabricate, ScriptStep, ScriptedBehavior, StubAction, StubProvider, STUB_MODEL_ID};

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete_chat(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    pub model_id: String,
    pub latency: Duration,
    pub token_usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider rejected the credentials (HTTP {status})")]
    Auth { status: u16 },
    #[error("provider rate limit still hit after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider returned HTTP {status} after {attempts} attempts")]
    Upstream { status: u16, attempts: u32 },
    #[error("provider rejected the request (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("provider request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("malformed provider response: {0}")]
    MalformedUpstreamResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// An API key. Its `Debug` and `Display` output is redacted and it has no
/// `Serialize` impl, so it cannot leak through logs or config dumps.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Replaces every occurrence of the key in `text`.
    pub fn redact(&self, text: &str) -> String {
        if self.0.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.0, "[REDACTED]")
        }
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey([REDACTED])")
    }
}

impl fmt::Display for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[REDACTED]")
    }
}

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(180);
pub const DEFAULT_MAX_RETRIES_TRANSIENT: u32 = 3;
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const MAX_BACKOFF: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Serialize)]
pub struct ProviderConfig {
    pub base_url: String,
    #[serde(skip)]
    pub api_key: ApiKey,
    pub model_id: String,
    #[serde(with = "crate::model::duration_ms", rename = "request_timeout_ms")]
    pub request_timeout: Duration,
    pub max_retries_transient: u32,
    #[serde(with = "crate::model::duration_ms", rename = "backoff_base_ms")]
    pub backoff_base: Duration,
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, api_key: ApiKey, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key,
            model_id: model_id.into(),
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
            max_retries_transient: DEFAULT_MAX_RETRIES_TRANSIENT,
            backoff_base: DEFAULT_BACKOFF_BASE,
        }
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Delay before retry number `attempt` (zero-based). A server-provided
/// retry-after wins; otherwise full jitter over `base * 2^attempt`, capped
/// at [`MAX_BACKOFF`].
pub fn backoff_delay(
    base: Duration,
    attempt: u32,
    retry_after: Option<Duration>,
    rng: &mut impl Rng,
) -> Duration {
    if let Some(hint) = retry_after {
        return hint.min(MAX_BACKOFF);
    }
    let ceiling = base
        .saturating_mul(2u32.saturating_pow(attempt.min(16)))
        .min(MAX_BACKOFF);
    let nanos = ceiling.as_nanos() as u64;
    if nanos == 0 {
        return Duration::ZERO;
    }
    Duration::from_nanos(rng.random_range(0..=nanos))
}
