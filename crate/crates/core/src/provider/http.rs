use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{backoff_delay, ChatProvider, CompletionResult, ProviderConfig, ProviderError, TokenUsage};
use crate::pipeline::{PromptBundle, ResponseFormat};

/// Waits between retries. Swapped out in tests to record the backoff
/// sequence without sleeping.
#[async_trait]
pub trait Sleeper: Send + Sync {
    async fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct TokioSleeper;

#[async_trait]
impl Sleeper for TokioSleeper {
    async fn sleep(&self, duration: Duration) {
        tokio::time::sleep(duration).await;
    }
}

pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::Client,
    sleeper: Arc<dyn Sleeper>,
}

enum Failure {
    Transient {
        status: Option<StatusCode>,
        retry_after: Option<Duration>,
    },
    Fatal(ProviderError),
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

const MAX_ERROR_BODY: usize = 300;

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Self::with_sleeper(config, Arc::new(TokioSleeper))
    }

    pub fn with_sleeper(
        config: ProviderConfig,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self, ProviderError> {
        if config.request_timeout.is_zero() {
            return Err(ProviderError::Transport("request timeout must be positive".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            client,
            sleeper,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// The JSON body sent for `bundle`.
    pub fn request_body(bundle: &PromptBundle) -> serde_json::Value {
        let response_format = match bundle.params.response_format {
            ResponseFormat::JsonObject => json!({"type": "json_object"}),
        };
        json!({
            "model": bundle.params.model_id,
            "messages": bundle.messages,
            "temperature": bundle.params.temperature,
            "max_tokens": bundle.params.max_output_tokens,
            "response_format": response_format,
        })
    }

    async fn send_once(&self, bundle: &PromptBundle) -> Result<CompletionResult, Failure> {
        let started = Instant::now();
        let response = self
            .client
            .post(self.config.completions_url())
            .bearer_auth(self.config.api_key.expose())
            .json(&Self::request_body(bundle))
            .send()
            .await;
        let response = match response {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Err(Failure::Transient {
                    status: None,
                    retry_after: None,
                })
            }
            Err(e) => {
                return Err(Failure::Fatal(ProviderError::Transport(
                    self.config.api_key.redact(&e.to_string()),
                )))
            }
        };

        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(Failure::Transient {
                status: Some(status),
                retry_after: retry_after(response.headers()),
            });
        }
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(Failure::Fatal(ProviderError::Auth {
                status: status.as_u16(),
            }));
        }
        let body = match response.text().await {
            Ok(body) => body,
            Err(e) if e.is_timeout() => {
                return Err(Failure::Transient {
                    status: None,
                    retry_after: None,
                })
            }
            Err(e) => {
                return Err(Failure::Fatal(ProviderError::Transport(
                    self.config.api_key.redact(&e.to_string()),
                )))
            }
        };
        if !status.is_success() {
            let mut message = self.config.api_key.redact(&body);
            if message.len() > MAX_ERROR_BODY {
                let cut = (0..=MAX_ERROR_BODY)
                    .rev()
                    .find(|&i| message.is_char_boundary(i))
                    .unwrap_or(0);
                message.truncate(cut);
            }
            return Err(Failure::Fatal(ProviderError::Rejected {
                status: status.as_u16(),
                message,
            }));
        }

        let wire: WireResponse = serde_json::from_str(&body).map_err(|e| {
            Failure::Fatal(ProviderError::MalformedUpstreamResponse(e.to_string()))
        })?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                Failure::Fatal(ProviderError::MalformedUpstreamResponse(
                    "response has no message content".into(),
                ))
            })?;
        Ok(CompletionResult {
            text,
            model_id: wire.model.unwrap_or_else(|| bundle.params.model_id.clone()),
            latency: started.elapsed(),
            token_usage: wire.usage.map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    let value = headers.get(RETRY_AFTER)?.to_str().ok()?.trim();
    let secs: f64 = value.parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

#[async_trait]
impl ChatProvider for HttpProvider {
    async fn complete_chat(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.send_once(bundle).await {
                Ok(result) => return Ok(result),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient {
                    status,
                    retry_after,
                }) => {
                    if attempts > self.config.max_retries_transient {
                        return Err(match status {
                            None => ProviderError::Timeout { attempts },
                            Some(StatusCode::TOO_MANY_REQUESTS) => {
                                ProviderError::RateLimited { attempts }
                            }
                            Some(s) => ProviderError::Upstream {
                                status: s.as_u16(),
                                attempts,
                            },
                        });
                    }
                    let delay = {
                        let mut rng = rand::rng();
                        backoff_delay(self.config.backoff_base, attempts - 1, retry_after, &mut rng)
                    };
                    tracing::warn!(
                        attempt = attempts,
                        status = status.map(|s| s.as_u16()),
                        delay_ms = delay.as_millis() as u64,
                        "transient provider failure, backing off"
                    );
                    self.sleeper.sleep(delay).await;
                }
            }
        }
    }
}
