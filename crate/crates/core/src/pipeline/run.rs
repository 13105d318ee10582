//! Provider calls with bounded repair turns.

use chrono::Utc;

use super::prompt::{ChatMessage, PromptBundle};
use super::PipelineError;
use crate::model::GenerationMeta;
use crate::provider::ChatProvider;

pub const DEFAULT_MAX_REPAIRS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Repair turns allowed after the first call.
    pub max_repairs: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_repairs: DEFAULT_MAX_REPAIRS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generation<T> {
    pub value: T,
    /// Raw text of the accepted response.
    pub raw: String,
    pub meta: GenerationMeta,
    pub provider_calls: u32,
}

fn repair_message(reason: &str) -> String {
    format!(
        "Your previous answer was invalid because {reason}. \
         Emit only the JSON object, with no text before or after it."
    )
}

/// Sends `bundle`, parses the reply with `parse`, and on a repairable parse
/// failure appends the invalid answer plus a corrective user turn and asks
/// again, at most `policy.max_repairs` times. Provider errors are returned
/// unchanged. The returned meta carries the hash of the original bundle.
pub async fn run_generation<T, F>(
    bundle: &PromptBundle,
    provider: &dyn ChatProvider,
    policy: &RetryPolicy,
    parse: F,
) -> Result<Generation<T>, PipelineError>
where
    F: Fn(&str) -> Result<T, PipelineError>,
{
    let mut current = bundle.clone();
    let mut calls = 0u32;
    loop {
        calls += 1;
        let completion = provider.complete_chat(&current).await?;
        match parse(&completion.text) {
            Ok(value) => {
                return Ok(Generation {
                    value,
                    meta: GenerationMeta {
                        model_id: completion.model_id,
                        prompt_hash: bundle.prompt_hash.clone(),
                        created_at: Utc::now(),
                        provider_latency: completion.latency,
                    },
                    raw: completion.text,
                    provider_calls: calls,
                })
            }
            Err(err) if err.is_repairable() => {
                if calls > policy.max_repairs {
                    return Err(PipelineError::RepairExhausted {
                        attempts: calls,
                        last_error: err.to_string(),
                    });
                }
                tracing::debug!(attempt = calls, error = %err, "requesting repair turn");
                let mut messages = current.messages.clone();
                messages.push(ChatMessage::assistant(completion.text));
                messages.push(ChatMessage::user(repair_message(&err.to_string())));
                current = PromptBundle {
                    messages,
                    params: bundle.params.clone(),
                    prompt_hash: bundle.prompt_hash.clone(),
                };
            }
            Err(err) => return Err(err),
        }
    }
}
