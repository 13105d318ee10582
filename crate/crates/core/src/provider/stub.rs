use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::json;

use super::{ChatProvider, CompletionResult, ProviderError, DEFAULT_MAX_RETRIES_TRANSIENT};
use crate::pipeline::{PromptBundle, Role, ANALOGY_THEME_MARKER, SECTION_IDS_MARKER};

pub const STUB_MODEL_ID: &str = "stub-model";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubAction {
    /// Return this text verbatim.
    Text(String),
    /// Fabricate schema-valid output from the markers in the prompt.
    Template,
    /// Return text that contains no JSON object.
    Malformed,
    /// Simulated transient failures; retried like the HTTP client would.
    Timeout,
    RateLimited,
    ServerError,
    /// Simulated 401.
    AuthError,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub latency: Duration,
    pub action: StubAction,
}

impl ScriptStep {
    pub fn new(action: StubAction) -> Self {
        Self {
            latency: Duration::ZERO,
            action,
        }
    }

    pub fn delayed(latency: Duration, action: StubAction) -> Self {
        Self { latency, action }
    }
}

/// Wire-level request `n` plays step `n`; once the script runs out the last
/// step repeats. An empty script behaves as `[Template]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedBehavior {
    pub steps: Vec<ScriptStep>,
    pub max_retries_transient: u32,
}

impl ScriptedBehavior {
    pub fn sequence(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            max_retries_transient: DEFAULT_MAX_RETRIES_TRANSIENT,
        }
    }

    pub fn template() -> Self {
        Self::sequence(vec![ScriptStep::new(StubAction::Template)])
    }

    pub fn template_with_latency(latency: Duration) -> Self {
        Self::sequence(vec![ScriptStep::delayed(latency, StubAction::Template)])
    }

    pub fn actions(actions: impl IntoIterator<Item = StubAction>) -> Self {
        Self::sequence(actions.into_iter().map(ScriptStep::new).collect())
    }
}

impl Default for ScriptedBehavior {
    fn default() -> Self {
        Self::template()
    }
}

pub struct StubProvider {
    script: ScriptedBehavior,
    calls: AtomicUsize,
    requests: Mutex<Vec<PromptBundle>>,
}

impl StubProvider {
    pub fn new(script: ScriptedBehavior) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn template() -> Self {
        Self::new(ScriptedBehavior::template())
    }

    /// Wire-level requests made so far, including simulated retries.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every bundle received, one entry per wire-level request.
    pub fn requests(&self) -> Vec<PromptBundle> {
        self.requests.lock().expect("stub request log").clone()
    }

    fn step(&self, n: usize) -> ScriptStep {
        self.script
            .steps
            .get(n)
            .or(self.script.steps.last())
            .cloned()
            .unwrap_or_else(|| ScriptStep::new(StubAction::Template))
    }
}

#[async_trait]
impl ChatProvider for StubProvider {
    async fn complete_chat(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            self.requests
                .lock()
                .expect("stub request log")
                .push(bundle.clone());
            let step = self.step(n);
            let started = Instant::now();
            if !step.latency.is_zero() {
                tokio::time::sleep(step.latency).await;
            }
            let transient = match step.action {
                StubAction::Text(text) => return Ok(completion(text, started)),
                StubAction::Template => return Ok(completion(fabricate(bundle), started)),
                StubAction::Malformed => {
                    return Ok(completion(
                        "Sure! Here is the personalized material you asked for.".into(),
                        started,
                    ))
                }
                StubAction::AuthError => return Err(ProviderError::Auth { status: 401 }),
                StubAction::Timeout => ProviderError::Timeout { attempts },
                StubAction::RateLimited => ProviderError::RateLimited { attempts },
                StubAction::ServerError => ProviderError::Upstream {
                    status: 500,
                    attempts,
                },
            };
            if attempts > self.script.max_retries_transient {
                return Err(transient);
            }
        }
    }
}

fn completion(text: String, started: Instant) -> CompletionResult {
    CompletionResult {
        text,
        model_id: STUB_MODEL_ID.into(),
        latency: started.elapsed(),
        token_usage: None,
    }
}

fn marker_value<'a>(bundle: &'a PromptBundle, marker: &str) -> Option<&'a str> {
    bundle
        .messages
        .iter()
        .filter(|m| m.role == Role::User)
        .flat_map(|m| m.content.lines())
        .find_map(|line| line.strip_prefix(marker))
        .map(str::trim)
}

fn persona_theme(bundle: &PromptBundle) -> String {
    marker_value(bundle, "Interests: ")
        .or_else(|| marker_value(bundle, "Career goals: "))
        .unwrap_or("everyday life")
        .to_string()
}

/// Deterministic schema-valid output for the built-in prompt templates.
pub fn fabricate(bundle: &PromptBundle) -> String {
    if let Some(ids) = marker_value(bundle, SECTION_IDS_MARKER) {
        let ids: Vec<String> = serde_json::from_str(ids).unwrap_or_default();
        let theme = persona_theme(bundle);
        let sections: Vec<_> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                json!({
                    "section_id": id,
                    "personalized_title": format!("Part {}: seen through {theme}", i + 1),
                    "personalized_summary": format!("This part uses {theme} to make the ideas concrete."),
                    "analogy_theme": format!("{theme}, example {}", i + 1),
                })
            })
            .collect();
        return json!({ "sections": sections }).to_string();
    }

    let theme = marker_value(bundle, ANALOGY_THEME_MARKER).unwrap_or("a familiar example");
    let body = format!(
        "## A personalized lesson\n\nImagine {theme}. We will use it as the running example for this lesson."
    );
    json!({
        "body": body,
        "practices": [{
            "stem": format!("In the running example ({theme}), which quantity is the one we change on purpose?"),
            "choices": [
                {"text": "The outcome we measure", "feedback": "Try again. The outcome is what responds to the change; that is the dependent variable."},
                {"text": "The factor we change", "feedback": "Correct. The factor we change is the independent variable."},
                {"text": "Neither of them", "feedback": "Try again. One of the two quantities is the one we control."},
            ],
            "correct_index": 1,
        }],
    })
    .to_string()
}
