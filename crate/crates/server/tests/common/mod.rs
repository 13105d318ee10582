#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use rand::rngs::StdRng;
use rand::Rng;
use reqwest::Method;
use serde_json::{json, Value};
use tutorgen_core::cache::{ContentStore, MemoryStore};
use tutorgen_core::model::{ChoiceOption, Course, PracticeExercise, Section, Subsection};
use tutorgen_core::pipeline::{ChatMessage, GenerationParams, PromptBundle, TemplateSet};
use tutorgen_core::provider::{fabricate, ApiKey, ChatProvider, HttpProvider, ProviderConfig};
use tutorgen_core::Digest;
use tutorgen_server::auth::{generate_token, PrincipalSeed, Principals, Role};
use tutorgen_server::courses::CourseRepository;
use tutorgen_server::service::{ServiceConfig, ServiceParts};
use tutorgen_server::{router, AppState};

pub const SAMPLE_COURSE: &str = include_str!("../../../core/data/linear_regression.json");
pub const SAMPLE_ID: &str = "linear-regression";
pub const SENTINEL_KEY: &str = "sk-SENTINEL-7d2f0c4e9b1a";

// ---- log capture ----

#[derive(Clone, Default)]
pub struct LogBuffer(Arc<Mutex<Vec<u8>>>);

impl LogBuffer {
    pub fn contents(&self) -> String {
        String::from_utf8_lossy(&self.0.lock().unwrap()).into_owned()
    }
}

impl Write for LogBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Routes every tracing event in this test process, at all levels, into one
/// shared buffer.
pub fn captured_logs() -> LogBuffer {
    static LOGS: OnceLock<LogBuffer> = OnceLock::new();
    LOGS.get_or_init(|| {
        let buffer = LogBuffer::default();
        let writer = buffer.clone();
        tracing_subscriber::fmt()
            .with_max_level(tracing::Level::TRACE)
            .with_ansi(false)
            .with_writer(move || writer.clone())
            .init();
        buffer
    })
    .clone()
}

// ---- mock chat completions upstream ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpstreamMode {
    /// Answer with schema-valid output derived from the prompt.
    Template,
    /// Reject with 400 and echo the caller's authorization header.
    EchoKey,
    /// 401.
    Unauthorized,
}

#[derive(Clone)]
pub struct MockUpstream {
    pub base_url: String,
    pub calls: Arc<AtomicUsize>,
    pub prompts: Arc<Mutex<Vec<Vec<ChatMessage>>>>,
    pub mode: Arc<Mutex<UpstreamMode>>,
    pub latency: Duration,
}

#[derive(serde::Deserialize)]
struct WireRequest {
    messages: Vec<ChatMessage>,
}

async fn upstream(State(up): State<MockUpstream>, headers: HeaderMap, body: String) -> Response {
    up.calls.fetch_add(1, Ordering::SeqCst);
    if !up.latency.is_zero() {
        tokio::time::sleep(up.latency).await;
    }
    let Ok(request) = serde_json::from_str::<WireRequest>(&body) else {
        return (StatusCode::BAD_REQUEST, "bad body").into_response();
    };
    up.prompts.lock().unwrap().push(request.messages.clone());
    let mode = *up.mode.lock().unwrap();
    match mode {
        UpstreamMode::Unauthorized => (StatusCode::UNAUTHORIZED, "invalid key").into_response(),
        UpstreamMode::EchoKey => {
            let auth = headers
                .get("authorization")
                .and_then(|v| v.to_str().ok())
                .unwrap_or_default()
                .to_string();
            (StatusCode::BAD_REQUEST, format!("rejected request with {auth}")).into_response()
        }
        UpstreamMode::Template => {
            let bundle = PromptBundle {
                messages: request.messages,
                params: GenerationParams::default(),
                prompt_hash: Digest::of("upstream"),
            };
            Json(json!({
                "model": "mock-model",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": fabricate(&bundle)}}],
                "usage": {"prompt_tokens": 1, "completion_tokens": 1, "total_tokens": 2}
            }))
            .into_response()
        }
    }
}

impl MockUpstream {
    pub async fn start(latency: Duration) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let up = MockUpstream {
            base_url: format!("http://{addr}/v1"),
            calls: Arc::default(),
            prompts: Arc::default(),
            mode: Arc::new(Mutex::new(UpstreamMode::Template)),
            latency,
        };
        let app = Router::new()
            .route("/v1/chat/completions", post(upstream))
            .with_state(up.clone());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        up
    }

    /// HTTP provider pointed here, authenticating with the sentinel key.
    pub fn provider(&self) -> Arc<dyn ChatProvider> {
        let mut config = ProviderConfig::new(
            self.base_url.clone(),
            ApiKey::new(SENTINEL_KEY),
            "gpt-4",
        );
        config.backoff_base = Duration::from_millis(1);
        config.max_retries_transient = 1;
        Arc::new(HttpProvider::new(config).unwrap())
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn set_mode(&self, mode: UpstreamMode) {
        *self.mode.lock().unwrap() = mode;
    }
}

// ---- service under test ----

pub struct Options {
    pub provider: Arc<dyn ChatProvider>,
    pub workers: usize,
    pub reveal_answers: bool,
    pub store_root: Option<PathBuf>,
    /// Reuse these principals, e.g. across a restart.
    pub seeds: Option<Vec<PrincipalSeed>>,
}

impl Options {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            workers: 100,
            reveal_answers: false,
            store_root: None,
            seeds: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Resp {
    pub status: u16,
    pub headers: HeaderMap,
    pub text: String,
}

impl Resp {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text)
            .unwrap_or_else(|e| panic!("response is not JSON ({e}): {}", self.text))
    }

    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or_default().to_string()
    }
}

pub struct Server {
    pub base: String,
    pub state: AppState,
    pub client: reqwest::Client,
    pub seeds: Vec<PrincipalSeed>,
    pub teacher: String,
    pub teacher2: String,
    pub student: String,
    pub student2: String,
    /// Every response seen, rendered as status, headers and body.
    pub captures: Arc<Mutex<Vec<String>>>,
}

pub enum Body {
    None,
    Json(Value),
    Raw(&'static str, Vec<u8>),
}

fn seeds() -> Vec<PrincipalSeed> {
    [
        ("Teacher", Role::Teacher),
        ("Other Teacher", Role::Teacher),
        ("Student", Role::Student),
        ("Other Student", Role::Student),
    ]
    .into_iter()
    .map(|(name, role)| PrincipalSeed {
        token: generate_token(),
        role,
        display_name: name.into(),
    })
    .collect()
}

pub fn build_state(options: &Options, seeds: &[PrincipalSeed]) -> AppState {
    let (store, courses, state_dir): (Arc<dyn ContentStore>, _, _) = match &options.store_root {
        Some(root) => {
            let layout = tutorgen_server::config::StoreLayout::new(root);
            (
                Arc::new(tutorgen_core::cache::FileStore::open(&layout.cache).unwrap()),
                CourseRepository::open(&layout.courses).unwrap(),
                Some(layout.state),
            )
        }
        None => (
            Arc::new(MemoryStore::new()),
            CourseRepository::in_memory(),
            None,
        ),
    };
    AppState::new(ServiceParts {
        config: ServiceConfig {
            workers: options.workers,
            reveal_answers: options.reveal_answers,
            ..ServiceConfig::default()
        },
        principals: Principals::new(seeds.to_vec()).unwrap(),
        courses,
        store,
        provider: options.provider.clone(),
        templates: TemplateSet::defaults(),
        state_dir,
    })
    .unwrap()
}

impl Server {
    pub async fn start(options: Options) -> Self {
        let seeds = options.seeds.clone().unwrap_or_else(seeds);
        let state = build_state(&options, &seeds);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(state.clone());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        let client = reqwest::Client::builder()
            .pool_max_idle_per_host(256)
            .build()
            .unwrap();
        Self {
            base: format!("http://{addr}"),
            state,
            client,
            teacher: seeds[0].token.clone(),
            teacher2: seeds[1].token.clone(),
            student: seeds[2].token.clone(),
            student2: seeds[3].token.clone(),
            seeds,
            captures: Arc::default(),
        }
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Body) -> Resp {
        let mut req = self
            .client
            .request(method.clone(), format!("{}/api/v1{path}", self.base));
        if let Some(token) = token {
            req = req.bearer_auth(token);
        }
        req = match body {
            Body::None => req,
            Body::Json(v) => req.json(&v),
            Body::Raw(content_type, bytes) => req.header("content-type", content_type).body(bytes),
        };
        let response = req.send().await.unwrap();
        let status = response.status().as_u16();
        let headers = response.headers().clone();
        let text = response.text().await.unwrap();
        let mut capture = format!("{method} {path} -> {status}\n");
        for (name, value) in &headers {
            capture.push_str(&format!("{name}: {}\n", value.to_str().unwrap_or_default()));
        }
        capture.push_str(&text);
        self.captures.lock().unwrap().push(capture);
        Resp {
            status,
            headers,
            text,
        }
    }

    pub async fn get(&self, path: &str, token: &str) -> Resp {
        self.call(Method::GET, path, Some(token), Body::None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> Resp {
        self.call(Method::POST, path, Some(token), Body::Json(body)).await
    }

    pub async fn post_empty(&self, path: &str, token: &str) -> Resp {
        self.call(Method::POST, path, Some(token), Body::None).await
    }

    pub async fn patch(&self, path: &str, token: &str, body: Value) -> Resp {
        self.call(Method::PATCH, path, Some(token), Body::Json(body)).await
    }

    pub async fn upload(&self, token: &str, content_type: &'static str, bytes: &[u8]) -> Resp {
        self.call(
            Method::POST,
            "/courses",
            Some(token),
            Body::Raw(content_type, bytes.to_vec()),
        )
        .await
    }

    /// Uploads and publishes the sample course as the first teacher.
    pub async fn publish_sample(&self) {
        let r = self
            .upload(&self.teacher, "application/json", SAMPLE_COURSE.as_bytes())
            .await;
        assert_eq!(r.status, 201, "{}", r.text);
        let r = self
            .post_empty(&format!("/courses/{SAMPLE_ID}/publish"), &self.teacher)
            .await;
        assert_eq!(r.status, 200, "{}", r.text);
    }

    pub async fn personalize(&self, token: &str, course: &str, interests: &str) -> Resp {
        self.post(
            &format!("/courses/{course}/personalize"),
            token,
            json!({"interests": interests, "career_goals": ""}),
        )
        .await
    }

    /// Polls until the job is terminal.
    pub async fn wait_job(&self, token: &str, job_id: &str) -> Value {
        for _ in 0..2000 {
            let job = self.get(&format!("/jobs/{job_id}"), token).await.json();
            if matches!(job["state"].as_str(), Some("succeeded" | "failed")) {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("job {job_id} did not finish");
    }

    /// Personalize and wait; returns the curriculum id.
    pub async fn curriculum(&self, token: &str, course: &str, interests: &str) -> String {
        let r = self.personalize(token, course, interests).await;
        assert!(matches!(r.status, 200 | 202), "{}", r.text);
        let job = self.wait_job(token, r.json()["id"].as_str().unwrap()).await;
        assert_eq!(job["state"], "succeeded", "{job}");
        job["result_ref"].as_str().unwrap().to_string()
    }

    /// Request content and wait; returns the content id.
    pub async fn content(&self, token: &str, curriculum: &str, section: &str, sub: &str) -> String {
        let r = self
            .post(
                &format!("/curricula/{curriculum}/content"),
                token,
                json!({"section_id": section, "subsection_id": sub}),
            )
            .await;
        assert!(matches!(r.status, 200 | 202), "{}", r.text);
        let job = self.wait_job(token, r.json()["id"].as_str().unwrap()).await;
        assert_eq!(job["state"], "succeeded", "{job}");
        job["result_ref"].as_str().unwrap().to_string()
    }

    pub fn captured(&self) -> Vec<String> {
        self.captures.lock().unwrap().clone()
    }
}

// ---- random corpora ----

const ALPHABET: &[char] = &[
    'a', 'b', 'c', 'x', 'y', 'z', 'A', 'Q', 'é', 'ß', '0', '7', ' ', ' ', ',', ';', '"', '\\',
    '\'', '\n', '\r', '{', '}', '|',
];

/// Non-blank text that stresses CSV quoting, the goal delimiter and
/// template braces.
pub fn text(rng: &mut StdRng) -> String {
    let len = rng.random_range(0..24);
    let mut s = String::from(['w', 'K', 'é'][rng.random_range(0..3)]);
    for _ in 0..len {
        s.push(ALPHABET[rng.random_range(0..ALPHABET.len())]);
    }
    s
}

pub fn exercise(rng: &mut StdRng, id: String) -> PracticeExercise {
    let n = rng.random_range(2..=6);
    PracticeExercise {
        id,
        stem: text(rng),
        choices: (0..n)
            .map(|_| ChoiceOption {
                text: text(rng),
                feedback: text(rng),
            })
            .collect(),
        correct_index: rng.random_range(0..n),
    }
}

/// A publishable course.
pub fn random_course(rng: &mut StdRng, id: &str) -> Course {
    let sections = (0..rng.random_range(1..5))
        .map(|si| Section {
            id: format!("sec-{si}"),
            title: text(rng),
            summary: if rng.random_bool(0.3) {
                String::new()
            } else {
                text(rng)
            },
            scope: text(rng),
            learning_goals: (0..rng.random_range(1..4)).map(|_| text(rng)).collect(),
            subsections: (0..rng.random_range(1..4))
                .map(|ui| Subsection {
                    id: format!("sub-{si}-{ui}"),
                    title: text(rng),
                    body: text(rng),
                    example_exercises: (0..rng.random_range(0..3))
                        .map(|ei| exercise(rng, format!("ex-{si}-{ui}-{ei}")))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let description = text(rng);
    Course::new(id, text(rng), description, sections)
}
