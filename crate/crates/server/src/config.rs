//! Server settings. Precedence: command-line flags, then environment
//! variables, then the TOML config file, then built-in defaults.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Args;
use serde::Deserialize;
use tutorgen_core::cache::{open_store, StoreConfig};
use tutorgen_core::pipeline::{GenerationParams, RetryPolicy, TemplateSet};
use tutorgen_core::provider::{
    ApiKey, ChatProvider, HttpProvider, ProviderConfig, ScriptedBehavior, StubProvider,
};

use crate::auth::Principals;
use crate::courses::CourseRepository;
use crate::service::{AppState, ServiceConfig, ServiceParts, DEFAULT_WORKERS};

pub const ENV_API_KEY: &str = "PROVIDER_API_KEY";
pub const ENV_BASE_URL: &str = "PROVIDER_BASE_URL";
pub const ENV_MODEL_ID: &str = "MODEL_ID";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Default, Args)]
pub struct ServeArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Address to listen on [default: 127.0.0.1:8080].
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    /// Directory for courses, the content cache and attempt records.
    /// Everything is kept in memory if unset.
    #[arg(long)]
    pub store_root: Option<PathBuf>,
    /// Directory of prompt templates; built-in templates are used for
    /// missing files.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// TOML file of `[[principal]]` entries (token, role, display_name).
    #[arg(long)]
    pub principals: Option<PathBuf>,
    /// Generations allowed in flight [default: 100].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Use the built-in deterministic provider instead of a remote API.
    #[arg(long)]
    pub stub_provider: bool,
    /// Simulated stub latency in milliseconds.
    #[arg(long)]
    pub stub_latency_ms: Option<u64>,
    /// Include correct answers and feedback in content responses.
    #[arg(long)]
    pub reveal_answers: bool,
    /// Chat completions base URL (env PROVIDER_BASE_URL).
    #[arg(long)]
    pub provider_base_url: Option<String>,
    /// Model id (env MODEL_ID).
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub listen: Option<SocketAddr>,
    pub store_root: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub principals: Option<PathBuf>,
    pub workers: Option<usize>,
    pub reveal_answers: Option<bool>,
    pub stub_provider: Option<bool>,
    pub stub_latency_ms: Option<u64>,
    #[serde(default)]
    pub provider: ProviderFileConfig,
    #[serde(default)]
    pub generation: GenerationFileConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderFileConfig {
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub model_id: Option<String>,
    pub request_timeout_ms: Option<u64>,
    pub max_retries_transient: Option<u32>,
    pub backoff_base_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationFileConfig {
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub max_repairs: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone)]
pub enum ProviderChoice {
    Stub { latency: Duration },
    Http(ProviderConfig),
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub listen: SocketAddr,
    pub store_root: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub principals: PathBuf,
    pub workers: usize,
    pub reveal_answers: bool,
    pub provider: ProviderChoice,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
}

impl Settings {
    /// `env` looks up environment variables; injected for testing.
    pub fn resolve(
        args: &ServeArgs,
        env: impl Fn(&str) -> Option<String>,
        file: FileConfig,
    ) -> anyhow::Result<Self> {
        let env = |name: &str| env(name).filter(|v| !v.trim().is_empty());
        let listen = match args.listen.or(file.listen) {
            Some(a) => a,
            None => DEFAULT_LISTEN.parse().expect("default address parses"),
        };
        let principals = args
            .principals
            .clone()
            .or(file.principals)
            .context("no principals file given; create one with `tutorgen init-principals`")?;

        let mut params = GenerationParams::default();
        if let Some(model) = args
            .model_id
            .clone()
            .or_else(|| env(ENV_MODEL_ID))
            .or(file.provider.model_id)
        {
            params.model_id = model;
        }
        if let Some(t) = file.generation.temperature {
            params.temperature = t;
        }
        if let Some(n) = file.generation.max_output_tokens {
            params.max_output_tokens = n;
        }
        if let Err(e) = params.validate() {
            bail!("invalid generation settings: {e}");
        }
        let mut retry = RetryPolicy::default();
        if let Some(n) = file.generation.max_repairs {
            retry.max_repairs = n;
        }

        let stub = args.stub_provider || file.stub_provider.unwrap_or(false);
        let provider = if stub {
            ProviderChoice::Stub {
                latency: Duration::from_millis(
                    args.stub_latency_ms.or(file.stub_latency_ms).unwrap_or(0),
                ),
            }
        } else {
            let base_url = args
                .provider_base_url
                .clone()
                .or_else(|| env(ENV_BASE_URL))
                .or(file.provider.base_url)
                .with_context(|| {
                    format!("no provider base URL; set {ENV_BASE_URL} or use --stub-provider")
                })?;
            let api_key = env(ENV_API_KEY)
                .or(file.provider.api_key)
                .with_context(|| {
                    format!("no provider API key; set {ENV_API_KEY} or use --stub-provider")
                })?;
            let mut config =
                ProviderConfig::new(base_url, ApiKey::new(api_key), params.model_id.clone());
            if let Some(ms) = file.provider.request_timeout_ms {
                config.request_timeout = Duration::from_millis(ms);
            }
            if let Some(n) = file.provider.max_retries_transient {
                config.max_retries_transient = n;
            }
            if let Some(ms) = file.provider.backoff_base_ms {
                config.backoff_base = Duration::from_millis(ms);
            }
            ProviderChoice::Http(config)
        };

        let workers = args.workers.or(file.workers).unwrap_or(DEFAULT_WORKERS);
        if workers == 0 {
            bail!("workers must be at least 1");
        }
        Ok(Self {
            listen,
            store_root: args.store_root.clone().or(file.store_root),
            templates: args.templates.clone().or(file.templates),
            principals,
            workers,
            reveal_answers: args.reveal_answers || file.reveal_answers.unwrap_or(false),
            provider,
            params,
            retry,
        })
    }

    pub fn from_args(args: &ServeArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Self::resolve(args, |k| std::env::var(k).ok(), file)
    }

    pub fn build_state(&self) -> anyhow::Result<AppState> {
        let principals = Principals::load(&self.principals)?;
        let templates = match &self.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::defaults(),
        };
        let provider: Arc<dyn ChatProvider> = match &self.provider {
            ProviderChoice::Stub { latency } => Arc::new(StubProvider::new(
                ScriptedBehavior::template_with_latency(*latency),
            )),
            ProviderChoice::Http(config) => Arc::new(HttpProvider::new(config.clone())?),
        };
        let layout = self.store_root.as_deref().map(StoreLayout::new);
        let (store_config, courses) = match &layout {
            Some(l) => (
                StoreConfig::File {
                    root: l.cache.clone(),
                },
                CourseRepository::open(&l.courses)?,
            ),
            None => (StoreConfig::Memory, CourseRepository::in_memory()),
        };
        AppState::new(ServiceParts {
            config: ServiceConfig {
                workers: self.workers,
                reveal_answers: self.reveal_answers,
                params: self.params.clone(),
                retry: self.retry,
            },
            principals,
            courses,
            store: open_store(&store_config)?,
            provider,
            templates,
            state_dir: layout.map(|l| l.state),
        })
    }
}

/// Subdirectories of the store root.
#[derive(Debug, Clone)]
pub struct StoreLayout {
    pub courses: PathBuf,
    pub cache: PathBuf,
    pub state: PathBuf,
}

impl StoreLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            courses: root.join("courses"),
            cache: root.join("cache"),
            state: root.join("state"),
        }
    }
}
