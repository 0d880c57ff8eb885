//! TOML configuration for backends, prompt, harness and project adapters.
//!
//! ```toml
//! [backend]
//! kind = "http"              # or "mock"
//! id = "chatgpt"
//! base_url = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! model = "gpt-3.5-turbo"
//!
//! [prompt]
//! n_attempts = 5
//!
//! [harness]
//! work_root = "work"
//! parallelism = 4
//!
//! [adapters.Cli]
//! kind = "command"
//! checkout_buggy = "d4j-checkout Cli $VERSION $WORK_DIR"
//! # ...
//!
//! [adapters.Lang]
//! kind = "simulated"
//! script = "lang_script.jsonl"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::genclient::{
    GenerationConfig, HttpBackend, LlmBackend, MockBackend, PromptTemplate, RetryPolicy, DEFAULT_INSTRUCTION,
};
use crate::harness::{CommandAdapter, ProjectAdapter, ProjectAdapterConfig, SimulatedAdapter};

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub harness: HarnessConfig,
    #[serde(default)]
    pub adapters: BTreeMap<String, AdapterConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub id: String,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Mock only: JSONL of canned outputs.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
}

fn default_model() -> String {
    "gpt-3.5-turbo".into()
}

fn default_request_timeout() -> u64 {
    120
}

fn default_max_retries() -> u32 {
    RetryPolicy::default().max_retries
}

fn default_backoff_ms() -> u64 {
    RetryPolicy::default().backoff_base.as_millis() as u64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    #[serde(default = "default_instruction")]
    pub instruction: String,
    #[serde(default = "default_attempts")]
    pub n_attempts: u32,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            instruction: default_instruction(),
            n_attempts: default_attempts(),
        }
    }
}

fn default_instruction() -> String {
    DEFAULT_INSTRUCTION.into()
}

fn default_attempts() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default = "default_work_root")]
    pub work_root: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            work_root: default_work_root(),
            parallelism: default_parallelism(),
        }
    }
}

fn default_work_root() -> PathBuf {
    "work".into()
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterConfig {
    Command(Box<ProjectAdapterConfig>),
    Simulated { script: PathBuf },
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base).map_err(|message| ConfigFileError::Invalid {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Config, String> {
        let mut config: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        config.base_dir = base_dir.to_path_buf();
        if config.harness.parallelism == 0 {
            return Err("harness.parallelism must be at least 1".into());
        }
        PromptTemplate::new(config.prompt.instruction.clone()).map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn template(&self) -> PromptTemplate {
        PromptTemplate::new(self.prompt.instruction.clone()).expect("checked on load")
    }

    pub fn work_root(&self) -> PathBuf {
        self.resolve(&self.harness.work_root)
    }

    pub fn generation_config(&self, n_attempts: Option<u32>) -> Result<GenerationConfig, String> {
        let backend = self.backend.as_ref().ok_or("missing [backend] section")?;
        let mut config = GenerationConfig::new(backend.model.clone(), n_attempts.unwrap_or(self.prompt.n_attempts))
            .map_err(|e| e.to_string())?;
        config.temperature = backend.temperature;
        config.max_output_tokens = backend.max_output_tokens;
        config.request_timeout = Duration::from_secs(backend.request_timeout_secs);
        config.retry = RetryPolicy {
            max_retries: backend.max_retries,
            backoff_base: Duration::from_millis(backend.backoff_base_ms),
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    /// Builds the configured backend; the API key is read from the environment.
    pub fn backend(&self) -> Result<Box<dyn LlmBackend>, String> {
        let b = self.backend.as_ref().ok_or("missing [backend] section")?;
        match b.kind {
            BackendKind::Mock => {
                let fixture = b.fixture.as_ref().ok_or("mock backend needs `fixture`")?;
                let mock = MockBackend::from_fixture(b.id.clone(), &self.resolve(fixture)).map_err(|e| e.to_string())?;
                Ok(Box::new(mock))
            }
            BackendKind::Http => {
                let url = b.base_url.as_ref().ok_or("http backend needs `base_url`")?;
                let key = match &b.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
                    None => None,
                };
                Ok(Box::new(HttpBackend::new(
                    b.id.clone(),
                    url.clone(),
                    key,
                    Duration::from_secs(b.request_timeout_secs),
                )))
            }
        }
    }

    /// Instantiates every configured adapter keyed by project.
    pub fn adapters(&self) -> Result<HashMap<String, Arc<dyn ProjectAdapter>>, String> {
        let mut out: HashMap<String, Arc<dyn ProjectAdapter>> = HashMap::new();
        for (project, spec) in &self.adapters {
            let adapter: Arc<dyn ProjectAdapter> = match spec {
                AdapterConfig::Command(c) => {
                    Arc::new(CommandAdapter::new((**c).clone()).map_err(|e| format!("adapter {project}: {e}"))?)
                }
                AdapterConfig::Simulated { script } => Arc::new(
                    SimulatedAdapter::from_jsonl(&self.resolve(script)).map_err(|e| format!("adapter {project}: {e}"))?,
                ),
            };
            out.insert(project.clone(), adapter);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = r#"
[backend]
kind = "http"
id = "chatgpt"
base_url = "http://localhost:1"
model = "m"
temperature = 0.2

[prompt]
n_attempts = 5

[harness]
parallelism = 4

[adapters.Cli]
kind = "command"
checkout_buggy = "a"
checkout_fixed = "b"
compile = "c"
run_tests = "d"
test_dir = "src/test"
results_path = "results.json"
timeout_secs = 30

[adapters.Lang]
kind = "simulated"
script = "s.jsonl"
"#;
        let c = Config::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.harness.parallelism, 4);
        assert_eq!(c.generation_config(None).unwrap().n_attempts, 5);
        assert_eq!(c.generation_config(Some(2)).unwrap().temperature, Some(0.2));
        match &c.adapters["Cli"] {
            AdapterConfig::Command(a) => assert_eq!(a.timeout_secs, 30),
            other => panic!("{other:?}"),
        }
        match &c.adapters["Lang"] {
            AdapterConfig::Simulated { script } => assert_eq!(c.resolve(script), Path::new("/cfg/s.jsonl")),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.work_root(), Path::new("/cfg/work"));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Config::parse("[harness]\nparallelism = 0\n", Path::new(".")).is_err());
        assert!(Config::parse("[prompt]\ninstruction = \"no placeholder\"\n", Path::new(".")).is_err());
        assert!(Config::parse("[bogus]\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_api_key_env() {
        let text = "[backend]\nkind = \"http\"\nid = \"x\"\nbase_url = \"http://h\"\napi_key_env = \"BUGREPRO_TEST_UNSET_KEY\"\n";
        let c = Config::parse(text, Path::new(".")).unwrap();
        let err = c.backend().err().expect("missing key is an error");
        assert!(err.contains("BUGREPRO_TEST_UNSET_KEY"));
    }
}
