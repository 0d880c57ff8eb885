//! Prompt construction and LLM backends.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::extract::extract_code;
use crate::model::{BugReport, GeneratedTest};

pub const PLACEHOLDER: &str = "{bug_report}";
pub const DEFAULT_INSTRUCTION: &str =
    "write a Java test case for the following bug report: {bug_report}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template must contain `{{bug_report}}` exactly once, found {0}")]
    PlaceholderCount(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    instruction: String,
}

impl PromptTemplate {
    pub fn new(instruction: impl Into<String>) -> Result<Self, TemplateError> {
        let instruction = instruction.into();
        let count = instruction.matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(TemplateError::PlaceholderCount(count));
        }
        Ok(PromptTemplate { instruction })
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            instruction: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("bug report `{0}` has an empty body")]
    EmptyReport(String),
}

/// Substitutes the report text verbatim into the template.
pub fn build_prompt(template: &PromptTemplate, report: &BugReport) -> Result<String, PromptError> {
    if report.body.is_empty() {
        return Err(PromptError::EmptyReport(report.id.clone()));
    }
    Ok(template
        .instruction
        .replacen(PLACEHOLDER, &report.full_text(), 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base · 2^(retry-1).
    pub fn delay(&self, retry: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32 << retry.saturating_sub(1).min(16))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub n_attempts: u32,
    /// `None` leaves the backend default in place.
    pub temperature: Option<f64>,
    pub model_name: String,
    pub max_output_tokens: Option<u32>,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("n_attempts must be at least 1")]
    NoAttempts,
    #[error("temperature must be finite and non-negative")]
    BadTemperature,
}

impl GenerationConfig {
    pub fn new(model_name: impl Into<String>, n_attempts: u32) -> Result<Self, ConfigError> {
        let config = GenerationConfig {
            n_attempts,
            temperature: None,
            model_name: model_name.into(),
            max_output_tokens: None,
            request_timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_attempts == 0 {
            return Err(ConfigError::NoAttempts);
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() || t < 0.0 {
                return Err(ConfigError::BadTemperature);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend rejected credentials (HTTP {0})")]
    Unauthorized(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no scripted output for {bug_id} attempt {attempt}")]
    MissingFixture { bug_id: String, attempt: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One request to a backend.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub bug_id: &'a str,
    pub attempt: u32,
    pub prompt: &'a str,
    pub config: &'a GenerationConfig,
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Returns the raw model output for one independent request.
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GenError>;
}

/// Runs the given attempts against `backend`, one independent request each.
pub fn generate_attempts(
    backend: &dyn LlmBackend,
    bug_id: &str,
    prompt: &str,
    config: &GenerationConfig,
    attempts: &[u32],
) -> Result<Vec<GeneratedTest>, GenError> {
    config.validate()?;
    attempts
        .iter()
        .map(|&attempt| {
            let raw_output = backend.complete(&CompletionRequest {
                bug_id,
                attempt,
                prompt,
                config,
            })?;
            let extracted_code = extract_code(&raw_output);
            Ok(GeneratedTest {
                bug_id: bug_id.to_string(),
                attempt,
                backend_id: backend.id().to_string(),
                raw_output,
                extracted_code,
                created_at: Utc::now(),
            })
        })
        .collect()
}

/// Produces `config.n_attempts` generations numbered 1..=n.
pub fn generate(
    backend: &dyn LlmBackend,
    bug_id: &str,
    prompt: &str,
    config: &GenerationConfig,
) -> Result<Vec<GeneratedTest>, GenError> {
    config.validate()?;
    let attempts: Vec<u32> = (1..=config.n_attempts).collect();
    generate_attempts(backend, bug_id, prompt, config, &attempts)
}

#[derive(Debug, Deserialize)]
struct FixtureLine {
    bug_id: String,
    attempt: u32,
    output: String,
}

/// Replays scripted outputs keyed by `(bug_id, attempt)`.
#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    outputs: HashMap<(String, u32), String>,
}

impl MockBackend {
    pub fn new(id: impl Into<String>) -> Self {
        MockBackend {
            id: id.into(),
            outputs: HashMap::new(),
        }
    }

    pub fn with_output(mut self, bug_id: &str, attempt: u32, output: impl Into<String>) -> Self {
        self.outputs.insert((bug_id.to_string(), attempt), output.into());
        self
    }

    pub fn from_fixture(id: impl Into<String>, path: &Path) -> Result<Self, GenError> {
        let text = fs::read_to_string(path).map_err(|e| {
            GenError::BackendUnavailable(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        let mut backend = MockBackend::new(id);
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureLine = serde_json::from_str(line).map_err(|e| {
                GenError::BackendUnavailable(format!("fixture line {}: {e}", idx + 1))
            })?;
            backend.outputs.insert((entry.bug_id, entry.attempt), entry.output);
        }
        Ok(backend)
    }
}

impl LlmBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GenError> {
        self.outputs
            .get(&(request.bug_id.to_string(), request.attempt))
            .cloned()
            .ok_or_else(|| GenError::MissingFixture {
                bug_id: request.bug_id.to_string(),
                attempt: request.attempt,
            })
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpBackend {
    id: String,
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    /// Earliest instant the next request may be sent; shared across threads.
    not_before: Mutex<Option<Instant>>,
}

impl HttpBackend {
    pub fn new(
        id: impl Into<String>,
        base_url: impl Into<String>,
        api_key: Option<String>,
        request_timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(request_timeout))
            .build()
            .into();
        HttpBackend {
            id: id.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
            not_before: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn wait_for_backoff(&self) {
        let until = *self.not_before.lock().unwrap();
        if let Some(until) = until {
            let now = Instant::now();
            if until > now {
                thread::sleep(until - now);
            }
        }
    }

    fn push_backoff(&self, delay: Duration) {
        let mut guard = self.not_before.lock().unwrap();
        let candidate = Instant::now() + delay;
        if guard.is_none_or(|t| t < candidate) {
            *guard = Some(candidate);
        }
    }

    fn send_once(&self, body: &Value) -> Result<String, GenError> {
        let mut request = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| GenError::BackendUnavailable(e.to_string()))?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GenError::BackendUnavailable(e.to_string()))?;
        match status {
            200..=299 => parse_chat_content(&text),
            401 | 403 => Err(GenError::Unauthorized(status)),
            429 => Err(GenError::RateLimited { retry_after }),
            _ => Err(GenError::BackendUnavailable(format!("HTTP {status}"))),
        }
    }
}

/// Request body for one chat completion; optional fields are omitted when unset.
pub fn chat_request_body(prompt: &str, config: &GenerationConfig) -> Value {
    let mut body = json!({
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
    });
    if let Some(t) = config.temperature {
        body["temperature"] = json!(t);
    }
    if let Some(max) = config.max_output_tokens {
        body["max_tokens"] = json!(max);
    }
    body
}

/// Reads `choices[0].message.content` from a response body.
pub fn parse_chat_content(text: &str) -> Result<String, GenError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| GenError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GenError::MalformedResponse("missing choices[0].message.content".into()))
}

fn retryable(err: &GenError) -> bool {
    matches!(err, GenError::BackendUnavailable(_) | GenError::RateLimited { .. })
}

impl LlmBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GenError> {
        let body = chat_request_body(request.prompt, request.config);
        let policy = request.config.retry;
        let mut retries = 0;
        loop {
            self.wait_for_backoff();
            match self.send_once(&body) {
                Ok(content) => {
                    if retries > 0 {
                        debug!(bug = request.bug_id, attempt = request.attempt, retries, "request succeeded after retries");
                    }
                    return Ok(content);
                }
                Err(err) if retryable(&err) && retries < policy.max_retries => {
                    retries += 1;
                    let mut delay = policy.delay(retries);
                    if let GenError::RateLimited {
                        retry_after: Some(after),
                    } = &err
                    {
                        delay = delay.max(*after);
                        self.push_backoff(delay);
                    }
                    warn!(bug = request.bug_id, attempt = request.attempt, retry = retries, error = %err, "retrying request");
                    thread::sleep(delay);
                }
                Err(err) => return Err(err),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn report(title: &str, body: &str) -> BugReport {
        BugReport::new("Cli-17", "Cli", title, body, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), None)
    }

    #[test]
    fn prompt_is_pure_substitution() {
        let t = PromptTemplate::new("T: {bug_report}").unwrap();
        assert_eq!(build_prompt(&t, &report("a", "b")).unwrap(), "T: a\nb");
    }

    #[test]
    fn default_prompt_prefix() {
        let p = build_prompt(&PromptTemplate::default(), &report("PosixParser bursting", "-azb")).unwrap();
        assert!(p.starts_with("write a Java test case for the following bug report:"));
        assert!(p.ends_with("PosixParser bursting\n-azb"));
    }

    #[test]
    fn report_text_is_not_touched() {
        let body = "  weird   spacing\t\n\n<b>html</b> {bug_report} ";
        let p = build_prompt(&PromptTemplate::new("X {bug_report}").unwrap(), &report("", body)).unwrap();
        assert_eq!(p, format!("X {body}"));
    }

    #[test]
    fn template_placeholder_count() {
        assert_eq!(PromptTemplate::new("none"), Err(TemplateError::PlaceholderCount(0)));
        assert_eq!(
            PromptTemplate::new("{bug_report}{bug_report}"),
            Err(TemplateError::PlaceholderCount(2))
        );
    }

    #[test]
    fn empty_body_rejected() {
        assert_eq!(
            build_prompt(&PromptTemplate::default(), &report("t", "")),
            Err(PromptError::EmptyReport("Cli-17".into()))
        );
    }

    #[test]
    fn mock_generates_numbered_attempts() {
        let mut backend = MockBackend::new("mock");
        for a in 1..=5 {
            backend = backend.with_output("Cli-17", a, format!("```\nint x{a} = 1;\n```"));
        }
        let config = GenerationConfig::new("m", 5).unwrap();
        let out = generate(&backend, "Cli-17", "p", &config).unwrap();
        assert_eq!(out.iter().map(|g| g.attempt).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert_eq!(out[2].extracted_code.as_deref(), Some("int x3 = 1;"));
        let config = GenerationConfig::new("m", 1).unwrap();
        let out = generate(&backend, "Cli-17", "p", &config).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].raw_output, "```\nint x1 = 1;\n```");
    }

    #[test]
    fn mock_missing_entry() {
        let config = GenerationConfig::new("m", 1).unwrap();
        assert!(matches!(
            generate(&MockBackend::new("mock"), "x", "p", &config),
            Err(GenError::MissingFixture { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert_eq!(GenerationConfig::new("m", 0), Err(ConfigError::NoAttempts));
        let mut c = GenerationConfig::new("m", 1).unwrap();
        c.temperature = Some(f64::NAN);
        assert_eq!(c.validate(), Err(ConfigError::BadTemperature));
    }

    #[test]
    fn request_body_omits_unset_fields() {
        let c = GenerationConfig::new("gpt-3.5-turbo", 1).unwrap();
        let body = chat_request_body("hi", &c);
        assert_eq!(
            body,
            json!({"model": "gpt-3.5-turbo", "messages": [{"role": "user", "content": "hi"}]})
        );
        let mut c = c;
        c.temperature = Some(0.2);
        c.max_output_tokens = Some(512);
        let body = chat_request_body("hi", &c);
        assert_eq!(body["temperature"], json!(0.2));
        assert_eq!(body["max_tokens"], json!(512));
    }

    #[test]
    fn response_parsing() {
        assert_eq!(
            parse_chat_content(r#"{"choices":[{"message":{"role":"assistant","content":"ok"}}]}"#).unwrap(),
            "ok"
        );
        assert!(matches!(
            parse_chat_content(r#"{"choices":[]}"#),
            Err(GenError::MalformedResponse(_))
        ));
        assert!(matches!(parse_chat_content("nope"), Err(GenError::MalformedResponse(_))));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_retries: 3,
            backoff_base: Duration::from_millis(10),
        };
        assert_eq!(p.delay(1), Duration::from_millis(10));
        assert_eq!(p.delay(3), Duration::from_millis(40));
    }
}
