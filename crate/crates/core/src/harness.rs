//! Executes assembled tests against the buggy and fixed program versions.
//!
//! A [`ProjectAdapter`] performs the individual steps (checkout, compile,
//! run). [`CommandAdapter`] shells out to user-supplied commands;
//! [`SimulatedAdapter`] replays scripted outcomes so the whole pipeline can
//! run without any external toolchain.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::extract::{assemble_test_class, NamingPolicy};
use crate::ingest::Dataset;
use crate::model::{
    verdict_transition, ExecutionEvent, GeneratedTest, Stage, Step, StepTiming, Verdict, Version,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
const EXCERPT_BYTES: u64 = 2048;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("adapter misconfigured: {0}")]
    AdapterMisconfigured(String),
    #[error("results unreadable at {path}: {reason}")]
    ResultsUnreadable { path: String, reason: String },
    #[error("checkout of the {0} version failed: {1}")]
    CheckoutFailed(&'static str, String),
    #[error("patch could not be applied: {0}")]
    PatchApplyFailed(String),
    #[error("io error in {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Commands and layout for one external project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectAdapterConfig {
    pub checkout_buggy: String,
    pub checkout_fixed: String,
    pub compile: String,
    pub run_tests: String,
    #[serde(default)]
    pub coverage: Option<String>,
    /// Applies `$PATCH_FILE` to the checked-out buggy version.
    #[serde(default)]
    pub apply_patch: Option<String>,
    pub test_dir: PathBuf,
    pub results_path: PathBuf,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_extension")]
    pub test_file_extension: String,
    /// Superclass for generated tests that arrive as bare methods.
    #[serde(default)]
    pub test_superclass: Option<String>,
}

fn default_timeout_secs() -> u64 {
    DEFAULT_TIMEOUT.as_secs()
}

fn default_extension() -> String {
    "java".into()
}

impl ProjectAdapterConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let commands = [
            ("checkout_buggy", &self.checkout_buggy),
            ("checkout_fixed", &self.checkout_fixed),
            ("compile", &self.compile),
            ("run_tests", &self.run_tests),
        ];
        for (name, cmd) in commands {
            if cmd.trim().is_empty() {
                return Err(HarnessError::AdapterMisconfigured(format!("`{name}` is empty")));
            }
        }
        if self.timeout_secs == 0 {
            return Err(HarnessError::AdapterMisconfigured("timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchRef {
    pub patch_id: String,
    pub patch_file: Option<PathBuf>,
}

/// Everything a step needs to know about the evaluation it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub work_dir: PathBuf,
    pub test_id: String,
    pub version: Version,
    pub patch: Option<PatchRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandStatus {
    Exited(i32),
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub status: CommandStatus,
    pub elapsed: Duration,
    /// Tail of the combined stdout/stderr.
    pub output: String,
}

impl StepOutcome {
    pub fn success(&self) -> bool {
        self.status == CommandStatus::Exited(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ErrorEntry {
    Id(String),
    Detailed { id: String, #[serde(default)] message: String },
}

impl ErrorEntry {
    pub fn id(&self) -> &str {
        match self {
            ErrorEntry::Id(id) | ErrorEntry::Detailed { id, .. } => id,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            ErrorEntry::Id(_) => "",
            ErrorEntry::Detailed { message, .. } => message,
        }
    }
}

/// Machine-readable outcome written by `run_tests`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResults {
    #[serde(default)]
    pub failing: Vec<String>,
    #[serde(default)]
    pub passing: Vec<String>,
    #[serde(default)]
    pub errors: Vec<ErrorEntry>,
}

/// What the results say about the injected test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InjectedStatus {
    Passed,
    Failed(String),
    /// Reported as an error that did not originate in the test body.
    InfraError(String),
    NotReported,
}

fn belongs_to(id: &str, test_id: &str) -> bool {
    match id.strip_prefix(test_id) {
        Some("") => true,
        Some(rest) => rest.starts_with(['#', '.', ':', '(', ' ']),
        None => false,
    }
}

const ASSERTION_MARKERS: [&str; 4] = [
    "AssertionError",
    "AssertionFailedError",
    "ComparisonFailure",
    "assertion",
];

/// An error counts as a test failure only if it was raised inside the test body.
pub fn raised_in_test_body(message: &str, test_id: &str) -> bool {
    if message.contains("initializationError") {
        return false;
    }
    if ASSERTION_MARKERS.iter().any(|m| message.contains(m)) {
        return true;
    }
    let frame = format!("at {test_id}.");
    (message.contains("Exception") || message.contains("Error")) && message.contains(&frame)
}

impl TestResults {
    pub fn status_of(&self, test_id: &str) -> InjectedStatus {
        if let Some(id) = self.failing.iter().find(|id| belongs_to(id, test_id)) {
            return InjectedStatus::Failed(format!("{id} failed"));
        }
        let errors: Vec<&ErrorEntry> = self
            .errors
            .iter()
            .filter(|e| belongs_to(e.id(), test_id))
            .collect();
        if let Some(e) = errors.iter().find(|e| raised_in_test_body(e.message(), test_id)) {
            return InjectedStatus::Failed(excerpt(e.message()));
        }
        if let Some(e) = errors.first() {
            return InjectedStatus::InfraError(format!("{}: {}", e.id(), excerpt(e.message())));
        }
        if self.passing.iter().any(|id| belongs_to(id, test_id)) {
            return InjectedStatus::Passed;
        }
        InjectedStatus::NotReported
    }
}

fn excerpt(text: &str) -> String {
    const MAX: usize = 400;
    let t = text.trim();
    if t.chars().count() <= MAX {
        t.to_string()
    } else {
        t.chars().take(MAX).collect::<String>() + "…"
    }
}

pub trait ProjectAdapter: Send + Sync {
    /// Runs a checkout, compile, test or patch step.
    fn run_step(&self, ctx: &RunContext, step: Step) -> Result<StepOutcome, HarnessError>;

    fn write_test(&self, ctx: &RunContext, source: &str) -> Result<(), HarnessError>;

    fn read_results(&self, ctx: &RunContext) -> Result<TestResults, HarnessError>;

    fn test_superclass(&self) -> Option<&str> {
        None
    }
}

/// Adapter backed by shell commands run in a per-evaluation directory.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    config: ProjectAdapterConfig,
}

impl CommandAdapter {
    pub fn new(config: ProjectAdapterConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        Ok(CommandAdapter { config })
    }

    pub fn test_file(&self, ctx: &RunContext) -> PathBuf {
        ctx.work_dir
            .join(&self.config.test_dir)
            .join(format!("{}.{}", ctx.test_id, self.config.test_file_extension))
    }

    fn results_file(&self, ctx: &RunContext) -> PathBuf {
        ctx.work_dir.join(&self.config.results_path)
    }

    fn command_for(&self, ctx: &RunContext, step: Step) -> Result<&str, HarnessError> {
        Ok(match step {
            Step::Checkout => match ctx.version {
                Version::Buggy => &self.config.checkout_buggy,
                Version::Fixed => &self.config.checkout_fixed,
            },
            Step::Compile => &self.config.compile,
            Step::RunTests => &self.config.run_tests,
            Step::ApplyPatch => self.config.apply_patch.as_deref().ok_or_else(|| {
                HarnessError::AdapterMisconfigured("no `apply_patch` command configured".into())
            })?,
            Step::WriteTest => unreachable!("writing the test is not a command"),
        })
    }
}

fn step_name(step: Step) -> &'static str {
    match step {
        Step::Checkout => "checkout",
        Step::WriteTest => "write_test",
        Step::Compile => "compile",
        Step::RunTests => "run_tests",
        Step::ApplyPatch => "apply_patch",
    }
}

fn read_tail(file: &mut File) -> String {
    let len = file.metadata().map(|m| m.len()).unwrap_or(0);
    let _ = file.seek(SeekFrom::Start(len.saturating_sub(EXCERPT_BYTES)));
    let mut buf = Vec::new();
    let _ = file.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

/// Runs `sh -c command` with a hard timeout; the whole process group is
/// killed when the timeout expires.
pub fn run_command(
    command: &str,
    cwd: &Path,
    env: &[(&str, String)],
    timeout: Duration,
    log_path: &Path,
) -> Result<StepOutcome, HarnessError> {
    if let Some(parent) = log_path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let log = File::options()
        .create(true)
        .truncate(true)
        .read(true)
        .write(true)
        .open(log_path)
        .map_err(io_err(log_path))?;
    let log_err = log.try_clone().map_err(io_err(log_path))?;
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::from(log))
        .stderr(Stdio::from(log_err))
        .process_group(0);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|e| {
        HarnessError::AdapterMisconfigured(format!("cannot spawn `{command}`: {e}"))
    })?;
    let waited = child.wait_timeout(timeout).map_err(io_err(cwd))?;
    let status = match waited {
        Some(status) => CommandStatus::Exited(status.code().unwrap_or(-1)),
        None => {
            // SAFETY: kill(2) on the child's own process group
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            let _ = child.wait();
            CommandStatus::TimedOut
        }
    };
    let elapsed = started.elapsed();
    let mut log = File::open(log_path).map_err(io_err(log_path))?;
    Ok(StepOutcome {
        status,
        elapsed,
        output: read_tail(&mut log),
    })
}

impl ProjectAdapter for CommandAdapter {
    fn run_step(&self, ctx: &RunContext, step: Step) -> Result<StepOutcome, HarnessError> {
        let command = self.command_for(ctx, step)?;
        fs::create_dir_all(&ctx.work_dir).map_err(io_err(&ctx.work_dir))?;
        if step == Step::RunTests {
            let results = self.results_file(ctx);
            if results.exists() {
                fs::remove_file(&results).map_err(io_err(&results))?;
            }
        }
        let mut env = vec![
            ("TEST_FILE", self.test_file(ctx).display().to_string()),
            ("TEST_ID", ctx.test_id.clone()),
            ("VERSION", ctx.version.as_str().to_string()),
            ("WORK_DIR", ctx.work_dir.display().to_string()),
            ("RESULTS_FILE", self.results_file(ctx).display().to_string()),
        ];
        if let Some(patch) = &ctx.patch {
            env.push(("PATCH_ID", patch.patch_id.clone()));
            if let Some(file) = &patch.patch_file {
                env.push(("PATCH_FILE", file.display().to_string()));
            }
        }
        let log = ctx
            .work_dir
            .join(".bugrepro")
            .join(format!("{}-{}.log", ctx.version.as_str(), step_name(step)));
        let outcome = run_command(command, &ctx.work_dir, &env, self.config.timeout(), &log)?;
        if outcome.status == CommandStatus::Exited(127) {
            return Err(HarnessError::AdapterMisconfigured(format!(
                "command not found: `{command}`: {}",
                excerpt(&outcome.output)
            )));
        }
        Ok(outcome)
    }

    fn write_test(&self, ctx: &RunContext, source: &str) -> Result<(), HarnessError> {
        let path = self.test_file(ctx);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, source).map_err(io_err(&path))
    }

    fn read_results(&self, ctx: &RunContext) -> Result<TestResults, HarnessError> {
        let path = self.results_file(ctx);
        let unreadable = |reason: String| HarnessError::ResultsUnreadable {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(&path).map_err(|e| unreadable(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))
    }

    fn test_superclass(&self) -> Option<&str> {
        self.config.test_superclass.as_deref()
    }
}

/// Scripted result of running the injected test on one version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimOutcome {
    Pass,
    Fail,
    /// An exception thrown from the test body, reported as an error.
    Error,
    /// An error outside the test body (setup, class loading).
    InfraError,
    CompileFail,
    Timeout,
    /// The version cannot be checked out.
    Unavailable,
    /// The runner never mentions the injected test.
    Missing,
    /// Only meaningful for patches: the patch does not apply.
    ApplyFail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimScript {
    pub test_id: String,
    pub buggy: SimOutcome,
    #[serde(default = "default_fixed")]
    pub fixed: SimOutcome,
    #[serde(default)]
    pub patched: BTreeMap<String, SimOutcome>,
}

fn default_fixed() -> SimOutcome {
    SimOutcome::Unavailable
}

/// Adapter that replays outcomes keyed by test id.
#[derive(Debug, Clone, Default)]
pub struct SimulatedAdapter {
    scripts: HashMap<String, SimScript>,
}

impl SimulatedAdapter {
    pub fn new(scripts: impl IntoIterator<Item = SimScript>) -> Self {
        SimulatedAdapter {
            scripts: scripts.into_iter().map(|s| (s.test_id.clone(), s)).collect(),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut scripts = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let script: SimScript = serde_json::from_str(line).map_err(|e| {
                HarnessError::AdapterMisconfigured(format!(
                    "{} line {}: {e}",
                    path.display(),
                    idx + 1
                ))
            })?;
            scripts.push(script);
        }
        Ok(SimulatedAdapter::new(scripts))
    }

    fn outcome(&self, ctx: &RunContext) -> Result<SimOutcome, HarnessError> {
        let script = self.scripts.get(&ctx.test_id).ok_or_else(|| {
            HarnessError::AdapterMisconfigured(format!("no scripted outcome for `{}`", ctx.test_id))
        })?;
        Ok(match (&ctx.patch, ctx.version) {
            (Some(patch), _) => script
                .patched
                .get(&patch.patch_id)
                .copied()
                .unwrap_or(SimOutcome::ApplyFail),
            (None, Version::Buggy) => script.buggy,
            (None, Version::Fixed) => script.fixed,
        })
    }
}

fn simulated(status: CommandStatus, output: &str) -> StepOutcome {
    StepOutcome {
        status,
        elapsed: Duration::ZERO,
        output: output.to_string(),
    }
}

impl ProjectAdapter for SimulatedAdapter {
    fn run_step(&self, ctx: &RunContext, step: Step) -> Result<StepOutcome, HarnessError> {
        let outcome = self.outcome(ctx)?;
        let ok = simulated(CommandStatus::Exited(0), "");
        Ok(match (step, outcome) {
            (Step::Checkout, SimOutcome::Unavailable) if ctx.patch.is_none() => {
                simulated(CommandStatus::Exited(1), "no such version")
            }
            (Step::ApplyPatch, SimOutcome::ApplyFail) => {
                simulated(CommandStatus::Exited(1), "patch does not apply")
            }
            (Step::Compile, SimOutcome::CompileFail) => {
                simulated(CommandStatus::Exited(1), "error: cannot find symbol")
            }
            (Step::RunTests, SimOutcome::Timeout) => simulated(CommandStatus::TimedOut, ""),
            (Step::RunTests, SimOutcome::Fail | SimOutcome::Error | SimOutcome::InfraError) => {
                simulated(CommandStatus::Exited(1), "")
            }
            _ => ok,
        })
    }

    fn write_test(&self, _ctx: &RunContext, _source: &str) -> Result<(), HarnessError> {
        Ok(())
    }

    fn read_results(&self, ctx: &RunContext) -> Result<TestResults, HarnessError> {
        let id = format!("{}#test", ctx.test_id);
        let mut results = TestResults::default();
        match self.outcome(ctx)? {
            SimOutcome::Pass => results.passing.push(id),
            SimOutcome::Fail => results.failing.push(id),
            SimOutcome::Error => results.errors.push(ErrorEntry::Detailed {
                message: format!(
                    "java.lang.NullPointerException\n\tat {}.test({}.java:7)",
                    ctx.test_id, ctx.test_id
                ),
                id,
            }),
            SimOutcome::InfraError => results.errors.push(ErrorEntry::Detailed {
                message: "java.lang.NoClassDefFoundError: org/junit/Test".into(),
                id,
            }),
            _ => {}
        }
        Ok(results)
    }
}

/// One assembled test ready to be evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub bug_id: String,
    pub backend_id: String,
    pub attempt: u32,
    pub test_id: String,
    pub source: String,
}

enum PhaseResult {
    Unavailable(String),
    CompileFailed(String),
    TimedOut(&'static str),
    Ran(InjectedStatus),
}

struct Recorder {
    timings: Vec<StepTiming>,
}

impl Recorder {
    fn step(
        &mut self,
        adapter: &dyn ProjectAdapter,
        ctx: &RunContext,
        step: Step,
    ) -> Result<StepOutcome, HarnessError> {
        let outcome = adapter.run_step(ctx, step)?;
        self.timings.push(StepTiming {
            version: ctx.version,
            step,
            millis: outcome.elapsed.as_millis() as u64,
        });
        Ok(outcome)
    }
}

/// checkout → write test → compile → run tests, for one version.
fn run_phase(
    adapter: &dyn ProjectAdapter,
    ctx: &RunContext,
    source: &str,
    rec: &mut Recorder,
) -> Result<PhaseResult, HarnessError> {
    let checkout = rec.step(adapter, ctx, Step::Checkout)?;
    match checkout.status {
        CommandStatus::TimedOut => return Ok(PhaseResult::TimedOut("checkout")),
        CommandStatus::Exited(0) => {}
        CommandStatus::Exited(_) => return Ok(PhaseResult::Unavailable(excerpt(&checkout.output))),
    }
    adapter.write_test(ctx, source)?;
    compile_and_run(adapter, ctx, rec)
}

fn compile_and_run(
    adapter: &dyn ProjectAdapter,
    ctx: &RunContext,
    rec: &mut Recorder,
) -> Result<PhaseResult, HarnessError> {
    let compile = rec.step(adapter, ctx, Step::Compile)?;
    match compile.status {
        CommandStatus::TimedOut => return Ok(PhaseResult::TimedOut("compile")),
        CommandStatus::Exited(0) => {}
        CommandStatus::Exited(_) => return Ok(PhaseResult::CompileFailed(excerpt(&compile.output))),
    }
    let run = rec.step(adapter, ctx, Step::RunTests)?;
    match run.status {
        CommandStatus::TimedOut => Ok(PhaseResult::TimedOut("run_tests")),
        CommandStatus::Exited(0) => Ok(PhaseResult::Ran(adapter.read_results(ctx)?.status_of(&ctx.test_id))),
        CommandStatus::Exited(_) => match adapter.read_results(ctx) {
            Ok(results) => Ok(PhaseResult::Ran(results.status_of(&ctx.test_id))),
            Err(_) => Ok(PhaseResult::Ran(InjectedStatus::InfraError(format!(
                "test run crashed without results: {}",
                excerpt(&run.output)
            )))),
        },
    }
}

/// Classifies one test by driving it through the buggy and, if it
/// reproduced the bug, the fixed version.
pub fn evaluate_test(
    adapter: &dyn ProjectAdapter,
    work_dir: &Path,
    test: &TestCase,
) -> Result<Verdict, HarnessError> {
    let mut rec = Recorder { timings: Vec::new() };
    let mut ctx = RunContext {
        work_dir: work_dir.to_path_buf(),
        test_id: test.test_id.clone(),
        version: Version::Buggy,
        patch: None,
    };
    let (event, mut detail) = match run_phase(adapter, &ctx, &test.source, &mut rec)? {
        PhaseResult::Unavailable(out) => {
            return Err(HarnessError::CheckoutFailed("buggy", out));
        }
        PhaseResult::CompileFailed(out) => (ExecutionEvent::CompileFailed, out),
        PhaseResult::TimedOut(step) => (ExecutionEvent::Timeout, format!("timeout during {step}")),
        PhaseResult::Ran(InjectedStatus::Passed) => (ExecutionEvent::RunOnBuggyPassed, String::new()),
        PhaseResult::Ran(InjectedStatus::Failed(d)) => (ExecutionEvent::RunOnBuggyFailed, d),
        PhaseResult::Ran(InjectedStatus::InfraError(d)) => {
            (ExecutionEvent::CompileFailed, format!("infrastructure error: {d}"))
        }
        PhaseResult::Ran(InjectedStatus::NotReported) => (
            ExecutionEvent::CompileFailed,
            "injected test not reported by the runner".to_string(),
        ),
    };
    let mut stage = verdict_transition(Stage::Pending, event).expect("legal buggy-phase event");

    if stage == Stage::Valid {
        ctx.version = Version::Fixed;
        let (event, fixed_detail) = match run_phase(adapter, &ctx, &test.source, &mut rec)? {
            PhaseResult::Unavailable(out) => (
                ExecutionEvent::FixedUnavailable,
                format!("fixed version unavailable: {out}"),
            ),
            PhaseResult::TimedOut(step) => {
                (ExecutionEvent::Timeout, format!("timeout during {step} on fixed version"))
            }
            PhaseResult::CompileFailed(out) => (
                ExecutionEvent::RunOnFixedFailed,
                format!("does not compile on fixed version: {out}"),
            ),
            PhaseResult::Ran(InjectedStatus::Passed) => (ExecutionEvent::RunOnFixedPassed, String::new()),
            PhaseResult::Ran(InjectedStatus::Failed(d)) => {
                (ExecutionEvent::RunOnFixedFailed, format!("fails on fixed version: {d}"))
            }
            PhaseResult::Ran(InjectedStatus::InfraError(d)) => (
                ExecutionEvent::RunOnFixedFailed,
                format!("infrastructure error on fixed version: {d}"),
            ),
            PhaseResult::Ran(InjectedStatus::NotReported) => (
                ExecutionEvent::RunOnFixedFailed,
                "injected test not reported on fixed version".to_string(),
            ),
        };
        stage = verdict_transition(stage, event).expect("legal fixed-phase event");
        if !fixed_detail.is_empty() {
            detail = fixed_detail;
        }
    }

    Ok(Verdict {
        bug_id: test.bug_id.clone(),
        backend_id: test.backend_id.clone(),
        attempt: test.attempt,
        stage,
        detail,
        durations: rec.timings,
    })
}

/// Resolves a project name to its adapter.
pub trait AdapterResolver: Sync {
    fn resolve(&self, project: &str) -> Option<Arc<dyn ProjectAdapter>>;
}

impl AdapterResolver for HashMap<String, Arc<dyn ProjectAdapter>> {
    fn resolve(&self, project: &str) -> Option<Arc<dyn ProjectAdapter>> {
        self.get(project).cloned()
    }
}

fn error_verdict(gen: &GeneratedTest, detail: impl Into<String>) -> Verdict {
    Verdict::new(&gen.bug_id, &gen.backend_id, gen.attempt, Stage::NotExecutable)
        .with_detail(format!("error: {}", detail.into()))
}

/// Evaluates one generation end to end; never fails.
pub fn evaluate_generation(
    dataset: &Dataset,
    gen: &GeneratedTest,
    resolver: &dyn AdapterResolver,
    work_root: &Path,
) -> Verdict {
    let Some(report) = dataset.get(&gen.bug_id) else {
        return error_verdict(gen, format!("bug `{}` is not in the dataset", gen.bug_id));
    };
    let Some(code) = gen.extracted_code.as_deref().filter(|c| !c.trim().is_empty()) else {
        let stage = verdict_transition(Stage::Pending, ExecutionEvent::ExtractionFailed)
            .expect("legal extraction event");
        return Verdict::new(&gen.bug_id, &gen.backend_id, gen.attempt, stage)
            .with_detail("no code found in model output");
    };
    let Some(adapter) = resolver.resolve(&report.project) else {
        return error_verdict(gen, format!("no adapter configured for project `{}`", report.project));
    };
    let naming = NamingPolicy::for_generation(&gen.bug_id, gen.attempt)
        .with_extends(adapter.test_superclass().map(str::to_string));
    let source = match assemble_test_class(code, &naming) {
        Ok(s) => s,
        Err(e) => {
            return Verdict::new(&gen.bug_id, &gen.backend_id, gen.attempt, Stage::NotExecutable)
                .with_detail(e.to_string())
        }
    };
    let work_dir = work_root.join(format!("{}__{}", naming.class_name, sanitize_path(&gen.backend_id)));
    let test = TestCase {
        bug_id: gen.bug_id.clone(),
        backend_id: gen.backend_id.clone(),
        attempt: gen.attempt,
        test_id: naming.class_name.clone(),
        source,
    };
    match evaluate_test(adapter.as_ref(), &work_dir, &test) {
        Ok(v) => v,
        Err(e) => error_verdict(gen, e.to_string()),
    }
}

fn sanitize_path(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Evaluates all generations with up to `parallelism` concurrent workers.
/// Output order matches input order.
pub fn evaluate_batch(
    dataset: &Dataset,
    generations: &[GeneratedTest],
    resolver: &dyn AdapterResolver,
    work_root: &Path,
    parallelism: usize,
) -> Vec<Verdict> {
    use rayon::prelude::*;
    if generations.is_empty() {
        return Vec::new();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        generations
            .par_iter()
            .map(|g| evaluate_generation(dataset, g, resolver, work_root))
            .collect()
    })
}

/// Best verdict per (bug, backend): highest ladder rank, earliest attempt on ties.
pub fn best_verdicts(verdicts: &[Verdict]) -> BTreeMap<(String, String), &Verdict> {
    let mut best: BTreeMap<(String, String), &Verdict> = BTreeMap::new();
    for v in verdicts {
        let key = (v.bug_id.clone(), v.backend_id.clone());
        match best.get(&key) {
            Some(cur)
                if (cur.stage.rank(), std::cmp::Reverse(cur.attempt))
                    >= (v.stage.rank(), std::cmp::Reverse(v.attempt)) => {}
            _ => {
                best.insert(key, v);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(test_id: &str) -> TestCase {
        TestCase {
            bug_id: "Cli-1".into(),
            backend_id: "mock".into(),
            attempt: 1,
            test_id: test_id.into(),
            source: "public class T {}".into(),
        }
    }

    fn sim(buggy: SimOutcome, fixed: SimOutcome) -> SimulatedAdapter {
        SimulatedAdapter::new([SimScript {
            test_id: "T".into(),
            buggy,
            fixed,
            patched: BTreeMap::new(),
        }])
    }

    fn stage_for(buggy: SimOutcome, fixed: SimOutcome) -> Verdict {
        evaluate_test(&sim(buggy, fixed), Path::new("/nonexistent"), &case("T")).unwrap()
    }

    #[test]
    fn scripted_ladder() {
        use SimOutcome::*;
        assert_eq!(stage_for(CompileFail, Pass).stage, Stage::NotExecutable);
        assert_eq!(stage_for(Fail, Pass).stage, Stage::Relevant);
        assert_eq!(stage_for(Error, Pass).stage, Stage::Relevant);
        assert_eq!(stage_for(Pass, Pass).stage, Stage::ExecutableInvalid);
        assert_eq!(stage_for(Fail, Timeout).stage, Stage::RelevanceUndetermined);
        assert_eq!(stage_for(Fail, Unavailable).stage, Stage::RelevanceUndetermined);
        assert_eq!(stage_for(Fail, Fail).stage, Stage::Valid);
        assert_eq!(stage_for(Fail, CompileFail).stage, Stage::Valid);
        assert_eq!(stage_for(InfraError, Pass).stage, Stage::NotExecutable);
        assert_eq!(stage_for(Missing, Pass).stage, Stage::NotExecutable);
        let v = stage_for(Timeout, Pass);
        assert_eq!(v.stage, Stage::NotExecutable);
        assert!(v.detail.contains("timeout"));
    }

    #[test]
    fn fixed_phase_only_after_valid() {
        use SimOutcome::*;
        for buggy in [Pass, Fail, Error, InfraError, CompileFail, Timeout, Missing] {
            let v = stage_for(buggy, Pass);
            assert_eq!(v.entered_fixed_phase(), v.stage != Stage::NotExecutable && v.stage != Stage::ExecutableInvalid);
            assert_eq!(v.entered_fixed_phase(), buggy == Fail || buggy == Error);
        }
    }

    #[test]
    fn buggy_checkout_failure_is_error() {
        let err = evaluate_test(
            &sim(SimOutcome::Unavailable, SimOutcome::Pass),
            Path::new("/x"),
            &case("T"),
        )
        .unwrap_err();
        assert!(matches!(err, HarnessError::CheckoutFailed("buggy", _)));
    }

    #[test]
    fn unscripted_test_is_misconfiguration() {
        let err = evaluate_test(&SimulatedAdapter::default(), Path::new("/x"), &case("T")).unwrap_err();
        assert!(matches!(err, HarnessError::AdapterMisconfigured(_)));
    }

    #[test]
    fn result_matching() {
        let r = TestResults {
            failing: vec!["Other#x".into()],
            passing: vec!["GenTest_A_a1#t1".into(), "GenTest_A_a10#t".into()],
            errors: vec![],
        };
        assert_eq!(r.status_of("GenTest_A_a1"), InjectedStatus::Passed);
        assert_eq!(r.status_of("GenTest_A_a2"), InjectedStatus::NotReported);
        let r = TestResults {
            failing: vec![],
            passing: vec!["T::a".into()],
            errors: vec![ErrorEntry::Id("T::b".into())],
        };
        assert!(matches!(r.status_of("T"), InjectedStatus::InfraError(_)));
        let r: TestResults = serde_json::from_str(
            r#"{"failing":[],"passing":[],"errors":[{"id":"T.t","message":"java.lang.IllegalStateException\n\tat T.t(T.java:5)"}]}"#,
        )
        .unwrap();
        assert!(matches!(r.status_of("T"), InjectedStatus::Failed(_)));
    }

    #[test]
    fn error_message_classification() {
        assert!(raised_in_test_body("junit.framework.AssertionFailedError: expected", "T"));
        assert!(raised_in_test_body("java.lang.RuntimeException: boom\n\tat T.test(T.java:3)", "T"));
        assert!(!raised_in_test_body("java.lang.RuntimeException: boom\n\tat org.Runner.run", "T"));
        assert!(!raised_in_test_body("initializationError\n\tat T.<init>", "T"));
        assert!(!raised_in_test_body("", "T"));
    }

    #[test]
    fn best_verdict_takes_highest_stage() {
        let mut vs: Vec<Verdict> = (1..=4)
            .map(|a| Verdict::new("B-1", "m", a, Stage::NotExecutable))
            .collect();
        vs.push(Verdict::new("B-1", "m", 5, Stage::Valid));
        let best = best_verdicts(&vs);
        assert_eq!(best[&("B-1".to_string(), "m".to_string())].stage, Stage::Valid);
        vs.push(Verdict::new("B-1", "m", 6, Stage::Valid));
        assert_eq!(best_verdicts(&vs)[&("B-1".to_string(), "m".to_string())].attempt, 5);
    }

    #[test]
    fn config_validation() {
        let mut c = ProjectAdapterConfig {
            checkout_buggy: "true".into(),
            checkout_fixed: "true".into(),
            compile: "true".into(),
            run_tests: "true".into(),
            coverage: None,
            apply_patch: None,
            test_dir: "t".into(),
            results_path: "r.json".into(),
            timeout_secs: 1,
            test_file_extension: "java".into(),
            test_superclass: None,
        };
        assert!(c.validate().is_ok());
        c.compile = " ".into();
        assert!(c.validate().is_err());
        c.compile = "true".into();
        c.timeout_secs = 0;
        assert!(c.validate().is_err());
    }
}
