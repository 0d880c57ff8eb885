//! Domain types shared by every pipeline stage, and the verdict ladder.
//!
//! A generated test climbs the ladder one execution event at a time:
//!
//! ```text
//! Pending ─ExtractionFailed──────────▶ NotExtracted
//!         ─CompileFailed / Timeout───▶ NotExecutable
//!         ─RunOnBuggyPassed──────────▶ ExecutableInvalid
//!         ─RunOnBuggyFailed──────────▶ Valid ─RunOnFixedPassed──────────▶ Relevant
//!                                            ─RunOnFixedFailed──────────▶ Valid
//!                                            ─Timeout / FixedUnavailable▶ RelevanceUndetermined
//! ```

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One user-written bug report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub id: String,
    pub project: String,
    pub title: String,
    pub body: String,
    pub created_at: NaiveDate,
    #[serde(default)]
    pub source_url: Option<String>,
    pub char_size: usize,
    pub contains_code: bool,
}

impl BugReport {
    /// Builds a report, recomputing the quality features from the text.
    pub fn new(
        id: impl Into<String>,
        project: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
        created_at: NaiveDate,
        source_url: Option<String>,
    ) -> Self {
        let mut report = BugReport {
            id: id.into(),
            project: project.into(),
            title: title.into(),
            body: body.into(),
            created_at,
            source_url,
            char_size: 0,
            contains_code: false,
        };
        report.refresh_features();
        report
    }

    /// Recomputes `char_size` and `contains_code`; stored values are never trusted.
    pub fn refresh_features(&mut self) {
        let (size, code) = crate::ingest::quality_features(self);
        self.char_size = size;
        self.contains_code = code;
    }

    /// Title and body as they are shown to the model and measured for size.
    pub fn full_text(&self) -> String {
        match (self.title.is_empty(), self.body.is_empty()) {
            (false, false) => format!("{}\n{}", self.title, self.body),
            (false, true) => self.title.clone(),
            (true, _) => self.body.clone(),
        }
    }
}

/// One LLM generation attempt for one bug report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTest {
    pub bug_id: String,
    pub attempt: u32,
    pub backend_id: String,
    pub raw_output: String,
    #[serde(default)]
    pub extracted_code: Option<String>,
    pub created_at: DateTime<Utc>,
}

/// Position on the verdict ladder.
///
/// `Pending` is the starting point of the state machine and never appears in
/// a finished [`Verdict`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pending,
    NotExtracted,
    NotExecutable,
    ExecutableInvalid,
    Valid,
    Relevant,
    RelevanceUndetermined,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Pending,
        Stage::NotExtracted,
        Stage::NotExecutable,
        Stage::ExecutableInvalid,
        Stage::Valid,
        Stage::Relevant,
        Stage::RelevanceUndetermined,
    ];

    /// Ordinal used to pick the best verdict among several attempts.
    ///
    /// `RelevanceUndetermined` sits between `Valid` and `Relevant`: the test
    /// reproduced the bug and may still turn out relevant.
    pub fn rank(self) -> u8 {
        match self {
            Stage::Pending => 0,
            Stage::NotExtracted => 1,
            Stage::NotExecutable => 2,
            Stage::ExecutableInvalid => 3,
            Stage::Valid => 4,
            Stage::RelevanceUndetermined => 5,
            Stage::Relevant => 6,
        }
    }

    pub fn is_executable(self) -> bool {
        matches!(
            self,
            Stage::ExecutableInvalid | Stage::Valid | Stage::Relevant | Stage::RelevanceUndetermined
        )
    }

    pub fn is_valid(self) -> bool {
        matches!(
            self,
            Stage::Valid | Stage::Relevant | Stage::RelevanceUndetermined
        )
    }

    pub fn is_relevant(self) -> bool {
        self == Stage::Relevant
    }

    /// Stages from which no further event is accepted.
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            Stage::NotExtracted
                | Stage::NotExecutable
                | Stage::ExecutableInvalid
                | Stage::Relevant
                | Stage::RelevanceUndetermined
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pending => "pending",
            Stage::NotExtracted => "not_extracted",
            Stage::NotExecutable => "not_executable",
            Stage::ExecutableInvalid => "executable_invalid",
            Stage::Valid => "valid",
            Stage::Relevant => "relevant",
            Stage::RelevanceUndetermined => "relevance_undetermined",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observations fed into the verdict ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionEvent {
    ExtractionFailed,
    CompileFailed,
    RunOnBuggyPassed,
    RunOnBuggyFailed,
    RunOnFixedPassed,
    RunOnFixedFailed,
    Timeout,
    /// The fixed version could not be checked out.
    FixedUnavailable,
}

impl ExecutionEvent {
    pub const ALL: [ExecutionEvent; 8] = [
        ExecutionEvent::ExtractionFailed,
        ExecutionEvent::CompileFailed,
        ExecutionEvent::RunOnBuggyPassed,
        ExecutionEvent::RunOnBuggyFailed,
        ExecutionEvent::RunOnFixedPassed,
        ExecutionEvent::RunOnFixedFailed,
        ExecutionEvent::Timeout,
        ExecutionEvent::FixedUnavailable,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal transition: {event:?} from stage {stage}")]
pub struct IllegalTransition {
    pub stage: Stage,
    pub event: ExecutionEvent,
}

/// Advances the ladder by one event.
pub fn verdict_transition(
    current: Stage,
    event: ExecutionEvent,
) -> Result<Stage, IllegalTransition> {
    use ExecutionEvent as E;
    use Stage as S;
    let next = match (current, event) {
        (S::Pending, E::ExtractionFailed) => S::NotExtracted,
        (S::Pending, E::CompileFailed) | (S::Pending, E::Timeout) => S::NotExecutable,
        (S::Pending, E::RunOnBuggyPassed) => S::ExecutableInvalid,
        (S::Pending, E::RunOnBuggyFailed) => S::Valid,
        (S::Valid, E::RunOnFixedPassed) => S::Relevant,
        (S::Valid, E::RunOnFixedFailed) => S::Valid,
        (S::Valid, E::Timeout) | (S::Valid, E::FixedUnavailable) => S::RelevanceUndetermined,
        (stage, event) => return Err(IllegalTransition { stage, event }),
    };
    Ok(next)
}

/// Which program version a command ran against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Version {
    Buggy,
    Fixed,
}

impl Version {
    pub fn as_str(self) -> &'static str {
        match self {
            Version::Buggy => "buggy",
            Version::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Checkout,
    WriteTest,
    Compile,
    RunTests,
    ApplyPatch,
}

/// Wall-clock time spent in one command; the ordered list doubles as the command log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTiming {
    pub version: Version,
    pub step: Step,
    pub millis: u64,
}

/// Classification outcome for one generated test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub bug_id: String,
    #[serde(default)]
    pub backend_id: String,
    pub attempt: u32,
    pub stage: Stage,
    #[serde(default)]
    pub detail: String,
    #[serde(default)]
    pub durations: Vec<StepTiming>,
}

impl Verdict {
    pub fn new(bug_id: impl Into<String>, backend_id: impl Into<String>, attempt: u32, stage: Stage) -> Self {
        Verdict {
            bug_id: bug_id.into(),
            backend_id: backend_id.into(),
            attempt,
            stage,
            detail: String::new(),
            durations: Vec::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    /// True when any logged command ran against the fixed version.
    pub fn entered_fixed_phase(&self) -> bool {
        self.durations.iter().any(|t| t.version == Version::Fixed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestOutcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpectrumError {
    #[error("coverage matrix has {rows} rows for {tests} tests")]
    RowCount { rows: usize, tests: usize },
    #[error("coverage row {row} has {len} entries for {elements} elements")]
    RowWidth { row: usize, len: usize, elements: usize },
    #[error("{outcomes} outcomes for {tests} tests")]
    OutcomeCount { outcomes: usize, tests: usize },
    #[error("buggy element {0} is not a known element")]
    UnknownBuggyElement(String),
}

/// Per-test coverage of code elements plus the pass/fail vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageSpectrum {
    elements: Vec<String>,
    tests: Vec<String>,
    coverage: Vec<Vec<bool>>,
    outcomes: Vec<TestOutcome>,
    buggy_elements: BTreeSet<String>,
}

impl CoverageSpectrum {
    pub fn new(
        elements: Vec<String>,
        tests: Vec<String>,
        coverage: Vec<Vec<bool>>,
        outcomes: Vec<TestOutcome>,
        buggy_elements: BTreeSet<String>,
    ) -> Result<Self, SpectrumError> {
        if coverage.len() != tests.len() {
            return Err(SpectrumError::RowCount {
                rows: coverage.len(),
                tests: tests.len(),
            });
        }
        if outcomes.len() != tests.len() {
            return Err(SpectrumError::OutcomeCount {
                outcomes: outcomes.len(),
                tests: tests.len(),
            });
        }
        for (row, bits) in coverage.iter().enumerate() {
            if bits.len() != elements.len() {
                return Err(SpectrumError::RowWidth {
                    row,
                    len: bits.len(),
                    elements: elements.len(),
                });
            }
        }
        if let Some(unknown) = buggy_elements.iter().find(|b| !elements.contains(b)) {
            return Err(SpectrumError::UnknownBuggyElement(unknown.clone()));
        }
        Ok(CoverageSpectrum {
            elements,
            tests,
            coverage,
            outcomes,
            buggy_elements,
        })
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn tests(&self) -> &[String] {
        &self.tests
    }

    pub fn coverage(&self) -> &[Vec<bool>] {
        &self.coverage
    }

    pub fn outcomes(&self) -> &[TestOutcome] {
        &self.outcomes
    }

    pub fn buggy_elements(&self) -> &BTreeSet<String> {
        &self.buggy_elements
    }

    pub fn failing_count(&self) -> usize {
        self.outcomes.iter().filter(|o| **o == TestOutcome::Fail).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchLabel {
    Correct,
    Plausible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchValidation {
    ValidatedByGeneratedTest,
    RejectedByGeneratedTest,
    NoValidTestAvailable,
}

/// An externally produced patch, its human label, and what the generated test said about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub bug_id: String,
    pub patch_id: String,
    #[serde(rename = "label")]
    pub human_label: PatchLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PatchValidation>,
}

/// Project name encoded in a bug id such as `Closure-12`.
pub fn project_of(bug_id: &str) -> &str {
    bug_id.rsplit_once('-').map_or(bug_id, |(project, _)| project)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_examples() {
        use ExecutionEvent as E;
        assert_eq!(verdict_transition(Stage::Pending, E::CompileFailed), Ok(Stage::NotExecutable));
        assert_eq!(
            verdict_transition(Stage::Pending, E::RunOnBuggyPassed),
            Ok(Stage::ExecutableInvalid)
        );
        assert_eq!(verdict_transition(Stage::Valid, E::RunOnFixedPassed), Ok(Stage::Relevant));
        assert_eq!(
            verdict_transition(Stage::Valid, E::Timeout),
            Ok(Stage::RelevanceUndetermined)
        );
        assert_eq!(
            verdict_transition(Stage::NotExecutable, E::RunOnFixedPassed),
            Err(IllegalTransition {
                stage: Stage::NotExecutable,
                event: E::RunOnFixedPassed
            })
        );
    }

    #[test]
    fn terminal_stages_accept_nothing() {
        for stage in Stage::ALL.into_iter().filter(|s| s.is_terminal()) {
            for event in ExecutionEvent::ALL {
                assert!(verdict_transition(stage, event).is_err(), "{stage} {event:?}");
            }
        }
    }

    #[test]
    fn full_text_joins_with_newline() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        assert_eq!(BugReport::new("a", "p", "t", "b", d, None).full_text(), "t\nb");
        assert_eq!(BugReport::new("a", "p", "", "b", d, None).full_text(), "b");
        assert_eq!(BugReport::new("a", "p", "t", "", d, None).full_text(), "t");
    }

    #[test]
    fn spectrum_dimension_checks() {
        let err = CoverageSpectrum::new(
            vec!["e1".into()],
            vec!["t1".into()],
            vec![vec![true, false]],
            vec![TestOutcome::Fail],
            BTreeSet::new(),
        )
        .unwrap_err();
        assert!(matches!(err, SpectrumError::RowWidth { .. }));
        let err = CoverageSpectrum::new(
            vec!["e1".into()],
            vec!["t1".into()],
            vec![vec![true]],
            vec![TestOutcome::Fail],
            ["zz".to_string()].into(),
        )
        .unwrap_err();
        assert_eq!(err, SpectrumError::UnknownBuggyElement("zz".into()));
    }

    #[test]
    fn project_from_bug_id() {
        assert_eq!(project_of("Closure-12"), "Closure");
        assert_eq!(project_of("JacksonDatabind-3"), "JacksonDatabind");
        assert_eq!(project_of("solo"), "solo");
    }
}
