//! Checks externally produced patches with generated tests that reproduce the bug.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{per_bug_verdicts, Mode};
use crate::extract::{assemble_test_class, NamingPolicy};
use crate::harness::{
    AdapterResolver, CommandStatus, HarnessError, InjectedStatus, PatchRef, ProjectAdapter, RunContext,
};
use crate::ingest::Dataset;
use crate::model::{project_of, GeneratedTest, PatchLabel, PatchRecord, PatchValidation, Step, Verdict, Version};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("patch {0} could not be applied: {1}")]
    PatchApplyFailed(String, String),
    #[error("test {0} no longer fails on the unpatched program: {1}")]
    PrecondBroken(String, String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Compiles and runs the injected test; `Err` says why it never produced results.
fn run_injected(
    adapter: &dyn ProjectAdapter,
    ctx: &RunContext,
    source: &str,
) -> Result<Result<InjectedStatus, String>, HarnessError> {
    adapter.write_test(ctx, source)?;
    let compile = adapter.run_step(ctx, Step::Compile)?;
    match compile.status {
        CommandStatus::Exited(0) => {}
        CommandStatus::TimedOut => return Ok(Err("compile timed out".into())),
        CommandStatus::Exited(_) => return Ok(Err("does not compile".into())),
    }
    let run = adapter.run_step(ctx, Step::RunTests)?;
    if run.status == CommandStatus::TimedOut {
        return Ok(Err("test run timed out".into()));
    }
    match adapter.read_results(ctx) {
        Ok(results) => Ok(Ok(results.status_of(&ctx.test_id))),
        Err(_) if run.status != CommandStatus::Exited(0) => Ok(Err("test run crashed".into())),
        Err(e) => Err(e),
    }
}

/// Re-checks that `source` fails on the unpatched buggy program, then applies
/// the patch and reruns it: passing validates the patch.
pub fn validate_patch(
    adapter: &dyn ProjectAdapter,
    work_dir: &Path,
    source: &str,
    test_id: &str,
    patch: &PatchRef,
) -> Result<PatchValidation, PatchError> {
    let mut ctx = RunContext {
        work_dir: work_dir.join("unpatched"),
        test_id: test_id.to_string(),
        version: Version::Buggy,
        patch: None,
    };
    let checkout = adapter.run_step(&ctx, Step::Checkout)?;
    if !checkout.success() {
        return Err(HarnessError::CheckoutFailed("buggy", checkout.output).into());
    }
    match run_injected(adapter, &ctx, source)? {
        Ok(InjectedStatus::Failed(_)) => {}
        Ok(other) => return Err(PatchError::PrecondBroken(test_id.into(), format!("{other:?}"))),
        Err(why) => return Err(PatchError::PrecondBroken(test_id.into(), why)),
    }

    ctx.work_dir = work_dir.join("patched");
    ctx.patch = Some(patch.clone());
    let checkout = adapter.run_step(&ctx, Step::Checkout)?;
    if !checkout.success() {
        return Err(HarnessError::CheckoutFailed("buggy", checkout.output).into());
    }
    let apply = adapter.run_step(&ctx, Step::ApplyPatch)?;
    if !apply.success() {
        return Err(PatchError::PatchApplyFailed(patch.patch_id.clone(), apply.output));
    }
    Ok(match run_injected(adapter, &ctx, source)? {
        Ok(InjectedStatus::Passed) => PatchValidation::ValidatedByGeneratedTest,
        _ => PatchValidation::RejectedByGeneratedTest,
    })
}

/// Result of checking one patch record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchCheck {
    pub record: PatchRecord,
    pub error: Option<String>,
}

/// Validates every record with the first valid generated test of its bug.
/// Records whose bug has no valid test are marked `NoValidTestAvailable`;
/// failures leave `validation` empty and carry an error message.
pub fn validate_patches(
    dataset: &Dataset,
    records: &[PatchRecord],
    verdicts: &[Verdict],
    generations: &[GeneratedTest],
    resolver: &dyn AdapterResolver,
    patch_dir: &Path,
    work_root: &Path,
) -> Vec<PatchCheck> {
    let best = per_bug_verdicts(verdicts, Mode::Multi);
    let gens: HashMap<(&str, &str, u32), &GeneratedTest> = generations
        .iter()
        .map(|g| ((g.bug_id.as_str(), g.backend_id.as_str(), g.attempt), g))
        .collect();
    records
        .iter()
        .map(|record| {
            let mut record = record.clone();
            let valid = best.get(&record.bug_id).filter(|v| v.stage.is_valid());
            let Some(verdict) = valid else {
                record.validation = Some(PatchValidation::NoValidTestAvailable);
                return PatchCheck { record, error: None };
            };
            match check_one(dataset, &record, verdict, &gens, resolver, patch_dir, work_root) {
                Ok(v) => {
                    record.validation = Some(v);
                    PatchCheck { record, error: None }
                }
                Err(e) => PatchCheck {
                    record,
                    error: Some(e),
                },
            }
        })
        .collect()
}

fn check_one(
    dataset: &Dataset,
    record: &PatchRecord,
    verdict: &Verdict,
    gens: &HashMap<(&str, &str, u32), &GeneratedTest>,
    resolver: &dyn AdapterResolver,
    patch_dir: &Path,
    work_root: &Path,
) -> Result<PatchValidation, String> {
    let gen = gens
        .get(&(verdict.bug_id.as_str(), verdict.backend_id.as_str(), verdict.attempt))
        .ok_or_else(|| format!("generation for {} attempt {} not found", verdict.bug_id, verdict.attempt))?;
    let code = gen.extracted_code.as_deref().ok_or("valid test has no code")?;
    let project = dataset
        .get(&record.bug_id)
        .map_or_else(|| project_of(&record.bug_id).to_string(), |r| r.project.clone());
    let adapter = resolver
        .resolve(&project)
        .ok_or_else(|| format!("no adapter configured for project `{project}`"))?;
    let naming = NamingPolicy::for_generation(&gen.bug_id, gen.attempt)
        .with_extends(adapter.test_superclass().map(str::to_string));
    let source = assemble_test_class(code, &naming).map_err(|e| e.to_string())?;
    let patch = PatchRef {
        patch_id: record.patch_id.clone(),
        patch_file: record.patch_file.as_ref().map(|f| patch_dir.join(f)),
    };
    let work_dir: PathBuf = work_root.join(format!("{}__{}", naming.class_name, record.patch_id));
    validate_patch(adapter.as_ref(), &work_dir, &source, &naming.class_name, &patch).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PatchRow {
    pub project: String,
    pub correct: usize,
    pub plausible: usize,
    pub valid_tests: usize,
    pub validated_correct: usize,
    pub validated_plausible: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatchReport {
    pub rows: Vec<PatchRow>,
}

impl PatchReport {
    pub fn total(&self) -> PatchRow {
        let mut t = PatchRow {
            project: "Total".into(),
            ..Default::default()
        };
        for r in &self.rows {
            t.correct += r.correct;
            t.plausible += r.plausible;
            t.valid_tests += r.valid_tests;
            t.validated_correct += r.validated_correct;
            t.validated_plausible += r.validated_plausible;
        }
        t
    }

    pub fn summary(&self) -> String {
        let t = self.total();
        format!(
            "{}/{} plausible validated, {}/{} correct validated",
            t.validated_plausible, t.plausible, t.validated_correct, t.correct
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>18} {:>12} {:>22}",
            "project", "correct(plausible)", "valid tests", "validated c(p)"
        );
        let total = self.total();
        for r in self.rows.iter().chain(std::iter::once(&total)) {
            let _ = writeln!(
                out,
                "{:<16} {:>18} {:>12} {:>22}",
                r.project,
                format!("{}({})", r.correct, r.plausible),
                r.valid_tests,
                format!("{}({})", r.validated_correct, r.validated_plausible)
            );
        }
        let _ = writeln!(out, "{}", self.summary());
        out
    }
}

/// Tallies labels and validation outcomes per project. `valid_tests` gives
/// the number of bugs per project that have a valid generated test.
pub fn patch_report(records: &[PatchRecord], valid_tests: &BTreeMap<String, usize>) -> PatchReport {
    let mut rows: BTreeMap<String, PatchRow> = BTreeMap::new();
    for r in records {
        let project = project_of(&r.bug_id).to_string();
        let row = rows.entry(project.clone()).or_insert_with(|| PatchRow {
            project,
            ..Default::default()
        });
        let validated = r.validation == Some(PatchValidation::ValidatedByGeneratedTest);
        match r.human_label {
            PatchLabel::Correct => {
                row.correct += 1;
                row.validated_correct += validated as usize;
            }
            PatchLabel::Plausible => {
                row.plausible += 1;
                row.validated_plausible += validated as usize;
            }
        }
    }
    for row in rows.values_mut() {
        row.valid_tests = valid_tests.get(&row.project).copied().unwrap_or(0);
    }
    PatchReport {
        rows: rows.into_values().collect(),
    }
}

/// Bugs per project whose best verdict is at least valid.
pub fn valid_test_counts(dataset: &Dataset, verdicts: &[Verdict]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (bug, v) in per_bug_verdicts(verdicts, Mode::Multi) {
        if v.stage.is_valid() {
            let project = dataset
                .get(&bug)
                .map_or_else(|| project_of(&bug).to_string(), |r| r.project.clone());
            *out.entry(project).or_insert(0) += 1;
        }
    }
    out
}
