//! Command-line interface. Every command is a function over writers that
//! returns the process exit code: 0 success, 2 input error, 3 backend error.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{aggregate_metrics, cyclomatic_complexity, quality_report, ComparisonTable, GroupBy, Mode};
use crate::config::Config;
use crate::extract::{assemble_test_class, NamingPolicy};
use crate::genclient::{build_prompt, generate_attempts, GenError, PromptError};
use crate::harness::evaluate_batch;
use crate::ingest::{load_dataset, Dataset, Format};
use crate::jsonl;
use crate::model::{GeneratedTest, PatchRecord, Verdict};
use crate::patchval::{patch_report, valid_test_counts, validate_patches};
use crate::sbfl::{load_spectra_dir, localization_report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bugrepro", version, about = "Generate and evaluate bug-reproducing tests from bug reports")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, deduplicate and featurize a bug report dump.
    Ingest(IngestArgs),
    /// Query the configured backend for test cases (resumable).
    Generate(GenerateArgs),
    /// Run generated tests against buggy and fixed versions.
    Evaluate(EvaluateArgs),
    /// Executability / validity / relevance tables.
    Report(ReportArgs),
    /// Bug report size and code presence per outcome class.
    Quality(QualityArgs),
    /// Ochiai top-k localization over spectrum directories.
    Localize(LocalizeArgs),
    /// Cyclomatic complexity of test sources.
    Complexity(ComplexityArgs),
    /// Validate external patches with valid generated tests.
    ValidatePatches(ValidatePatchesArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// jsonl or csv; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides `prompt.n_attempts`.
    #[arg(long)]
    pub attempts: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub generations: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides `harness.parallelism`.
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long, default_value = "multi")]
    pub mode: Mode,
    /// Only print the total row.
    #[arg(long)]
    pub total_only: bool,
    /// Further verdict files to compare side by side.
    #[arg(long)]
    pub compare: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Directories of `<bug-id>.spectrum` files, one table per directory.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub k: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    /// Source files to score.
    pub files: Vec<PathBuf>,
    /// Score the valid tests among these generations...
    #[arg(long, requires = "verdicts")]
    pub generations: Option<PathBuf>,
    /// ...using these verdicts.
    #[arg(long, requires = "generations")]
    pub verdicts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidatePatchesArgs {
    /// Patch records JSONL; `patch_file` paths are relative to it.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Needed to run tests; without it, records are only tallied.
    #[arg(long)]
    pub generations: Option<PathBuf>,
    /// Write checked records here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, out, err),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            code
        }
    }
}

/// A failed command: exit code plus message for stderr.
struct Failure(i32, String);

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure(EXIT_INPUT, e.to_string())
}

type CmdResult = Result<(), Failure>;

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, out, err),
        Command::Generate(a) => load_config(cli).and_then(|c| cmd_generate(&c, a, out, err)),
        Command::Evaluate(a) => load_config(cli).and_then(|c| cmd_evaluate(&c, a, out, err)),
        Command::Report(a) => cmd_report(a, out),
        Command::Quality(a) => cmd_quality(a, out),
        Command::Localize(a) => cmd_localize(a, out),
        Command::Complexity(a) => cmd_complexity(a, out, err),
        Command::ValidatePatches(a) => {
            let config = if a.generations.is_some() { Some(load_config(cli)) } else { None }.transpose();
            config.and_then(|c| cmd_validate_patches(c.as_ref(), a, out, err))
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure(code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure(EXIT_INPUT, "this command needs --config".into()))?;
    Config::load(path).map_err(input)
}

fn load_reports(path: &Path) -> Result<Dataset, Failure> {
    let format = Format::from_path(path).unwrap_or(Format::Jsonl);
    Ok(load_dataset(path, format).map_err(input)?.dataset)
}

fn load_optional_reports(path: Option<&PathBuf>) -> Result<Dataset, Failure> {
    path.map_or_else(|| Ok(Dataset::default()), |p| load_reports(p))
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Failure(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))
}

fn cmd_ingest(a: &IngestArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let format = match a.format {
        Some(f) => f,
        None => Format::from_path(&a.input).ok_or_else(|| {
            Failure(EXIT_INPUT, format!("cannot infer format of {}; pass --format", a.input.display()))
        })?,
    };
    let loaded = load_dataset(&a.input, format).map_err(input)?;
    jsonl::write_all(&a.output, &loaded.dataset.reports).map_err(input)?;
    for d in &loaded.duplicates {
        let _ = writeln!(err, "duplicate: {} (line {}) merged into {}", d.removed_id, d.line, d.kept_id);
    }
    if !loaded.duplicates.is_empty() {
        let n = loaded.duplicates.len();
        let _ = writeln!(err, "{n} duplicate{} removed", if n == 1 { "" } else { "s" });
    }
    let with_code = loaded.dataset.reports.iter().filter(|r| r.contains_code).count();
    let _ = writeln!(out, "{} bug reports ({} with code)", loaded.dataset.reports.len(), with_code);
    for (project, n) in loaded.dataset.project_counts() {
        let _ = writeln!(out, "  {project:<20} {n:>6}");
    }
    Ok(())
}

fn cmd_generate(config: &Config, a: &GenerateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let dataset = load_reports(&a.reports)?;
    let gen_config = config.generation_config(a.attempts).map_err(input)?;
    let backend = config.backend().map_err(input)?;
    let template = config.template();
    let existing: Vec<GeneratedTest> = jsonl::read_or_empty(&a.output).map_err(input)?;
    let done: HashSet<(String, u32, String)> = existing
        .into_iter()
        .map(|g| (g.bug_id, g.attempt, g.backend_id))
        .collect();
    let (mut generated, mut skipped) = (0usize, 0usize);
    for report in &dataset.reports {
        let todo: Vec<u32> = (1..=gen_config.n_attempts)
            .filter(|&n| !done.contains(&(report.id.clone(), n, backend.id().to_string())))
            .collect();
        skipped += gen_config.n_attempts as usize - todo.len();
        if todo.is_empty() {
            continue;
        }
        let prompt = match build_prompt(&template, report) {
            Ok(p) => p,
            Err(PromptError::EmptyReport(_)) => {
                let _ = writeln!(err, "warning: {} has an empty report, skipped", report.id);
                continue;
            }
        };
        for attempt in todo {
            match generate_attempts(backend.as_ref(), &report.id, &prompt, &gen_config, &[attempt]) {
                Ok(gens) => {
                    for g in &gens {
                        jsonl::append(&a.output, g).map_err(input)?;
                        generated += 1;
                    }
                }
                Err(GenError::Config(e)) => return Err(input(e)),
                Err(e) => {
                    let _ = writeln!(err, "{generated} generated, {skipped} skipped before failure");
                    return Err(Failure(EXIT_BACKEND, format!("{} attempt {attempt}: {e}", report.id)));
                }
            }
        }
    }
    let _ = writeln!(out, "{generated} generated, {skipped} skipped");
    Ok(())
}

fn cmd_evaluate(config: &Config, a: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let dataset = load_reports(&a.reports)?;
    let generations: Vec<GeneratedTest> = jsonl::read(&a.generations).map_err(input)?;
    let adapters = config.adapters().map_err(input)?;
    let parallel = a.parallel.unwrap_or(config.harness.parallelism);
    if parallel == 0 {
        return Err(Failure(EXIT_INPUT, "--parallel must be at least 1".into()));
    }
    let verdicts = evaluate_batch(&dataset, &generations, &adapters, &config.work_root(), parallel);
    jsonl::write_all(&a.output, &verdicts).map_err(input)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &verdicts {
        *counts.entry(v.stage.as_str()).or_default() += 1;
    }
    let _ = writeln!(out, "{} verdicts", verdicts.len());
    for (stage, n) in counts {
        let _ = writeln!(out, "  {stage:<24} {n:>6}");
    }
    let errors = verdicts.iter().filter(|v| v.detail.starts_with("error: ")).count();
    if errors > 0 {
        let _ = writeln!(err, "warning: {errors} generation(s) could not be evaluated (see verdict details)");
    }
    Ok(())
}

fn backend_label(verdicts: &[Verdict], path: &Path) -> String {
    verdicts
        .iter()
        .map(|v| v.backend_id.as_str())
        .find(|b| !b.is_empty())
        .map(str::to_string)
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> CmdResult {
    let dataset = load_optional_reports(a.reports.as_ref())?;
    let verdicts: Vec<Verdict> = jsonl::read(&a.verdicts).map_err(input)?;
    if a.compare.is_empty() {
        let group_by = if a.total_only { GroupBy::Total } else { GroupBy::Project };
        let table = aggregate_metrics(&verdicts, &dataset, group_by, a.mode);
        let _ = write!(out, "{}", table.to_text());
        if let Some(csv) = &a.csv {
            write_file(csv, &table.to_csv())?;
        }
        return Ok(());
    }
    let mut backends = vec![(backend_label(&verdicts, &a.verdicts), verdicts)];
    for path in &a.compare {
        let vs: Vec<Verdict> = jsonl::read(path).map_err(input)?;
        backends.push((backend_label(&vs, path), vs));
    }
    let table = ComparisonTable::new(&backends, &dataset);
    let _ = write!(out, "{}", table.to_text());
    if let Some(csv) = &a.csv {
        write_file(csv, &table.to_csv())?;
    }
    Ok(())
}

fn cmd_quality(a: &QualityArgs, out: &mut dyn Write) -> CmdResult {
    let dataset = load_reports(&a.reports)?;
    let verdicts: Vec<Verdict> = jsonl::read(&a.verdicts).map_err(input)?;
    let report = quality_report(&dataset, &verdicts);
    let _ = write!(out, "{}", report.to_text());
    if let Some(csv) = &a.csv {
        write_file(csv, &report.to_csv())?;
    }
    Ok(())
}

fn cmd_localize(a: &LocalizeArgs, out: &mut dyn Write) -> CmdResult {
    if a.k.contains(&0) {
        return Err(Failure(EXIT_INPUT, "k must be at least 1".into()));
    }
    for dir in &a.dirs {
        let spectra = load_spectra_dir(dir).map_err(input)?;
        let report = localization_report(&spectra, &a.k);
        let _ = writeln!(out, "== {}", dir.display());
        let _ = write!(out, "{}", report.to_text());
    }
    Ok(())
}

fn cmd_complexity(a: &ComplexityArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mut sources: Vec<(String, String)> = Vec::new();
    for f in &a.files {
        let text = std::fs::read_to_string(f).map_err(|e| input(format!("{}: {e}", f.display())))?;
        sources.push((f.display().to_string(), text));
    }
    if let (Some(gpath), Some(vpath)) = (&a.generations, &a.verdicts) {
        let gens: Vec<GeneratedTest> = jsonl::read(gpath).map_err(input)?;
        let verdicts: Vec<Verdict> = jsonl::read(vpath).map_err(input)?;
        let valid: HashSet<(&str, &str, u32)> = verdicts
            .iter()
            .filter(|v| v.stage.is_valid())
            .map(|v| (v.bug_id.as_str(), v.backend_id.as_str(), v.attempt))
            .collect();
        for g in &gens {
            if !valid.contains(&(g.bug_id.as_str(), g.backend_id.as_str(), g.attempt)) {
                continue;
            }
            let Some(code) = &g.extracted_code else { continue };
            let naming = NamingPolicy::for_generation(&g.bug_id, g.attempt);
            match assemble_test_class(code, &naming) {
                Ok(src) => sources.push((naming.class_name, src)),
                Err(e) => {
                    let _ = writeln!(err, "warning: {} attempt {}: {e}", g.bug_id, g.attempt);
                }
            }
        }
    }
    if sources.is_empty() {
        return Err(Failure(EXIT_INPUT, "no sources given".into()));
    }
    let mut all = Vec::new();
    let mut failed = 0;
    for (name, src) in &sources {
        match cyclomatic_complexity(src) {
            Ok(values) => {
                let list: Vec<String> = values.iter().map(u32::to_string).collect();
                let _ = writeln!(out, "{name}\t{}", list.join(","));
                all.extend(values);
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(err, "warning: {name}: {e}");
            }
        }
    }
    if !all.is_empty() {
        all.sort_unstable();
        let median = if all.len() % 2 == 1 {
            all[all.len() / 2] as f64
        } else {
            (all[all.len() / 2 - 1] + all[all.len() / 2]) as f64 / 2.0
        };
        let _ = writeln!(
            out,
            "methods {} min {} median {median} max {}",
            all.len(),
            all[0],
            all[all.len() - 1]
        );
    }
    if failed == sources.len() {
        return Err(Failure(EXIT_INPUT, "no source could be scored".into()));
    }
    Ok(())
}

fn cmd_validate_patches(
    config: Option<&Config>,
    a: &ValidatePatchesArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let dataset = load_optional_reports(a.reports.as_ref())?;
    let mut records: Vec<PatchRecord> = jsonl::read(&a.records).map_err(input)?;
    let verdicts: Vec<Verdict> = jsonl::read(&a.verdicts).map_err(input)?;
    if let (Some(config), Some(gpath)) = (config, &a.generations) {
        let gens: Vec<GeneratedTest> = jsonl::read(gpath).map_err(input)?;
        let adapters = config.adapters().map_err(input)?;
        let patch_dir = a.records.parent().unwrap_or(Path::new("."));
        let checks = validate_patches(
            &dataset,
            &records,
            &verdicts,
            &gens,
            &adapters,
            patch_dir,
            &config.work_root().join("patches"),
        );
        records = Vec::with_capacity(checks.len());
        for c in checks {
            if let Some(e) = &c.error {
                let _ = writeln!(err, "warning: {} {}: {e}", c.record.bug_id, c.record.patch_id);
            }
            records.push(c.record);
        }
    }
    if let Some(path) = &a.output {
        jsonl::write_all(path, &records).map_err(input)?;
    }
    let report = patch_report(&records, &valid_test_counts(&dataset, &verdicts));
    let _ = write!(out, "{}", report.to_text());
    Ok(())
}
