//! Report tables, bug-report quality statistics and test complexity.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::statistics::{Data, Max, Min, OrderStatistics};
use thiserror::Error;

use crate::harness::best_verdicts;
use crate::ingest::Dataset;
use crate::lexer::{blocks, brace_balance, tokenize, BlockKind, Token, TokenKind};
use crate::model::{project_of, Stage, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// First attempt per bug.
    Single,
    /// Best attempt per bug.
    Multi,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Mode::Single),
            "multi" => Ok(Mode::Multi),
            other => Err(format!("unknown mode `{other}` (expected single or multi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Project,
    Total,
}

/// An exact fraction; displayed as an integer percentage rounded half-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Self {
        Ratio { num, den }
    }

    pub fn value(&self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }

    pub fn percent(&self) -> Option<u64> {
        let (n, d) = (self.num as u64, self.den as u64);
        (d > 0).then(|| (200 * n + d) / (2 * d))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.percent() {
            Some(p) => f.pad(&format!("{p}%")),
            None => f.pad("—"),
        }
    }
}

/// Stage counts for one group of bugs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MetricsRow {
    pub group: String,
    pub bugs: usize,
    pub executable: usize,
    pub valid: usize,
    pub relevant: usize,
    pub undetermined: usize,
}

impl MetricsRow {
    fn add(&mut self, stage: Stage) {
        self.bugs += 1;
        self.executable += stage.is_executable() as usize;
        self.valid += stage.is_valid() as usize;
        self.relevant += stage.is_relevant() as usize;
        self.undetermined += (stage == Stage::RelevanceUndetermined) as usize;
    }

    pub fn executability(&self) -> Ratio {
        Ratio::new(self.executable, self.bugs)
    }

    pub fn validity(&self) -> Ratio {
        Ratio::new(self.valid, self.bugs)
    }

    pub fn validity_of_executable(&self) -> Ratio {
        Ratio::new(self.valid, self.executable)
    }

    /// Bugs whose relevance could not be decided are left out.
    pub fn relevance(&self) -> Ratio {
        Ratio::new(self.relevant, self.bugs - self.undetermined)
    }

    pub fn relevance_of_executable(&self) -> Ratio {
        Ratio::new(self.relevant, self.executable - self.undetermined)
    }

    pub fn ratios(&self) -> [Ratio; 5] {
        [
            self.executability(),
            self.validity(),
            self.validity_of_executable(),
            self.relevance(),
            self.relevance_of_executable(),
        ]
    }
}

pub const METRIC_NAMES: [&str; 5] = [
    "executability",
    "validity",
    "validity_of_executable",
    "relevance",
    "relevance_of_executable",
];

const METRIC_LABELS: [&str; 5] = [
    "Executability of all test cases",
    "Validity of all test cases",
    "Validity of executable test cases",
    "Relevance of all test cases",
    "Relevance of executable test cases",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsTable {
    pub mode: Mode,
    /// Project rows in name order, then `Total`.
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn total(&self) -> &MetricsRow {
        self.rows.last().expect("total row")
    }

    pub fn row(&self, group: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>5} {:>6} {:>7} {:>11} {:>7} {:>11}",
            "project", "bugs", "exec.", "valid.", "valid/exec", "relev.", "relev/exec"
        );
        for r in &self.rows {
            let [e, v, ve, rl, re] = r.ratios();
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>6} {:>7} {:>11} {:>7} {:>11}",
                r.group, r.bugs, e, v, ve, rl, re
            );
        }
        let undetermined = self.total().undetermined;
        if undetermined > 0 {
            let _ = writeln!(out, "{undetermined} bug(s) with undetermined relevance excluded from relevance columns");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["group", "bugs", "executable", "valid", "relevant", "undetermined"];
        let pct: Vec<String> = METRIC_NAMES.iter().map(|m| format!("{m}_pct")).collect();
        header.extend(pct.iter().map(String::as_str));
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.group.clone(),
                r.bugs.to_string(),
                r.executable.to_string(),
                r.valid.to_string(),
                r.relevant.to_string(),
                r.undetermined.to_string(),
            ];
            rec.extend(r.ratios().iter().map(|x| x.percent().map_or(String::new(), |p| p.to_string())));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// One verdict per bug: the first attempt (single) or the best (multi).
pub fn per_bug_verdicts(verdicts: &[Verdict], mode: Mode) -> BTreeMap<String, &Verdict> {
    match mode {
        Mode::Multi => best_verdicts(verdicts)
            .into_iter()
            .map(|((bug, _), v)| (bug, v))
            .collect(),
        Mode::Single => {
            let mut first: BTreeMap<String, &Verdict> = BTreeMap::new();
            for v in verdicts {
                match first.get(&v.bug_id) {
                    Some(cur) if cur.attempt <= v.attempt => {}
                    _ => {
                        first.insert(v.bug_id.clone(), v);
                    }
                }
            }
            first
        }
    }
}

/// Aggregates verdicts of a single backend into executability, validity and
/// relevance rates. Only bugs that have at least one verdict are counted.
pub fn aggregate_metrics(verdicts: &[Verdict], reports: &Dataset, group_by: GroupBy, mode: Mode) -> MetricsTable {
    let mut projects: BTreeMap<String, MetricsRow> = BTreeMap::new();
    let mut total = MetricsRow {
        group: "Total".into(),
        ..Default::default()
    };
    for (bug, v) in per_bug_verdicts(verdicts, mode) {
        let project = reports
            .get(&bug)
            .map_or_else(|| project_of(&bug).to_string(), |r| r.project.clone());
        total.add(v.stage);
        if group_by == GroupBy::Project {
            projects
                .entry(project.clone())
                .or_insert_with(|| MetricsRow {
                    group: project,
                    ..Default::default()
                })
                .add(v.stage);
        }
    }
    let mut rows: Vec<MetricsRow> = projects.into_values().collect();
    rows.push(total);
    MetricsTable { mode, rows }
}

/// Side-by-side totals for several backends and modes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonTable {
    /// (backend label, mode, total row)
    pub columns: Vec<(String, Mode, MetricsRow)>,
}

impl ComparisonTable {
    /// Columns are ordered single mode first, then multi, backends in the given order.
    pub fn new(backends: &[(String, Vec<Verdict>)], reports: &Dataset) -> Self {
        let mut columns = Vec::new();
        for mode in [Mode::Single, Mode::Multi] {
            for (label, verdicts) in backends {
                let t = aggregate_metrics(verdicts, reports, GroupBy::Total, mode);
                columns.push((label.clone(), mode, t.total().clone()));
            }
        }
        ComparisonTable { columns }
    }

    pub fn column(&self, label: &str, mode: Mode) -> Option<&MetricsRow> {
        self.columns
            .iter()
            .find(|(l, m, _)| l == label && *m == mode)
            .map(|(_, _, r)| r)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<36}", "");
        for (label, mode, _) in &self.columns {
            let m = match mode {
                Mode::Single => "single",
                Mode::Multi => "multi",
            };
            let _ = write!(out, " {:>18}", format!("{label} ({m})"));
        }
        out.push('\n');
        for (i, name) in METRIC_LABELS.iter().enumerate() {
            let _ = write!(out, "{name:<36}");
            for (_, _, row) in &self.columns {
                let _ = write!(out, " {:>18}", row.ratios()[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        for (label, mode, _) in &self.columns {
            header.push(format!("{label}_{}", if *mode == Mode::Single { "single" } else { "multi" }));
        }
        w.write_record(&header).expect("in-memory write");
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let mut rec = vec![name.to_string()];
            for (_, _, row) in &self.columns {
                rec.push(row.ratios()[i].percent().map_or(String::new(), |p| p.to_string()));
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("group is empty")]
    EmptyGroup,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MwwMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MwwResult {
    /// U statistic of the first group.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: MwwMethod,
}

/// Largest smaller-group size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 8;

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MwwResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let mut all: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        // ranks i+1 ..= j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum_a += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let u = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    let product = (na * nb) as f64;

    if na.min(nb) <= EXACT_MAX_N && tie_term == 0.0 {
        let p = exact_p(na, nb, u.round() as usize);
        return Ok(MwwResult {
            u,
            p_two_sided: p,
            method: MwwMethod::Exact,
        });
    }

    let mu = product / 2.0;
    let nf = n as f64;
    let var = product / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * normal.sf(z)
    };
    Ok(MwwResult {
        u,
        p_two_sided: p.clamp(0.0, 1.0),
        method: MwwMethod::Normal,
    })
}

/// Null distribution of U for sample sizes (na, nb): entry u counts the
/// rank assignments with that statistic.
pub fn u_distribution(na: usize, nb: usize) -> Vec<u128> {
    let m = na.min(nb);
    let n = na + nb;
    let max_u = na * nb;
    // counts[k][s]: subsets of size k of the ranks seen so far with sum s,
    // shifted so that s is the U contribution (sum - k(k+1)/2)
    let mut counts = vec![vec![0u128; max_u + 1]; m + 1];
    counts[0][0] = 1;
    for r in 1..=n {
        for k in (1..=m.min(r)).rev() {
            // choosing rank r as the k-th smallest adds r - k to U
            let add = r - k;
            if add > max_u {
                continue;
            }
            let (lo, hi) = counts.split_at_mut(k);
            let (prev, cur) = (&lo[k - 1], &mut hi[0]);
            for s in (0..=max_u - add).rev() {
                if prev[s] != 0 {
                    cur[s + add] += prev[s];
                }
            }
        }
    }
    counts.pop().expect("m + 1 rows")
}

fn exact_p(na: usize, nb: usize, u: usize) -> f64 {
    let dist = u_distribution(na, nb);
    // the distribution is symmetric, so which group's U is used does not matter
    let total: u128 = dist.iter().sum();
    let le: u128 = dist[..=u.min(dist.len() - 1)].iter().sum();
    let ge: u128 = dist[u.min(dist.len() - 1)..].iter().sum();
    let p = 2.0 * (le.min(ge) as f64) / total as f64;
    p.min(1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplexityError {
    #[error("unbalanced braces (depth {depth})")]
    UnbalancedBraces { depth: i64 },
}

fn is_decision(tokens: &[Token<'_>], i: usize) -> bool {
    let t = &tokens[i];
    match t.kind {
        TokenKind::Ident => matches!(t.text, "if" | "for" | "while" | "do" | "case" | "catch"),
        TokenKind::Punct => match t.text {
            "&&" | "||" => true,
            "?" => {
                let prev_angle = i > 0 && tokens[i - 1].is_punct("<");
                let next_generic = tokens.get(i + 1).is_some_and(|n| {
                    n.is_punct(">") || n.is_punct(",") || n.is_ident("extends") || n.is_ident("super")
                });
                !(prev_angle || next_generic)
            }
            _ => false,
        },
        _ => false,
    }
}

/// McCabe complexity (decision points + 1) of every method, in source order.
/// Source without any recognisable method is scored as a single unit.
pub fn cyclomatic_complexity(source: &str) -> Result<Vec<u32>, ComplexityError> {
    let tokens = tokenize(source);
    match brace_balance(&tokens) {
        Ok(0) => {}
        Ok(depth) => return Err(ComplexityError::UnbalancedBraces { depth }),
        Err(_) => return Err(ComplexityError::UnbalancedBraces { depth: -1 }),
    }
    let methods: Vec<_> = blocks(&tokens)
        .into_iter()
        .filter(|b| matches!(b.kind, BlockKind::Method { .. }))
        .collect();
    if methods.is_empty() {
        let decisions = (0..tokens.len()).filter(|&i| is_decision(&tokens, i)).count();
        return Ok(vec![1 + decisions as u32]);
    }
    // each token belongs to its innermost method
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    for (m, b) in methods.iter().enumerate() {
        for slot in &mut owner[b.open..=b.close.min(tokens.len() - 1)] {
            *slot = Some(m);
        }
    }
    let mut values = vec![1u32; methods.len()];
    for (i, o) in owner.iter().enumerate() {
        if let Some(m) = o {
            if is_decision(&tokens, i) {
                values[*m] += 1;
            }
        }
    }
    Ok(values)
}

/// Five-number summary of report sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SizeSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut data = Data::new(values.to_vec());
        Some(SizeSummary {
            min: data.min(),
            q1: data.lower_quartile(),
            median: data.median(),
            q3: data.upper_quartile(),
            max: data.max(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityClass {
    pub name: &'static str,
    pub count: usize,
    pub with_code: usize,
    pub sizes: Option<SizeSummary>,
}

impl QualityClass {
    pub fn code_presence(&self) -> Ratio {
        Ratio::new(self.with_code, self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub total_reports: usize,
    pub total_with_code: usize,
    /// non_executable, executable, valid, relevant
    pub classes: Vec<QualityClass>,
    /// Sizes of executable vs non-executable reports; `None` when a group is empty.
    pub p_executable: Option<MwwResult>,
    /// Sizes of relevant vs not relevant (undetermined excluded).
    pub p_relevant: Option<MwwResult>,
}

impl QualityReport {
    pub fn overall_code_presence(&self) -> Ratio {
        Ratio::new(self.total_with_code, self.total_reports)
    }

    pub fn class(&self, name: &str) -> Option<&QualityClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "class", "count", "code", "min", "q1", "median", "q3", "max"
        );
        for c in &self.classes {
            let _ = write!(out, "{:<16} {:>6} {:>6}", c.name, c.count, c.code_presence());
            match c.sizes {
                Some(s) => {
                    for v in [s.min, s.q1, s.median, s.q3, s.max] {
                        let _ = write!(out, " {v:>8.1}");
                    }
                }
                None => {
                    for _ in 0..5 {
                        let _ = write!(out, " {:>8}", "—");
                    }
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "all reports: {} with code {}", self.total_reports, self.overall_code_presence());
        let p = |r: &Option<MwwResult>| r.map_or("n/a".to_string(), |r| format!("{:.4}", r.p_two_sided));
        let _ = writeln!(out, "size MWW p (executable vs not): {}", p(&self.p_executable));
        let _ = writeln!(out, "size MWW p (relevant vs not): {}", p(&self.p_relevant));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "count", "with_code", "code_pct", "min", "q1", "median", "q3", "max"])
            .expect("in-memory write");
        for c in &self.classes {
            let mut rec = vec![
                c.name.to_string(),
                c.count.to_string(),
                c.with_code.to_string(),
                c.code_presence().percent().map_or(String::new(), |p| p.to_string()),
            ];
            match c.sizes {
                Some(s) => rec.extend([s.min, s.q1, s.median, s.q3, s.max].iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), 5)),
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

type ClassPredicate = (&'static str, fn(Stage) -> bool);

/// Relates report size and code presence to the best outcome reached per bug.
pub fn quality_report(reports: &Dataset, verdicts: &[Verdict]) -> QualityReport {
    let best = per_bug_verdicts(verdicts, Mode::Multi);
    let preds: [ClassPredicate; 4] = [
        ("non_executable", |s| !s.is_executable()),
        ("executable", Stage::is_executable),
        ("valid", Stage::is_valid),
        ("relevant", Stage::is_relevant),
    ];
    let mut members: Vec<Vec<(f64, bool)>> = vec![Vec::new(); preds.len()];
    let mut exec = (Vec::new(), Vec::new());
    let mut relevant = (Vec::new(), Vec::new());
    for report in &reports.reports {
        let Some(v) = best.get(&report.id) else { continue };
        let size = report.char_size as f64;
        for (k, (_, pred)) in preds.iter().enumerate() {
            if pred(v.stage) {
                members[k].push((size, report.contains_code));
            }
        }
        if v.stage.is_executable() { &mut exec.0 } else { &mut exec.1 }.push(size);
        if v.stage != Stage::RelevanceUndetermined {
            if v.stage.is_relevant() { &mut relevant.0 } else { &mut relevant.1 }.push(size);
        }
    }
    let classes = preds
        .iter()
        .zip(&members)
        .map(|((name, _), m)| {
            let sizes: Vec<f64> = m.iter().map(|x| x.0).collect();
            QualityClass {
                name,
                count: m.len(),
                with_code: m.iter().filter(|x| x.1).count(),
                sizes: SizeSummary::of(&sizes),
            }
        })
        .collect();
    QualityReport {
        total_reports: reports.reports.len(),
        total_with_code: reports.reports.iter().filter(|r| r.contains_code).count(),
        classes,
        p_executable: mann_whitney_u(&exec.0, &exec.1).ok(),
        p_relevant: mann_whitney_u(&relevant.0, &relevant.1).ok(),
    }
}
