//! Spectrum-based fault localization with the Ochiai formula.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{project_of, CoverageSpectrum, SpectrumError, TestOutcome};

#[derive(Debug, Error)]
pub enum SbflError {
    #[error("spectrum has no failing tests")]
    NoFailingTests,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Spectrum {
        path: String,
        #[source]
        source: SpectrumError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Suspiciousness of one program element.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub element: String,
    pub score: f64,
}

/// Ochiai score per element, sorted by descending score (stable on ties,
/// so equal scores keep spectrum order).
pub fn ochiai_scores(spectrum: &CoverageSpectrum) -> Result<Vec<Score>, SbflError> {
    let n_f = spectrum.failing_count();
    if n_f == 0 {
        return Err(SbflError::NoFailingTests);
    }
    let n_elements = spectrum.elements().len();
    let mut n_ef = vec![0usize; n_elements];
    let mut n_ep = vec![0usize; n_elements];
    for (row, outcome) in spectrum.coverage().iter().zip(spectrum.outcomes()) {
        for (e, &covered) in row.iter().enumerate() {
            if covered {
                match outcome {
                    TestOutcome::Fail => n_ef[e] += 1,
                    TestOutcome::Pass => n_ep[e] += 1,
                }
            }
        }
    }
    let mut scores: Vec<Score> = spectrum
        .elements()
        .iter()
        .enumerate()
        .map(|(e, name)| {
            let denom = ((n_f * (n_ef[e] + n_ep[e])) as f64).sqrt();
            let score = if n_ef[e] == 0 || denom == 0.0 {
                0.0
            } else {
                n_ef[e] as f64 / denom
            };
            Score {
                element: name.clone(),
                score,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(scores)
}

/// Tie-aware rank of each element: the 1-based position of the first
/// element in its block of equal scores.
pub fn ranks(scores: &[Score]) -> Vec<usize> {
    let mut out = Vec::with_capacity(scores.len());
    let mut block_start = 1;
    for (i, s) in scores.iter().enumerate() {
        if i > 0 && s.score != scores[i - 1].score {
            block_start = i + 1;
        }
        out.push(block_start);
    }
    out
}

/// Best tie-aware rank of any buggy element.
pub fn best_buggy_rank(scores: &[Score], buggy: &BTreeSet<String>) -> Option<usize> {
    scores
        .iter()
        .zip(ranks(scores))
        .filter(|(s, _)| buggy.contains(&s.element))
        .map(|(_, r)| r)
        .min()
}

pub fn localized_at_k(scores: &[Score], buggy: &BTreeSet<String>, k: usize) -> bool {
    best_buggy_rank(scores, buggy).is_some_and(|r| r <= k)
}

/// Per-project counts of bugs localized within each k.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LocalizationReport {
    pub ks: Vec<usize>,
    /// project -> (bugs, hits per k)
    pub projects: BTreeMap<String, (usize, Vec<usize>)>,
    /// Bugs whose spectrum could not be scored.
    pub skipped: Vec<(String, String)>,
}

impl LocalizationReport {
    pub fn totals(&self) -> (usize, Vec<usize>) {
        let mut hits = vec![0; self.ks.len()];
        let mut bugs = 0;
        for (n, h) in self.projects.values() {
            bugs += n;
            for (t, x) in hits.iter_mut().zip(h) {
                *t += x;
            }
        }
        (bugs, hits)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<20} {:>6}", "project", "bugs");
        for k in &self.ks {
            let _ = write!(out, " {:>7}", format!("top-{k}"));
        }
        out.push('\n');
        let (bugs, hits) = self.totals();
        let rows = self
            .projects
            .iter()
            .map(|(p, (n, h))| (p.as_str(), *n, h.clone()))
            .chain(std::iter::once(("Total", bugs, hits)));
        for (project, n, h) in rows {
            let _ = write!(out, "{project:<20} {n:>6}");
            for x in h {
                let _ = write!(out, " {x:>7}");
            }
            out.push('\n');
        }
        for (bug, why) in &self.skipped {
            let _ = writeln!(out, "skipped {bug}: {why}");
        }
        out
    }
}

/// Aggregates top-k hits over spectra keyed by bug id.
pub fn localization_report(spectra: &BTreeMap<String, CoverageSpectrum>, ks: &[usize]) -> LocalizationReport {
    let mut report = LocalizationReport {
        ks: ks.to_vec(),
        ..Default::default()
    };
    for (bug, spectrum) in spectra {
        let scores = match ochiai_scores(spectrum) {
            Ok(s) => s,
            Err(e) => {
                report.skipped.push((bug.clone(), e.to_string()));
                continue;
            }
        };
        let rank = best_buggy_rank(&scores, spectrum.buggy_elements());
        let entry = report
            .projects
            .entry(project_of(bug).to_string())
            .or_insert_with(|| (0, vec![0; ks.len()]));
        entry.0 += 1;
        for (slot, &k) in entry.1.iter_mut().zip(ks) {
            if rank.is_some_and(|r| r <= k) {
                *slot += 1;
            }
        }
    }
    report
}

/// Text form:
///
/// ```text
/// elements: a,b,c
/// t1,F,110
/// t2,P,011
/// buggy: a
/// ```
pub fn parse_spectrum(text: &str, path: &str) -> Result<CoverageSpectrum, SbflError> {
    let err = |line: usize, message: String| SbflError::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut elements: Option<Vec<String>> = None;
    let mut buggy = BTreeSet::new();
    let mut tests = Vec::new();
    let mut coverage = Vec::new();
    let mut outcomes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("elements:") {
            elements = Some(split_list(rest));
        } else if let Some(rest) = line.strip_prefix("buggy:") {
            buggy.extend(split_list(rest));
        } else {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, outcome, bits] = parts[..] else {
                return Err(err(lineno, "expected `test_id,P|F,bits`".into()));
            };
            let outcome = match outcome {
                "P" => TestOutcome::Pass,
                "F" => TestOutcome::Fail,
                other => return Err(err(lineno, format!("unknown outcome `{other}`"))),
            };
            let row = bits
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    other => Err(err(lineno, format!("bad coverage bit `{other}`"))),
                })
                .collect::<Result<Vec<bool>, _>>()?;
            tests.push(id.to_string());
            outcomes.push(outcome);
            coverage.push(row);
        }
    }
    let elements = elements.ok_or_else(|| err(0, "missing `elements:` line".into()))?;
    CoverageSpectrum::new(elements, tests, coverage, outcomes, buggy).map_err(|source| {
        SbflError::Spectrum {
            path: path.to_string(),
            source,
        }
    })
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn write_spectrum(spectrum: &CoverageSpectrum) -> String {
    let mut out = format!("elements: {}\n", spectrum.elements().join(","));
    for ((id, row), outcome) in spectrum
        .tests()
        .iter()
        .zip(spectrum.coverage())
        .zip(spectrum.outcomes())
    {
        let bits: String = row.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let o = match outcome {
            TestOutcome::Pass => 'P',
            TestOutcome::Fail => 'F',
        };
        let _ = writeln!(out, "{id},{o},{bits}");
    }
    let buggy: Vec<&str> = spectrum.buggy_elements().iter().map(String::as_str).collect();
    let _ = writeln!(out, "buggy: {}", buggy.join(","));
    out
}

/// Loads every `*.spectrum` file in `dir`; the file stem is the bug id.
pub fn load_spectra_dir(dir: &Path) -> Result<BTreeMap<String, CoverageSpectrum>, SbflError> {
    let io = |source| SbflError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("spectrum") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(|source| SbflError::Io {
            path: path.display().to_string(),
            source,
        })?;
        out.insert(stem.to_string(), parse_spectrum(&text, &path.display().to_string())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(text: &str) -> CoverageSpectrum {
        parse_spectrum(text, "t").unwrap()
    }

    #[test]
    fn ochiai_values() {
        // e1 covered by the failing test only; e2 by both; e3 by the passing one
        let s = spectrum("elements: e1,e2,e3\nt1,F,110\nt2,P,011\nbuggy: e1\n");
        let scores = ochiai_scores(&s).unwrap();
        assert_eq!(scores[0].element, "e1");
        assert!((scores[0].score - 1.0).abs() < 1e-12);
        assert_eq!(scores[1].element, "e2");
        assert!((scores[1].score - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(scores[2].score, 0.0);
        assert!(localized_at_k(&scores, s.buggy_elements(), 1));
    }

    #[test]
    fn no_failing_tests() {
        let s = spectrum("elements: a\nt,P,1\nbuggy: a\n");
        assert!(matches!(ochiai_scores(&s), Err(SbflError::NoFailingTests)));
    }

    #[test]
    fn ties_count_from_block_start() {
        let s = spectrum("elements: a,b,c,d\nt1,F,1110\nt2,P,0001\nbuggy: c\n");
        let scores = ochiai_scores(&s).unwrap();
        assert_eq!(ranks(&scores), vec![1, 1, 1, 4]);
        assert!(localized_at_k(&scores, s.buggy_elements(), 1));
        let s = spectrum("elements: a,b,c,d\nt1,F,1111\nt2,P,1000\nbuggy: a\n");
        let scores = ochiai_scores(&s).unwrap();
        assert_eq!(best_buggy_rank(&scores, s.buggy_elements()), Some(4));
        assert!(!localized_at_k(&scores, s.buggy_elements(), 3));
    }

    #[test]
    fn round_trip() {
        let text = "elements: a,b\nt1,F,10\nt2,P,11\nbuggy: a,b\n";
        assert_eq!(write_spectrum(&spectrum(text)), text);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_spectrum("elements: a\nt1,X,1\n", "f"),
            Err(SbflError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_spectrum("elements: a,b\nt1,F,1\n", "f"),
            Err(SbflError::Spectrum { .. })
        ));
    }

    #[test]
    fn report_per_project() {
        let mut spectra = BTreeMap::new();
        spectra.insert("Lang-1".into(), spectrum("elements: a,b\nt,F,10\nbuggy: a\n"));
        spectra.insert("Lang-2".into(), spectrum("elements: a,b\nt,F,10\nbuggy: b\n"));
        spectra.insert("Time-1".into(), spectrum("elements: a\nt,P,1\nbuggy: a\n"));
        let r = localization_report(&spectra, &[1, 5]);
        assert_eq!(r.projects["Lang"], (2, vec![1, 2]));
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.totals(), (2, vec![1, 2]));
    }
}
