//! Turning raw model output into an injectable test class.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::lexer::{blocks, brace_balance, tokenize, BlockKind, TokenKind};

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn first_word(t: &str) -> &str {
    t.split(|c: char| c.is_whitespace() || c == '(').next().unwrap_or("")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineClass {
    Code,
    /// Blank lines, comments and expression continuations: they neither
    /// start nor break a run.
    Neutral,
    Prose,
}

fn classify_lines(text: &str) -> Vec<(&str, LineClass)> {
    let mut in_block_comment = false;
    let mut lines: Vec<(&str, LineClass)> = text
        .lines()
        .map(|line| {
            let t = line.trim();
            let class = if in_block_comment {
                if t.contains("*/") {
                    in_block_comment = false;
                }
                LineClass::Neutral
            } else if t.starts_with("/*") {
                in_block_comment = !t.contains("*/");
                LineClass::Neutral
            } else if t.is_empty() || t.starts_with("//") {
                LineClass::Neutral
            } else if is_code_like(t) {
                LineClass::Code
            } else if is_continuation(t) {
                LineClass::Neutral
            } else {
                LineClass::Prose
            };
            (line, class)
        })
        .collect();
    // a line followed by `.build()` or `+ x` starts a multi-line expression
    for i in 0..lines.len() {
        if lines[i].1 != LineClass::Prose {
            continue;
        }
        if let Some((next, _)) = lines[i + 1..].iter().find(|(l, _)| !l.trim().is_empty()) {
            let t = next.trim();
            if !t.starts_with("...") && [".", "+", "&&", "||"].iter().any(|h| t.starts_with(h)) {
                lines[i].1 = LineClass::Neutral;
            }
        }
    }
    lines
}

fn is_code_like(t: &str) -> bool {
    t.ends_with(';')
        || t.ends_with('{')
        || t.ends_with('}')
        || t.starts_with('@')
        || matches!(first_word(t), "import" | "public" | "private" | "protected")
}

fn is_continuation(t: &str) -> bool {
    const TAILS: [&str; 5] = [",", "(", "+", "&&", "||"];
    const HEADS: [&str; 5] = [".", "+", ")", "&&", "||"];
    TAILS.iter().any(|s| t.ends_with(s)) || HEADS.iter().any(|s| t.starts_with(s))
}

fn trim_blank_edges(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

fn fenced_blocks(raw: &str) -> Option<Vec<String>> {
    if !raw.lines().any(is_fence) {
        return None;
    }
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in raw.lines() {
        if is_fence(line) {
            match current.take() {
                Some(lines) => blocks.push(trim_blank_edges(&lines)),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    // unterminated fence runs to the end of the output
    if let Some(lines) = current {
        blocks.push(trim_blank_edges(&lines));
    }
    Some(blocks.into_iter().filter(|b| !b.is_empty()).collect())
}

/// Longest maximal run of code-like lines, counting code lines only.
fn longest_code_run(text: &str) -> Option<String> {
    let lines = classify_lines(text);
    if !lines.iter().any(|(_, c)| *c == LineClass::Prose) {
        let code = lines.iter().any(|(_, c)| *c == LineClass::Code);
        return code.then(|| trim_blank_edges(&lines.iter().map(|(l, _)| *l).collect::<Vec<_>>()));
    }
    let mut best: Option<(usize, usize, usize)> = None; // (code lines, first, last)
    let mut run: Option<(usize, usize, usize)> = None;
    for (idx, (_, class)) in lines.iter().enumerate() {
        match class {
            LineClass::Code => {
                run = Some(match run {
                    Some((n, first, _)) => (n + 1, first, idx),
                    None => (1, idx, idx),
                });
            }
            LineClass::Neutral => {}
            LineClass::Prose => {
                if let Some(r) = run.take() {
                    if best.is_none_or(|b| r.0 > b.0) {
                        best = Some(r);
                    }
                }
            }
        }
    }
    if let Some(r) = run {
        if best.is_none_or(|b| r.0 > b.0) {
            best = Some(r);
        }
    }
    let (count, first, last) = best?;
    if count < 2 {
        return None;
    }
    // keep comments and expression heads directly above the run
    let mut start = first;
    while start > 0 {
        let (line, class) = lines[start - 1];
        if class == LineClass::Neutral && !line.trim().is_empty() {
            start -= 1;
        } else {
            break;
        }
    }
    let slice: Vec<&str> = lines[start..=last].iter().map(|(l, _)| *l).collect();
    Some(trim_blank_edges(&slice))
}

/// Strips natural-language text from a model answer.
///
/// Fenced blocks win when present and are concatenated in order; otherwise
/// the longest run of code-like lines is kept. `None` means nothing usable.
pub fn extract_code(raw_output: &str) -> Option<String> {
    match fenced_blocks(raw_output) {
        Some(blocks) if !blocks.is_empty() => Some(blocks.join("\n\n")),
        Some(_) => {
            let outside: Vec<&str> = raw_output.lines().filter(|l| !is_fence(l)).collect();
            longest_code_run(&outside.join("\n"))
        }
        None => longest_code_run(raw_output),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("no code to assemble")]
    EmptyCode,
    #[error("unbalanced braces (depth {depth} at end of code)")]
    UnbalancedBraces { depth: i64 },
}

/// How an assembled test class and its methods are named.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamingPolicy {
    pub class_name: String,
    pub method_suffix: String,
    /// Superclass for wrapped bare methods, e.g. `junit.framework.TestCase`.
    pub extends: Option<String>,
}

fn sanitize(id: &str) -> String {
    id.chars().filter(|c| c.is_ascii_alphanumeric() || *c == '_').collect()
}

impl NamingPolicy {
    pub fn new(class_name: impl Into<String>) -> Self {
        let class_name = class_name.into();
        NamingPolicy {
            method_suffix: String::new(),
            class_name,
            extends: None,
        }
    }

    /// Deterministic names derived from the bug and attempt.
    pub fn for_generation(bug_id: &str, attempt: u32) -> Self {
        let tag = format!("{}_a{}", sanitize(bug_id), attempt);
        NamingPolicy {
            class_name: format!("GenTest_{tag}"),
            method_suffix: format!("_{tag}"),
            extends: None,
        }
    }

    pub fn with_extends(mut self, superclass: Option<String>) -> Self {
        self.extends = superclass;
        self
    }
}

fn decl_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(import|package)\s+(static\s+)?[A-Za-z_$][\w$]*(\.[A-Za-z_$][\w$]*)*(\.\*)?\s*;$")
            .unwrap()
    })
}

/// Names left alone because a test framework calls them by name.
const LIFECYCLE: [&str; 4] = ["setUp", "tearDown", "suite", "main"];

/// Wraps or renames generated code into one uniquely named test class.
pub fn assemble_test_class(code: &str, naming: &NamingPolicy) -> Result<String, AssembleError> {
    if code.trim().is_empty() {
        return Err(AssembleError::EmptyCode);
    }
    match brace_balance(&tokenize(code)) {
        Ok(0) => {}
        Ok(depth) => return Err(AssembleError::UnbalancedBraces { depth }),
        Err(_) => return Err(AssembleError::UnbalancedBraces { depth: -1 }),
    }

    let mut package: Option<String> = None;
    let mut imports: Vec<String> = Vec::new();
    let mut body_lines: Vec<&str> = Vec::new();
    for line in code.lines() {
        let t = line.trim();
        if decl_re().is_match(t) {
            if t.starts_with("package") {
                package.get_or_insert_with(|| t.to_string());
            } else if !imports.iter().any(|i| i == t) {
                imports.push(t.to_string());
            }
        } else {
            body_lines.push(line);
        }
    }
    let body = trim_blank_edges(&body_lines);
    let tokens = tokenize(&body);
    let structure = blocks(&tokens);

    let top_types: Vec<&str> = structure
        .iter()
        .filter(|b| b.depth == 0)
        .filter_map(|b| match &b.kind {
            BlockKind::Type { name } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    // tokens outside any top-level block, other than a type's header
    let mut covered = vec![false; tokens.len()];
    for b in structure.iter().filter(|b| b.depth == 0) {
        let from = if matches!(b.kind, BlockKind::Type { .. }) { b.header_start } else { b.open };
        for c in covered.iter_mut().take((b.close + 1).min(tokens.len())).skip(from) {
            *c = true;
        }
    }
    let stray = covered.iter().any(|c| !c);
    let single_type = top_types.len() == 1 && !stray;

    // methods declared at class-body level (or top level for bare methods)
    let owner_depth = usize::from(single_type);
    let mut renames: BTreeMap<String, String> = BTreeMap::new();
    let type_name = single_type.then(|| top_types[0].to_string());
    for b in &structure {
        let BlockKind::Method { name } = &b.kind else { continue };
        if b.depth != owner_depth {
            continue;
        }
        if Some(name) == type_name.as_ref() || LIFECYCLE.contains(&name.as_str()) {
            continue;
        }
        let header = &tokens[b.header_start..b.open];
        let overrides = header
            .windows(2)
            .any(|w| w[0].is_punct("@") && w[1].is_ident("Override"));
        if overrides || naming.method_suffix.is_empty() {
            continue;
        }
        renames.insert(name.clone(), format!("{name}{}", naming.method_suffix));
    }

    let mut edits: Vec<(usize, usize, String)> = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.kind != TokenKind::Ident {
            continue;
        }
        if let Some(old) = &type_name {
            if t.text == old {
                edits.push((t.start, t.end(), naming.class_name.clone()));
                continue;
            }
        }
        if let Some(new) = renames.get(t.text) {
            let called = tokens.get(i + 1).is_some_and(|n| n.is_punct("("));
            let qualified = i > 0 && tokens[i - 1].is_punct(".");
            let via_this = i > 1 && qualified && tokens[i - 2].is_ident("this");
            if called && (!qualified || via_this) {
                edits.push((t.start, t.end(), new.clone()));
            }
        }
    }
    let mut rewritten = String::with_capacity(body.len() + 64);
    let mut last = 0;
    for (start, end, text) in edits {
        rewritten.push_str(&body[last..start]);
        rewritten.push_str(&text);
        last = end;
    }
    rewritten.push_str(&body[last..]);

    let mut out = String::new();
    if let Some(p) = &package {
        out.push_str(p);
        out.push_str("\n\n");
    }
    for i in &imports {
        out.push_str(i);
        out.push('\n');
    }
    if !imports.is_empty() {
        out.push('\n');
    }
    if single_type {
        out.push_str(&rewritten);
        out.push('\n');
    } else {
        out.push_str("public class ");
        out.push_str(&naming.class_name);
        if let Some(sup) = &naming.extends {
            out.push_str(" extends ");
            out.push_str(sup);
        }
        out.push_str(" {\n\n");
        out.push_str(&rewritten);
        out.push_str("\n\n}\n");
    }
    Ok(out)
}

/// Identifiers declared as top-level types in `source`.
pub fn top_level_types(source: &str) -> Vec<String> {
    let tokens = tokenize(source);
    blocks(&tokens)
        .into_iter()
        .filter(|b| b.depth == 0)
        .filter_map(|b| match b.kind {
            BlockKind::Type { name } => Some(name),
            _ => None,
        })
        .collect()
}

/// Method names declared anywhere in `source`, in order.
pub fn declared_methods(source: &str) -> Vec<String> {
    let tokens = tokenize(source);
    blocks(&tokens)
        .into_iter()
        .filter_map(|b| match b.kind {
            BlockKind::Method { name } => Some(name),
            _ => None,
        })
        .collect()
}

/// Distinct names check used by tests and the harness.
pub fn has_unique_methods(source: &str) -> bool {
    let names = declared_methods(source);
    let unique: HashSet<&String> = names.iter().collect();
    unique.len() == names.len()
}
