//! Turning a raw model completion into a candidate program.
//!
//! The pipeline is: strip reasoning traces, pull code out of markdown fences
//! (falling back to the whole text), then make sure the entry point is
//! actually defined, prepending the problem's signature to body-only
//! responses.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::benchmark::Problem;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const FENCE: &str = "```";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    Fenced,
    FencedUnclosed,
    Bare,
    SignaturePrepended,
    Failed,
}

impl ExtractionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionMethod::Fenced => "fenced",
            ExtractionMethod::FencedUnclosed => "fenced_unclosed",
            ExtractionMethod::Bare => "bare",
            ExtractionMethod::SignaturePrepended => "signature_prepended",
            ExtractionMethod::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub code: String,
    pub method: ExtractionMethod,
    pub stripped_reasoning: bool,
}

impl ExtractionResult {
    pub fn failed(stripped_reasoning: bool) -> Self {
        Self {
            code: String::new(),
            method: ExtractionMethod::Failed,
            stripped_reasoning,
        }
    }
}

/// Removes `<think>...</think>` spans. An unclosed opening tag swallows the
/// rest of the text; an orphan closing tag swallows everything before it.
pub fn strip_reasoning_traces(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let next = strip_once(&current);
        if next == current {
            return next;
        }
        current = next;
    }
}

fn strip_once(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        let open = rest.find(THINK_OPEN);
        let close = rest.find(THINK_CLOSE);
        match (open, close) {
            (Some(o), Some(c)) if c < o => {
                // orphan close: the opening tag was part of the prompt template
                out.clear();
                rest = &rest[c + THINK_CLOSE.len()..];
            }
            (None, Some(c)) => {
                out.clear();
                rest = &rest[c + THINK_CLOSE.len()..];
            }
            (Some(o), _) => {
                out.push_str(&rest[..o]);
                let after = &rest[o + THINK_OPEN.len()..];
                match after.find(THINK_CLOSE) {
                    Some(c) => rest = &after[c + THINK_CLOSE.len()..],
                    None => return out,
                }
            }
            (None, None) => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Fence<'a> {
    body: &'a str,
    closed: bool,
}

fn find_fences(text: &str) -> Vec<Fence<'_>> {
    let mut fences = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find(FENCE) {
        let open_end = pos + rel + FENCE.len();
        let after = &text[open_end..];
        let line_end = after.find('\n');
        let info_line = &after[..line_end.unwrap_or(after.len())];

        // ```code``` on a single line
        if let Some(inline_close) = info_line.find(FENCE) {
            fences.push(Fence {
                body: &after[..inline_close],
                closed: true,
            });
            pos = open_end + inline_close + FENCE.len();
            continue;
        }

        let Some(line_end) = line_end else {
            // opener at the very end with nothing after it
            fences.push(Fence {
                body: "",
                closed: false,
            });
            break;
        };
        let body_start = open_end + line_end + 1;
        match find_closing_fence(&text[body_start..]) {
            Some((body_len, resume)) => {
                fences.push(Fence {
                    body: &text[body_start..body_start + body_len],
                    closed: true,
                });
                pos = body_start + resume;
            }
            None => {
                fences.push(Fence {
                    body: &text[body_start..],
                    closed: false,
                });
                break;
            }
        }
    }
    fences
}

/// Returns (body length, offset just past the closing fence) for the first
/// fence marker that starts a line.
fn find_closing_fence(body: &str) -> Option<(usize, usize)> {
    let mut line_start = 0;
    for line in body.split_inclusive('\n') {
        let trimmed = line.trim_start_matches([' ', '\t']);
        if trimmed.starts_with(FENCE) {
            let marker = line_start + (line.len() - trimmed.len());
            return Some((line_start, marker + FENCE.len()));
        }
        line_start += line.len();
    }
    None
}

/// Drops leading blank lines and trailing whitespace; keeps the first code
/// line's indentation.
fn tidy(body: &str) -> String {
    let mut start = 0;
    for line in body.split_inclusive('\n') {
        if line.trim().is_empty() {
            start += line.len();
        } else {
            break;
        }
    }
    body[start..].trim_end().to_string()
}

/// True when some line reads `def <entry_point>(`, optionally indented or
/// preceded by `async`.
fn defines(code: &str, entry_point: &str) -> bool {
    const BLANK: [char; 2] = [' ', '\t'];
    let after_keyword = |line: &str, keyword: &str| -> Option<usize> {
        let rest = line.strip_prefix(keyword)?;
        let trimmed = rest.trim_start_matches(BLANK);
        (trimmed.len() < rest.len()).then_some(line.len() - trimmed.len())
    };
    code.split('\n').any(|line| {
        let mut line = line.trim_start_matches(BLANK);
        if let Some(skip) = after_keyword(line, "async") {
            line = &line[skip..];
        }
        after_keyword(line, "def")
            .and_then(|skip| line[skip..].strip_prefix(entry_point))
            .is_some_and(|rest| rest.trim_start_matches(BLANK).starts_with('('))
    })
}

/// Returns the selected fence body, or `None` when the text has no fence.
///
/// With several fences, the first one defining `entry_point` wins, else the
/// longest. Language tags are ignored.
pub fn extract_fenced_code(text: &str, entry_point: &str) -> Option<String> {
    select_fence(text, entry_point).map(|f| tidy(f.body))
}

fn select_fence<'a>(text: &'a str, entry_point: &str) -> Option<Fence<'a>> {
    let fences = find_fences(text);
    if let Some(f) = fences.iter().find(|f| defines(f.body, entry_point)) {
        return Some(f.clone());
    }
    let mut best: Option<&Fence> = None;
    for f in &fences {
        if best.is_none_or(|b| f.body.trim().len() > b.body.trim().len()) {
            best = Some(f);
        }
    }
    best.cloned()
}

static LEADING_WS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[ \t]*").unwrap());

/// Returns `code` unchanged if it defines the entry point; otherwise treats it
/// as a function body and prepends the problem's signature line.
pub fn ensure_function(code: &str, problem: &Problem) -> String {
    if defines(code, &problem.entry_point) {
        return code.to_string();
    }
    let signature = problem
        .signature()
        .unwrap_or_else(|| format!("def {}(*args, **kwargs):", problem.entry_point));
    let body = dedent(code);
    let mut out = signature;
    for line in body.lines() {
        out.push('\n');
        if !line.trim().is_empty() {
            out.push_str("    ");
            out.push_str(line);
        }
    }
    out
}

/// Removes the common leading whitespace of all non-blank lines.
fn dedent(code: &str) -> String {
    let margin = code
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| LEADING_WS.find(l).map_or(0, |m| m.end()))
        .min()
        .unwrap_or(0);
    code.lines()
        .map(|l| if l.trim().is_empty() { "" } else { &l[margin..] })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Picks the candidate code from tag-free text, or `None` when nothing is left.
fn extract_once(text: &str, tidy_bare: bool, problem: &Problem) -> Option<(String, ExtractionMethod)> {
    let ep = &problem.entry_point;
    let fence = select_fence(text, ep).filter(|f| defines(f.body, ep) || !defines(text, ep));
    let (code, method) = match fence {
        Some(fence) => {
            let method = if fence.closed {
                ExtractionMethod::Fenced
            } else {
                ExtractionMethod::FencedUnclosed
            };
            (tidy(fence.body), method)
        }
        None if tidy_bare => (tidy(text), ExtractionMethod::Bare),
        None => (text.to_string(), ExtractionMethod::Bare),
    };
    if code.trim().is_empty() {
        return None;
    }
    if defines(&code, ep) {
        Some((code, method))
    } else {
        Some((ensure_function(&code, problem), ExtractionMethod::SignaturePrepended))
    }
}

/// Runs the full pipeline on one completion.
///
/// A fence body may itself hold a fence marker in mid-line, so selection is
/// repeated on its own output until the code is stable. Each repetition that
/// changes the code takes a strictly shorter fence body, which bounds it.
pub fn extract(text: &str, problem: &Problem) -> ExtractionResult {
    let stripped = strip_reasoning_traces(text);
    let stripped_reasoning = stripped != text;
    let Some((mut code, method)) = extract_once(&stripped, stripped_reasoning, problem) else {
        return ExtractionResult::failed(stripped_reasoning);
    };
    while let Some((next, _)) = extract_once(&code, false, problem) {
        if next == code {
            break;
        }
        code = next;
    }
    ExtractionResult {
        code,
        method,
        stripped_reasoning,
    }
}
