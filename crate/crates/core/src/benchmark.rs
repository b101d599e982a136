//! Benchmark loading and normalization.
//!
//! Both supported layouts (HumanEval and MBPP-sanitized) are line-delimited
//! JSON records. Each loader maps its records onto the common [`Problem`]
//! model; a [`ProblemSet`] is always sorted by `task_id` so that runs iterate
//! problems in the same order on every machine.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use flate2::read::GzDecoder;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("duplicate task_id `{0}`")]
    DuplicateId(String),
    #[error("task {task_id}: cannot determine entry point: {reason}")]
    Normalization { task_id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    Humaneval,
    MbppSanitized,
}

impl BenchmarkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkKind::Humaneval => "humaneval",
            BenchmarkKind::MbppSanitized => "mbpp_sanitized",
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "humaneval" => Ok(BenchmarkKind::Humaneval),
            "mbpp" | "mbpp_sanitized" | "mbpp-sanitized" => Ok(BenchmarkKind::MbppSanitized),
            other => Err(format!("unknown benchmark `{other}` (expected humaneval or mbpp)")),
        }
    }
}

/// One benchmark task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub task_id: String,
    /// Text shown to the model at round 0.
    pub prompt: String,
    pub entry_point: String,
    /// Assertion code that raises on failure; runs after the candidate.
    pub test_program: String,
    pub source_benchmark: BenchmarkKind,
}

impl Problem {
    /// The `def` line of the entry point as it appears in the prompt, joined
    /// onto one line when the signature spans several.
    pub fn signature(&self) -> Option<String> {
        find_signature(&self.prompt, &self.entry_point)
    }
}

/// An immutable, task_id-sorted collection of problems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSet {
    pub name: String,
    problems: Vec<Problem>,
}

impl ProblemSet {
    /// Builds a set, sorting by task_id and rejecting duplicate ids.
    pub fn new(name: impl Into<String>, mut problems: Vec<Problem>) -> Result<Self, LoadError> {
        problems.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        for pair in problems.windows(2) {
            if pair[0].task_id == pair[1].task_id {
                return Err(LoadError::DuplicateId(pair[0].task_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            problems,
        })
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&Problem> {
        self.problems
            .binary_search_by(|p| p.task_id.as_str().cmp(task_id))
            .ok()
            .map(|i| &self.problems[i])
    }

    pub fn kind(&self) -> Option<BenchmarkKind> {
        self.problems.first().map(|p| p.source_benchmark)
    }

    /// SHA-256 over the normalized records; identifies the set in run ids.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.problems {
            let line = serde_json::to_string(p).expect("problem serializes");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Writes the normalized form, one JSON record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.problems {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct HumanEvalRecord {
    task_id: Option<String>,
    prompt: Option<String>,
    entry_point: Option<String>,
    test: Option<String>,
    #[allow(dead_code)]
    canonical_solution: Option<String>,
}

#[derive(Deserialize)]
struct MbppRecord {
    task_id: Option<serde_json::Value>,
    prompt: Option<String>,
    text: Option<String>,
    code: Option<String>,
    test_list: Option<Vec<String>>,
    #[serde(default)]
    test_imports: Vec<String>,
}

fn open_lines(path: &Path) -> Result<Vec<String>, LoadError> {
    let io_err = |source| LoadError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    BufReader::new(reader)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err)
}

fn required<T>(value: Option<T>, line: usize, field: &str) -> Result<T, LoadError> {
    value.ok_or_else(|| LoadError::MissingField {
        line,
        field: field.to_string(),
    })
}

fn parse_record<T: for<'de> Deserialize<'de>>(raw: &str, line: usize) -> Result<T, LoadError> {
    serde_json::from_str(raw).map_err(|e| LoadError::Malformed {
        line,
        message: e.to_string(),
    })
}

fn set_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a HumanEval-layout file (optionally gzip-compressed).
pub fn load_humaneval(path: &Path) -> Result<ProblemSet, LoadError> {
    let mut problems = Vec::new();
    for (idx, raw) in open_lines(path)?.iter().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: HumanEvalRecord = parse_record(raw, line)?;
        let task_id = required(rec.task_id, line, "task_id")?;
        let prompt = required(rec.prompt, line, "prompt")?;
        let entry_point = required(rec.entry_point, line, "entry_point")?;
        let test = required(rec.test, line, "test")?;
        problems.push(Problem {
            test_program: humaneval_test_program(&test, &entry_point),
            task_id,
            prompt,
            entry_point,
            source_benchmark: BenchmarkKind::Humaneval,
        });
    }
    ProblemSet::new(set_name(path), problems)
}

fn humaneval_test_program(test: &str, entry_point: &str) -> String {
    let mut program = test.trim_end().to_string();
    program.push_str("\n\n");
    program.push_str(&format!("check({entry_point})\n"));
    program
}

/// Loads an MBPP-sanitized-layout file (optionally gzip-compressed).
pub fn load_mbpp_sanitized(path: &Path) -> Result<ProblemSet, LoadError> {
    let mut problems = Vec::new();
    for (idx, raw) in open_lines(path)?.iter().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: MbppRecord = parse_record(raw, line)?;
        let task_id = match required(rec.task_id, line, "task_id")? {
            serde_json::Value::Number(n) => format!("Mbpp/{n}"),
            serde_json::Value::String(s) if s.contains('/') => s,
            serde_json::Value::String(s) => format!("Mbpp/{s}"),
            other => {
                return Err(LoadError::Malformed {
                    line,
                    message: format!("task_id must be a number or string, got {other}"),
                })
            }
        };
        let description = required(rec.prompt.or(rec.text), line, "prompt")?;
        let code = required(rec.code, line, "code")?;
        let test_list = required(rec.test_list, line, "test_list")?;

        let entry_point = mbpp_entry_point(&code, &test_list).ok_or_else(|| {
            LoadError::Normalization {
                task_id: task_id.clone(),
                reason: "reference solution defines no top-level function".into(),
            }
        })?;
        let signature = find_signature(&code, &entry_point).ok_or_else(|| {
            LoadError::Normalization {
                task_id: task_id.clone(),
                reason: format!("no signature line for `{entry_point}`"),
            }
        })?;
        let prompt = format!(
            "{}\nYour function must be named `{}` and match the signature `{}`",
            description.trim_end(),
            entry_point,
            signature
        );

        let mut test_program = String::new();
        for import in &rec.test_imports {
            test_program.push_str(import.trim_end());
            test_program.push('\n');
        }
        for assertion in &test_list {
            test_program.push_str(assertion.trim_end());
            test_program.push('\n');
        }

        problems.push(Problem {
            task_id,
            prompt,
            entry_point,
            test_program,
            source_benchmark: BenchmarkKind::MbppSanitized,
        });
    }
    ProblemSet::new(set_name(path), problems)
}

/// Loads a set previously written with [`ProblemSet::write_jsonl`].
pub fn load_normalized(path: &Path) -> Result<ProblemSet, LoadError> {
    let mut problems = Vec::new();
    for (idx, raw) in open_lines(path)?.iter().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        problems.push(parse_record::<Problem>(raw, idx + 1)?);
    }
    ProblemSet::new(set_name(path), problems)
}

pub fn load(kind: BenchmarkKind, path: &Path) -> Result<ProblemSet, LoadError> {
    match kind {
        BenchmarkKind::Humaneval => load_humaneval(path),
        BenchmarkKind::MbppSanitized => load_mbpp_sanitized(path),
    }
}

static TOP_LEVEL_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap());
static CALLED_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());
static IDENT_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").unwrap());

/// Picks the reference solution's function that the first test calls;
/// falls back to the first top-level definition.
fn mbpp_entry_point(code: &str, test_list: &[String]) -> Option<String> {
    let defined: Vec<&str> = TOP_LEVEL_DEF
        .captures_iter(code)
        .map(|c| c.get(1).unwrap().as_str())
        .collect();
    let first = *defined.first()?;
    if let Some(first_test) = test_list.first() {
        for call in CALLED_NAME.captures_iter(first_test) {
            let name = call.get(1).unwrap().as_str();
            if defined.contains(&name) {
                return Some(name.to_string());
            }
        }
    }
    Some(first.to_string())
}

/// Finds `def <name>(...)...:` in `text` and returns it on a single line.
pub(crate) fn find_signature(text: &str, name: &str) -> Option<String> {
    let pattern = format!(r"(?:async\s+)?def\s+{}\s*\(", regex::escape(name));
    let re = Regex::new(&pattern).ok()?;
    let m = re.find(text)?;
    let mut depth = 0i32;
    let mut end = None;
    for (offset, ch) in text[m.start()..].char_indices() {
        match ch {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ':' if depth == 0 => {
                end = Some(m.start() + offset + 1);
                break;
            }
            '\n' if depth == 0 => break,
            _ => {}
        }
    }
    let raw = &text[m.start()..end?];
    let joined = raw
        .lines()
        .map(str::trim)
        .collect::<Vec<_>>()
        .join(" ")
        .replace("( ", "(")
        .replace(" )", ")");
    Some(joined)
}

pub fn is_identifier(s: &str) -> bool {
    IDENT.is_match(s)
}

/// Checks whether a program is syntactically valid. Implemented by the
/// sandbox executor through the runner's parse-only mode.
pub trait ParseCheck {
    /// `Ok(None)` when the program parses, `Ok(Some(message))` when it does
    /// not, `Err` when the check itself could not run.
    fn parse_error(&self, program: &str) -> Result<Option<String>, String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub task_id: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks every problem's invariants. An empty result means the set is clean.
pub fn validate(set: &ProblemSet, parser: Option<&dyn ParseCheck>) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |task_id: &str, message: String| {
        findings.push(Finding {
            task_id: task_id.to_string(),
            message,
        })
    };
    for p in set.problems() {
        let id = p.task_id.as_str();
        if !seen.insert(id) {
            push(id, format!("duplicate task_id: {id}"));
        }
        if p.prompt.trim().is_empty() {
            push(id, format!("empty prompt: {id}"));
        }
        if !is_identifier(&p.entry_point) {
            push(id, format!("invalid entry point `{}`: {id}", p.entry_point));
        }
        if p.test_program.trim().is_empty() {
            push(id, format!("empty tests: {id}"));
            continue;
        }
        if !IDENT_TOKEN
            .find_iter(&p.test_program)
            .any(|m| m.as_str() == p.entry_point)
        {
            push(id, format!("entry point `{}` never referenced by tests: {id}", p.entry_point));
        }
        if p.signature().is_none() {
            push(id, format!("no signature for `{}` in prompt: {id}", p.entry_point));
        }
        if let Some(parser) = parser {
            match parser.parse_error(&p.test_program) {
                Ok(None) => {}
                Ok(Some(msg)) => push(id, format!("unparseable tests: {id}: {msg}")),
                Err(msg) => push(id, format!("parse check failed: {id}: {msg}")),
            }
        }
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn he_line(id: &str, ep: &str) -> String {
        serde_json::json!({
            "task_id": id,
            "prompt": format!("def {ep}(a, b):\n    \"\"\"Add.\"\"\"\n"),
            "entry_point": ep,
            "canonical_solution": "    return a + b\n",
            "test": "def check(candidate):\n    assert candidate(1, 2) == 3\n",
        })
        .to_string()
    }

    #[test]
    fn humaneval_appends_check_call() {
        let f = write_tmp(&he_line("HumanEval/0", "add"), ".jsonl");
        let set = load_humaneval(f.path()).unwrap();
        assert_eq!(set.len(), 1);
        let p = &set.problems()[0];
        assert!(p.test_program.ends_with("\n\ncheck(add)\n"));
        assert_eq!(p.prompt, "def add(a, b):\n    \"\"\"Add.\"\"\"\n");
        assert_eq!(p.signature().as_deref(), Some("def add(a, b):"));
    }

    #[test]
    fn empty_file_is_empty_set() {
        let f = write_tmp("", ".jsonl");
        assert_eq!(load_humaneval(f.path()).unwrap().len(), 0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let body = format!("{}\n{}\n", he_line("HumanEval/1", "a"), he_line("HumanEval/1", "b"));
        let f = write_tmp(&body, ".jsonl");
        assert!(matches!(load_humaneval(f.path()), Err(LoadError::DuplicateId(id)) if id == "HumanEval/1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let body = format!("{}\n{{not json\n", he_line("HumanEval/1", "a"));
        let f = write_tmp(&body, ".jsonl");
        assert!(matches!(load_humaneval(f.path()), Err(LoadError::Malformed { line: 2, .. })));
    }

    #[test]
    fn missing_field_named() {
        let f = write_tmp(r#"{"task_id":"x","prompt":"p","test":"t"}"#, ".jsonl");
        match load_humaneval(f.path()) {
            Err(LoadError::MissingField { line: 1, field }) => assert_eq!(field, "entry_point"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sorted_lexicographically() {
        let body = [he_line("HumanEval/2", "b"), he_line("HumanEval/10", "c"), he_line("HumanEval/1", "a")]
            .join("\n");
        let f = write_tmp(&body, ".jsonl");
        let ids: Vec<_> = load_humaneval(f.path())
            .unwrap()
            .problems()
            .iter()
            .map(|p| p.task_id.clone())
            .collect();
        assert_eq!(ids, ["HumanEval/1", "HumanEval/10", "HumanEval/2"]);
    }

    #[test]
    fn gzip_is_transparent() {
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(he_line("HumanEval/0", "add").as_bytes()).unwrap();
        let bytes = enc.finish().unwrap();
        let mut f = tempfile::Builder::new().suffix(".jsonl.gz").tempfile().unwrap();
        f.write_all(&bytes).unwrap();
        assert_eq!(load_humaneval(f.path()).unwrap().len(), 1);
    }

    #[test]
    fn mbpp_normalization() {
        let rec = serde_json::json!({
            "task_id": 7,
            "prompt": "Write a function to find all words which are at least 4 characters long in a string.",
            "code": "import re\ndef _helper(x):\n    return x\ndef find_char_long(text):\n  return (re.findall(r\"\\b\\w{4,}\\b\", text))",
            "test_imports": [],
            "test_list": [
                "assert set(find_char_long('Please move back to stream')) == set(['Please', 'move', 'back', 'stream'])",
                "assert set(find_char_long('Jing Eco and Tech')) == set(['Jing', 'Tech'])",
                "assert set(find_char_long('Jhingai wulu road Zone 3')) == set(['Jhingai', 'wulu', 'road', 'Zone'])"
            ]
        });
        let f = write_tmp(&rec.to_string(), ".jsonl");
        let set = load_mbpp_sanitized(f.path()).unwrap();
        let p = &set.problems()[0];
        assert_eq!(p.task_id, "Mbpp/7");
        assert_eq!(p.entry_point, "find_char_long");
        assert_eq!(p.test_program.lines().filter(|l| l.starts_with("assert")).count(), 3);
        assert!(p.prompt.ends_with(
            "Your function must be named `find_char_long` and match the signature `def find_char_long(text):`"
        ));
        assert!(!p.prompt.contains("assert"));
    }

    #[test]
    fn mbpp_unparseable_entry_point() {
        let rec = serde_json::json!({
            "task_id": 3, "prompt": "x", "code": "x = 1", "test_list": ["assert x == 1"]
        });
        let f = write_tmp(&rec.to_string(), ".jsonl");
        assert!(matches!(
            load_mbpp_sanitized(f.path()),
            Err(LoadError::Normalization { task_id, .. }) if task_id == "Mbpp/3"
        ));
    }

    #[test]
    fn multi_line_signature_joined() {
        let prompt = "from typing import List\n\n\ndef f(\n    a: List[int],\n    b: int,\n) -> int:\n    \"\"\"doc\"\"\"\n";
        assert_eq!(
            find_signature(prompt, "f").as_deref(),
            Some("def f(a: List[int], b: int,) -> int:")
        );
    }

    #[test]
    fn validate_reports_empty_tests() {
        let set = ProblemSet::new(
            "t",
            vec![Problem {
                task_id: "T/1".into(),
                prompt: "def f():\n".into(),
                entry_point: "f".into(),
                test_program: "  ".into(),
                source_benchmark: BenchmarkKind::Humaneval,
            }],
        )
        .unwrap();
        let findings = validate(&set, None);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].message, "empty tests: T/1");
    }

    struct RejectAll;
    impl ParseCheck for RejectAll {
        fn parse_error(&self, _: &str) -> Result<Option<String>, String> {
            Ok(Some("SyntaxError".into()))
        }
    }

    #[test]
    fn validate_uses_parse_check() {
        let f = write_tmp(&he_line("HumanEval/0", "add"), ".jsonl");
        let set = load_humaneval(f.path()).unwrap();
        assert!(validate(&set, None).is_empty());
        let findings = validate(&set, Some(&RejectAll));
        assert!(findings[0].message.starts_with("unparseable tests"));
    }
}
