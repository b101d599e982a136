//! Running candidates against benchmark tests in a separate process.
//!
//! The executor never interprets Python itself. It writes the candidate and
//! the test program into a fresh scratch directory, invokes a runner program
//! on the two files and reads back exactly one protocol line:
//!
//! ```text
//! {"status":"pass"}
//! {"status":"fail","exception":"<Name>","traceback":"<text>","duration_ms":<int>}
//! ```
//!
//! Wall-clock limits are enforced here; the runner's whole process group is
//! killed on expiry.

use std::fmt;
use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::benchmark::{ParseCheck, Problem};

/// Failure taxonomy. The first six families mirror the exception-based
/// categories; `ExtractionFailure`, `ApiError` and `Other` are harness
/// additions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Assertion,
    Syntax,
    Type,
    Value,
    Name,
    Index,
    Key,
    Timeout,
    ExtractionFailure,
    ApiError,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 11] = [
        ErrorCategory::Assertion,
        ErrorCategory::Syntax,
        ErrorCategory::Type,
        ErrorCategory::Value,
        ErrorCategory::Name,
        ErrorCategory::Index,
        ErrorCategory::Key,
        ErrorCategory::Timeout,
        ErrorCategory::ExtractionFailure,
        ErrorCategory::ApiError,
        ErrorCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Assertion => "assertion",
            ErrorCategory::Syntax => "syntax",
            ErrorCategory::Type => "type",
            ErrorCategory::Value => "value",
            ErrorCategory::Name => "name",
            ErrorCategory::Index => "index",
            ErrorCategory::Key => "key",
            ErrorCategory::Timeout => "timeout",
            ErrorCategory::ExtractionFailure => "extraction_failure",
            ErrorCategory::ApiError => "api_error",
            ErrorCategory::Other => "other",
        }
    }

    /// Reporting bucket: type/value and index/key are merged.
    pub fn report_bucket(self) -> ReportBucket {
        match self {
            ErrorCategory::Assertion => ReportBucket::Assertion,
            ErrorCategory::Syntax => ReportBucket::Syntax,
            ErrorCategory::Type | ErrorCategory::Value => ReportBucket::TypeValue,
            ErrorCategory::Name => ReportBucket::Name,
            ErrorCategory::Index | ErrorCategory::Key => ReportBucket::IndexKey,
            ErrorCategory::Timeout => ReportBucket::Timeout,
            ErrorCategory::ExtractionFailure => ReportBucket::ExtractionFailure,
            ErrorCategory::ApiError => ReportBucket::ApiError,
            ErrorCategory::Other => ReportBucket::Other,
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown error category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReportBucket {
    Assertion,
    Syntax,
    TypeValue,
    Name,
    IndexKey,
    Timeout,
    ExtractionFailure,
    ApiError,
    Other,
}

impl ReportBucket {
    pub const ALL: [ReportBucket; 9] = [
        ReportBucket::Assertion,
        ReportBucket::Syntax,
        ReportBucket::TypeValue,
        ReportBucket::Name,
        ReportBucket::IndexKey,
        ReportBucket::Timeout,
        ReportBucket::ExtractionFailure,
        ReportBucket::ApiError,
        ReportBucket::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportBucket::Assertion => "assertion",
            ReportBucket::Syntax => "syntax",
            ReportBucket::TypeValue => "type_value",
            ReportBucket::Name => "name",
            ReportBucket::IndexKey => "index_key",
            ReportBucket::Timeout => "timeout",
            ReportBucket::ExtractionFailure => "extraction_failure",
            ReportBucket::ApiError => "api_error",
            ReportBucket::Other => "other",
        }
    }

    /// The six exception families of the taxonomy proper.
    pub fn is_core(self) -> bool {
        !matches!(
            self,
            ReportBucket::ExtractionFailure | ReportBucket::ApiError | ReportBucket::Other
        )
    }
}

/// Maps a Python exception type name onto the taxonomy. Module prefixes are
/// ignored (`builtins.KeyError` is `key`).
pub fn classify(exception_name: &str) -> ErrorCategory {
    let name = exception_name.trim();
    let name = name.rsplit('.').next().unwrap_or(name);
    match name {
        "AssertionError" => ErrorCategory::Assertion,
        "SyntaxError" | "IndentationError" | "TabError" => ErrorCategory::Syntax,
        "TypeError" => ErrorCategory::Type,
        "ValueError" => ErrorCategory::Value,
        "NameError" | "UnboundLocalError" => ErrorCategory::Name,
        "IndexError" => ErrorCategory::Index,
        "KeyError" => ErrorCategory::Key,
        _ => ErrorCategory::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: Status,
    pub category: Option<ErrorCategory>,
    pub exception_name: Option<String>,
    /// Text shown to the model in the next repair prompt; empty on pass.
    pub feedback: String,
    pub duration_ms: u64,
}

impl ExecutionOutcome {
    pub fn pass(duration_ms: u64) -> Self {
        Self {
            status: Status::Pass,
            category: None,
            exception_name: None,
            feedback: String::new(),
            duration_ms,
        }
    }

    pub fn fail(
        category: ErrorCategory,
        exception_name: Option<String>,
        feedback: String,
        duration_ms: u64,
    ) -> Self {
        Self {
            status: Status::Fail,
            category: Some(category),
            exception_name,
            feedback,
            duration_ms,
        }
    }

    pub fn extraction_failure() -> Self {
        Self::fail(
            ErrorCategory::ExtractionFailure,
            None,
            EXTRACTION_FAILURE_FEEDBACK.to_string(),
            0,
        )
    }

    pub fn api_error(message: &str) -> Self {
        Self::fail(
            ErrorCategory::ApiError,
            None,
            format!("Provider error: {message}"),
            0,
        )
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

pub const EXTRACTION_FAILURE_FEEDBACK: &str =
    "No code could be extracted from the response. Return the complete Python function.";

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("execution limits must be strictly positive")]
    InvalidLimits,
    #[error("failed to prepare scratch directory: {0}")]
    Scratch(#[source] std::io::Error),
    #[error("failed to spawn runner `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to wait for runner: {0}")]
    Wait(#[source] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    wall_clock_timeout: Duration,
    max_feedback_bytes: usize,
}

impl ExecutionLimits {
    pub fn new(wall_clock_timeout: Duration, max_feedback_bytes: usize) -> Result<Self, SandboxError> {
        if wall_clock_timeout.is_zero() || max_feedback_bytes == 0 {
            return Err(SandboxError::InvalidLimits);
        }
        Ok(Self {
            wall_clock_timeout,
            max_feedback_bytes,
        })
    }

    pub fn wall_clock_timeout(&self) -> Duration {
        self.wall_clock_timeout
    }

    pub fn max_feedback_bytes(&self) -> usize {
        self.max_feedback_bytes
    }
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            wall_clock_timeout: Duration::from_secs(15),
            max_feedback_bytes: 2048,
        }
    }
}

/// Keeps the final `max_feedback_bytes` of a traceback. The last non-empty
/// line (the exception line) is always kept whole, even if that alone
/// exceeds the limit.
pub fn format_feedback(traceback: &str, limits: &ExecutionLimits) -> String {
    let text = traceback.trim_end();
    let max = limits.max_feedback_bytes;
    if text.len() <= max {
        return text.to_string();
    }
    let last_line_start = text.rfind('\n').map_or(0, |i| i + 1);
    let mut cut = (text.len() - max).min(last_line_start);
    while !text.is_char_boundary(cut) {
        cut += 1;
    }
    text[cut..].to_string()
}

/// Feedback for a run killed by the wall-clock limit.
pub fn timeout_feedback(limits: &ExecutionLimits) -> String {
    format!(
        "Timeout: execution did not finish within {} seconds (possible infinite loop or excessive complexity).",
        format_seconds(limits.wall_clock_timeout)
    )
}

fn format_seconds(d: Duration) -> String {
    if d.subsec_nanos() == 0 {
        d.as_secs().to_string()
    } else {
        format!("{:.3}", d.as_secs_f64())
            .trim_end_matches('0')
            .to_string()
    }
}

/// How to invoke the runner program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerSpec {
    pub program: PathBuf,
    /// Arguments placed before the file paths, e.g. a script path for an
    /// interpreter.
    pub args: Vec<String>,
}

impl RunnerSpec {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }

    pub fn with_args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }
}

/// A decoded protocol line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolLine {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traceback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

impl ProtocolLine {
    pub fn pass() -> Self {
        Self {
            status: Status::Pass,
            exception: None,
            traceback: None,
            duration_ms: None,
        }
    }

    pub fn fail(exception: &str, traceback: &str, duration_ms: u64) -> Self {
        Self {
            status: Status::Fail,
            exception: Some(exception.to_string()),
            traceback: Some(traceback.to_string()),
            duration_ms: Some(duration_ms),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol line serializes")
    }
}

/// Decodes runner stdout. Exactly one non-empty line is allowed.
pub fn parse_protocol(stdout: &str) -> Result<ProtocolLine, String> {
    let mut lines = stdout.lines().filter(|l| !l.trim().is_empty());
    let line = lines.next().ok_or("runner produced no output")?;
    if lines.next().is_some() {
        return Err("runner produced more than one line".into());
    }
    let parsed: ProtocolLine =
        serde_json::from_str(line).map_err(|e| format!("malformed protocol line: {e}"))?;
    match parsed.status {
        Status::Fail if parsed.exception.as_deref().is_none_or(str::is_empty) => {
            Err("fail line without exception name".into())
        }
        Status::Pass if parsed.exception.is_some() => Err("pass line carries an exception".into()),
        _ => Ok(parsed),
    }
}

const MAX_STDOUT_BYTES: u64 = 1 << 20;

struct RawRun {
    stdout: String,
    exit_ok: bool,
    exit_desc: String,
    timed_out: bool,
    elapsed: Duration,
}

/// Counting semaphore bounding concurrent runner processes.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Runs candidates through a runner program, at most `max_processes` at a
/// time.
pub struct Executor {
    runner: RunnerSpec,
    slots: Slots,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor").field("runner", &self.runner).finish()
    }
}

impl Executor {
    pub fn new(runner: RunnerSpec, max_processes: usize) -> Self {
        Self {
            runner,
            slots: Slots {
                free: Mutex::new(max_processes.max(1)),
                cv: Condvar::new(),
            },
        }
    }

    pub fn runner(&self) -> &RunnerSpec {
        &self.runner
    }

    /// Executes `code` followed by the problem's tests.
    ///
    /// Model-attributable failures come back as a failing outcome; only
    /// failures to run the runner at all are errors.
    pub fn execute(
        &self,
        code: &str,
        problem: &Problem,
        limits: &ExecutionLimits,
    ) -> Result<ExecutionOutcome, SandboxError> {
        if code.trim().is_empty() {
            return Ok(ExecutionOutcome::extraction_failure());
        }
        let scratch = tempfile::Builder::new()
            .prefix("mend-exec-")
            .tempdir()
            .map_err(SandboxError::Scratch)?;
        let candidate = scratch.path().join("candidate.py");
        let tests = scratch.path().join("tests.py");
        fs::write(&candidate, code).map_err(SandboxError::Scratch)?;
        fs::write(&tests, &problem.test_program).map_err(SandboxError::Scratch)?;

        let mut cmd = self.command(scratch.path());
        cmd.arg(&candidate).arg(&tests);
        let run = self.run(cmd, limits.wall_clock_timeout)?;
        Ok(interpret(run, limits))
    }

    /// Checks that `program` parses, using the runner's `--parse-only` mode.
    pub fn parse_only(&self, program: &str, limits: &ExecutionLimits) -> Result<ExecutionOutcome, SandboxError> {
        let scratch = tempfile::Builder::new()
            .prefix("mend-parse-")
            .tempdir()
            .map_err(SandboxError::Scratch)?;
        let file = scratch.path().join("program.py");
        fs::write(&file, program).map_err(SandboxError::Scratch)?;
        let mut cmd = self.command(scratch.path());
        cmd.arg("--parse-only").arg(&file);
        let run = self.run(cmd, limits.wall_clock_timeout)?;
        Ok(interpret(run, limits))
    }

    fn command(&self, scratch: &std::path::Path) -> Command {
        let mut cmd = Command::new(&self.runner.program);
        cmd.args(&self.runner.args)
            .current_dir(scratch)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("HOME", scratch)
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0);
        cmd
    }

    fn run(&self, mut cmd: Command, timeout: Duration) -> Result<RawRun, SandboxError> {
        let _slot = self.slots.acquire();
        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|source| SandboxError::Spawn {
            program: self.runner.program.display().to_string(),
            source,
        })?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.take(MAX_STDOUT_BYTES).read_to_end(&mut buf);
            buf
        });

        let (status, timed_out) = wait_with_deadline(&mut child, start + timeout)?;
        let elapsed = start.elapsed();
        // stray grandchildren may still hold the pipe open
        kill_group(&child);
        let stdout = String::from_utf8_lossy(&reader.join().unwrap_or_default()).into_owned();
        Ok(RawRun {
            stdout,
            exit_ok: status.is_some_and(|s| s.success()),
            exit_desc: status.map_or_else(|| "killed".to_string(), |s| s.to_string()),
            timed_out,
            elapsed,
        })
    }
}

fn wait_with_deadline(
    child: &mut Child,
    deadline: Instant,
) -> Result<(Option<std::process::ExitStatus>, bool), SandboxError> {
    let mut pause = Duration::from_millis(1);
    loop {
        if let Some(status) = child.try_wait().map_err(SandboxError::Wait)? {
            return Ok((Some(status), false));
        }
        let now = Instant::now();
        if now >= deadline {
            kill_group(child);
            let _ = child.wait();
            return Ok((None, true));
        }
        thread::sleep(pause.min(deadline - now));
        pause = (pause * 2).min(Duration::from_millis(20));
    }
}

fn kill_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; failure (already gone) is fine.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn interpret(run: RawRun, limits: &ExecutionLimits) -> ExecutionOutcome {
    let duration_ms = run.elapsed.as_millis() as u64;
    if run.timed_out {
        return ExecutionOutcome::fail(
            ErrorCategory::Timeout,
            None,
            timeout_feedback(limits),
            duration_ms,
        );
    }
    if !run.exit_ok {
        return protocol_violation(&format!("runner exited with {}", run.exit_desc), duration_ms);
    }
    match parse_protocol(&run.stdout) {
        Ok(line) => match line.status {
            Status::Pass => ExecutionOutcome::pass(duration_ms),
            Status::Fail => {
                let exception = line.exception.unwrap_or_default();
                let traceback = line.traceback.unwrap_or_default();
                let feedback = if traceback.trim().is_empty() {
                    exception.clone()
                } else {
                    format_feedback(&traceback, limits)
                };
                ExecutionOutcome::fail(classify(&exception), Some(exception), feedback, duration_ms)
            }
        },
        Err(msg) => protocol_violation(&msg, duration_ms),
    }
}

fn protocol_violation(msg: &str, duration_ms: u64) -> ExecutionOutcome {
    ExecutionOutcome::fail(
        ErrorCategory::Other,
        None,
        format!("Execution failed: runner protocol violation ({msg})"),
        duration_ms,
    )
}

/// Adapts an executor to the benchmark validator's parse check.
pub struct RunnerParseCheck<'a> {
    pub executor: &'a Executor,
    pub limits: ExecutionLimits,
}

impl ParseCheck for RunnerParseCheck<'_> {
    fn parse_error(&self, program: &str) -> Result<Option<String>, String> {
        let outcome = self
            .executor
            .parse_only(program, &self.limits)
            .map_err(|e| e.to_string())?;
        match outcome.category {
            None => Ok(None),
            Some(ErrorCategory::Syntax) => Ok(Some(outcome.feedback)),
            Some(_) => Err(outcome.feedback),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::BenchmarkKind;
    use std::os::unix::fs::PermissionsExt;

    fn problem() -> Problem {
        Problem {
            task_id: "T/0".into(),
            prompt: "def f():\n".into(),
            entry_point: "f".into(),
            test_program: "assert f() == 1\n".into(),
            source_benchmark: BenchmarkKind::Humaneval,
        }
    }

    /// Writes a shell-script runner with the given body.
    fn script_runner(dir: &tempfile::TempDir, body: &str) -> RunnerSpec {
        let path = dir.path().join("runner.sh");
        fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
        RunnerSpec::new(path)
    }

    fn limits(ms: u64) -> ExecutionLimits {
        ExecutionLimits::new(Duration::from_millis(ms), 2048).unwrap()
    }

    #[test]
    fn classify_table() {
        let table = [
            ("AssertionError", ErrorCategory::Assertion),
            ("SyntaxError", ErrorCategory::Syntax),
            ("IndentationError", ErrorCategory::Syntax),
            ("TabError", ErrorCategory::Syntax),
            ("TypeError", ErrorCategory::Type),
            ("ValueError", ErrorCategory::Value),
            ("NameError", ErrorCategory::Name),
            ("UnboundLocalError", ErrorCategory::Name),
            ("IndexError", ErrorCategory::Index),
            ("KeyError", ErrorCategory::Key),
            ("builtins.KeyError", ErrorCategory::Key),
            ("ZeroDivisionError", ErrorCategory::Other),
            ("RecursionError", ErrorCategory::Other),
        ];
        for (name, expected) in table {
            assert_eq!(classify(name), expected, "{name}");
        }
    }

    #[test]
    fn category_round_trips_through_str() {
        for c in ErrorCategory::ALL {
            assert_eq!(c.as_str().parse::<ErrorCategory>().unwrap(), c);
        }
    }

    #[test]
    fn feedback_short_unchanged() {
        let tb = "x".repeat(299) + "\n";
        assert_eq!(format_feedback(&tb, &ExecutionLimits::default()), tb.trim_end());
    }

    #[test]
    fn feedback_long_keeps_tail() {
        let mut tb = String::new();
        while tb.len() < 10_000 {
            tb.push_str("  File \"candidate.py\", line 3, in f\n");
        }
        tb.push_str("AssertionError: expected 3");
        let out = format_feedback(&tb, &ExecutionLimits::default());
        assert_eq!(out.len(), 2048);
        assert!(tb.ends_with(&out));
        assert!(out.ends_with("AssertionError: expected 3"));
    }

    #[test]
    fn feedback_keeps_oversized_exception_line() {
        let tb = format!("frame\nValueError: {}", "v".repeat(100));
        let small = ExecutionLimits::new(Duration::from_secs(1), 10).unwrap();
        assert_eq!(format_feedback(&tb, &small), format!("ValueError: {}", "v".repeat(100)));
    }

    #[test]
    fn feedback_respects_char_boundaries() {
        let tb = format!("{}\nKeyError: 'é'", "é".repeat(50));
        let small = ExecutionLimits::new(Duration::from_secs(1), 25).unwrap();
        let out = format_feedback(&tb, &small);
        assert!(out.ends_with("KeyError: 'é'"));
        assert!(out.len() <= 25);
    }

    #[test]
    fn timeout_feedback_names_limit() {
        assert!(timeout_feedback(&ExecutionLimits::default()).contains("15 seconds"));
        assert!(timeout_feedback(&limits(1500)).contains("1.5 seconds"));
    }

    #[test]
    fn limits_must_be_positive() {
        assert!(ExecutionLimits::new(Duration::ZERO, 10).is_err());
        assert!(ExecutionLimits::new(Duration::from_secs(1), 0).is_err());
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!(parse_protocol("{\"status\":\"pass\"}\n").unwrap(), ProtocolLine::pass());
        let fail = ProtocolLine::fail("NameError", "tb", 3);
        assert_eq!(parse_protocol(&fail.to_line()).unwrap(), fail);
        assert!(parse_protocol("").is_err());
        assert!(parse_protocol("garbage").is_err());
        assert!(parse_protocol("{\"status\":\"pass\"}\n{\"status\":\"pass\"}").is_err());
        assert!(parse_protocol("{\"status\":\"fail\"}").is_err());
    }

    #[test]
    fn protocol_line_format_is_exact() {
        assert_eq!(ProtocolLine::pass().to_line(), r#"{"status":"pass"}"#);
        assert_eq!(
            ProtocolLine::fail("NameError", "t", 5).to_line(),
            r#"{"status":"fail","exception":"NameError","traceback":"t","duration_ms":5}"#
        );
    }

    #[test]
    fn empty_code_skips_spawn() {
        let ex = Executor::new(RunnerSpec::new("/nonexistent/runner"), 1);
        let out = ex.execute("  \n", &problem(), &limits(1000)).unwrap();
        assert_eq!(out.category, Some(ErrorCategory::ExtractionFailure));
    }

    #[test]
    fn spawn_failure_is_error() {
        let ex = Executor::new(RunnerSpec::new("/nonexistent/runner"), 1);
        assert!(matches!(
            ex.execute("x = 1", &problem(), &limits(1000)),
            Err(SandboxError::Spawn { .. })
        ));
    }

    #[test]
    fn pass_line() {
        let dir = tempfile::tempdir().unwrap();
        let ex = Executor::new(script_runner(&dir, r#"echo '{"status":"pass"}'"#), 2);
        let out = ex.execute("x = 1", &problem(), &limits(5000)).unwrap();
        assert!(out.passed());
        assert!(out.feedback.is_empty() && out.category.is_none());
    }

    #[test]
    fn fail_line_classified() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"printf '%s\n' '{"status":"fail","exception":"NameError","traceback":"Traceback\nNameError: name '"'"'g'"'"' is not defined","duration_ms":1}'"#;
        let ex = Executor::new(script_runner(&dir, body), 1);
        let out = ex.execute("x = 1", &problem(), &limits(5000)).unwrap();
        assert_eq!(out.category, Some(ErrorCategory::Name));
        assert_eq!(out.exception_name.as_deref(), Some("NameError"));
        assert!(out.feedback.ends_with("NameError: name 'g' is not defined"));
    }

    #[test]
    fn runner_sees_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"if grep -q 'x = 1' "$1" && grep -q 'assert f()' "$2"; then echo '{"status":"pass"}'; else echo '{"status":"fail","exception":"AssertionError","traceback":"","duration_ms":0}'; fi"#;
        let ex = Executor::new(script_runner(&dir, body), 1);
        assert!(ex.execute("x = 1", &problem(), &limits(5000)).unwrap().passed());
        let out = ex.execute("y = 2", &problem(), &limits(5000)).unwrap();
        assert_eq!(out.category, Some(ErrorCategory::Assertion));
        assert_eq!(out.feedback, "AssertionError");
    }

    #[test]
    fn nonzero_exit_is_protocol_violation() {
        let dir = tempfile::tempdir().unwrap();
        let ex = Executor::new(script_runner(&dir, r#"echo '{"status":"pass"}'; exit 3"#), 1);
        let out = ex.execute("x = 1", &problem(), &limits(5000)).unwrap();
        assert_eq!(out.category, Some(ErrorCategory::Other));
        assert!(out.feedback.contains("protocol violation"));
    }

    #[test]
    fn garbage_is_protocol_violation() {
        let dir = tempfile::tempdir().unwrap();
        let ex = Executor::new(script_runner(&dir, "echo hello"), 1);
        let out = ex.execute("x = 1", &problem(), &limits(5000)).unwrap();
        assert_eq!(out.category, Some(ErrorCategory::Other));
    }

    #[test]
    fn timeout_kills_process_group() {
        let dir = tempfile::tempdir().unwrap();
        let marker = dir.path().join("alive");
        // the background child would touch the marker after the deadline if it survived
        let body = format!("(sleep 2; touch {}) &\nsleep 30", marker.display());
        let ex = Executor::new(script_runner(&dir, &body), 1);
        let start = Instant::now();
        let out = ex.execute("x = 1", &problem(), &limits(300)).unwrap();
        assert!(start.elapsed() < Duration::from_secs(2));
        assert_eq!(out.category, Some(ErrorCategory::Timeout));
        assert!(out.duration_ms >= 300);
        thread::sleep(Duration::from_millis(2500));
        assert!(!marker.exists(), "grandchild survived the kill");
    }

    #[test]
    fn scratch_dirs_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        // fails if another execution's file is visible in the working directory
        let body = r#"if [ -e leftover ]; then echo garbage; exit 0; fi; touch leftover; sleep 0.1; echo '{"status":"pass"}'"#;
        let ex = std::sync::Arc::new(Executor::new(script_runner(&dir, body), 4));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let ex = ex.clone();
                thread::spawn(move || ex.execute("x = 1", &problem(), &limits(5000)).unwrap())
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap().passed());
        }
    }

    #[test]
    fn parse_only_passes_flag() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"if [ "$1" = "--parse-only" ]; then echo '{"status":"pass"}'; else echo bad; fi"#;
        let ex = Executor::new(script_runner(&dir, body), 1);
        assert!(ex.parse_only("x = 1", &limits(5000)).unwrap().passed());
        let check = RunnerParseCheck {
            executor: &ex,
            limits: limits(5000),
        };
        assert_eq!(check.parse_error("x").unwrap(), None);
    }
}
