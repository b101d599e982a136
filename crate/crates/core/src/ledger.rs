//! Durable, append-only run storage.
//!
//! A run lives in `<root>/<run_id>/`:
//!
//! - `manifest`: `key=value` lines describing the run
//! - `attempts.jsonl`: one flat [`AttemptRecord`] per line
//! - `timings.jsonl`: wall-clock durations, kept apart so that the attempts
//!   file is byte-identical across repeated deterministic runs
//! - `lock`: held (flock) by the single writer
//! - `reports/`: exported tables

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::{BenchmarkKind, ProblemSet};
use crate::engine::{finalize, Attempt, Conversation, ConversationMeta, Message, RepairStrategy, RunConfig, RunMode, RunResult};
use crate::extraction::{ExtractionMethod, ExtractionResult};
use crate::provider::{DecodingParams, ModelSpec, ProviderKind, TokenUsage};
use crate::sandbox::{ErrorCategory, ExecutionLimits, ExecutionOutcome, Status};

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest";
pub const ATTEMPTS_FILE: &str = "attempts.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const LOCK_FILE: &str = "lock";

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Corrupt {
        file: String,
        line: usize,
        message: String,
    },
    #[error("duplicate attempt record (run {run_id}, task {task_id}, round {round})")]
    Conflict {
        run_id: String,
        task_id: String,
        round: u32,
    },
    #[error("run directory {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("refusing to resume: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LedgerError + '_ {
    move |source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    InProgress,
    Complete,
    Aborted,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::InProgress => "in_progress",
            RunStatus::Complete => "complete",
            RunStatus::Aborted => "aborted",
        }
    }
}

/// Everything needed to identify, resume and report a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub run_id: String,
    pub harness_version: String,
    pub created_at: String,
    pub status: RunStatus,
    pub benchmark: BenchmarkKind,
    pub problem_set: String,
    pub problem_set_digest: String,
    pub n_problems: usize,
    pub provider: ProviderKind,
    pub model_name: String,
    /// Hash of the endpoint URL; the URL itself is not stored.
    pub endpoint_digest: String,
    pub mode: RunMode,
    pub strategy: RepairStrategy,
    pub max_rounds: u32,
    pub samples_k: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_ms: u64,
    pub max_feedback_bytes: usize,
    /// Set by `--fresh` to force a new run id.
    pub nonce: String,
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

/// Deterministic run id over the problem set, model, configuration and
/// harness version.
pub fn compute_run_id(set_digest: &str, model: &ModelSpec, config: &RunConfig, nonce: &str) -> String {
    let identity = serde_json::json!({
        "problem_set": set_digest,
        "provider": model.provider,
        "model": model.model_name,
        "endpoint": model.endpoint,
        "decorations": model.decorations,
        "config": config.canonical_json(),
        "harness_version": HARNESS_VERSION,
        "nonce": nonce,
    });
    short_hash(identity.to_string().as_bytes())
}

impl RunManifest {
    pub fn new(set: &ProblemSet, benchmark: BenchmarkKind, model: &ModelSpec, config: &RunConfig, nonce: &str) -> Self {
        let digest = set.digest();
        Self {
            run_id: compute_run_id(&digest, model, config, nonce),
            harness_version: HARNESS_VERSION.to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            status: RunStatus::InProgress,
            benchmark,
            problem_set: set.name.clone(),
            problem_set_digest: digest,
            n_problems: set.len(),
            provider: model.provider,
            model_name: model.model_name.clone(),
            endpoint_digest: model
                .endpoint
                .as_deref()
                .map_or_else(|| "none".to_string(), |e| short_hash(e.as_bytes())),
            mode: config.mode,
            strategy: config.strategy,
            max_rounds: config.max_rounds,
            samples_k: config.samples_k,
            temperature: config.decoding.temperature,
            max_output_tokens: config.decoding.max_output_tokens,
            timeout_ms: config.limits.wall_clock_timeout().as_millis() as u64,
            max_feedback_bytes: config.limits.max_feedback_bytes(),
            nonce: nonce.to_string(),
        }
    }

    pub fn config(&self) -> Result<RunConfig, LedgerError> {
        let limits = ExecutionLimits::new(Duration::from_millis(self.timeout_ms), self.max_feedback_bytes)
            .map_err(|e| self.corrupt(&e.to_string()))?;
        Ok(RunConfig {
            mode: self.mode,
            max_rounds: self.max_rounds,
            strategy: self.strategy,
            decoding: DecodingParams {
                temperature: self.temperature,
                max_output_tokens: self.max_output_tokens,
            },
            limits,
            samples_k: self.samples_k,
        })
    }

    /// Short human label: model, plus strategy for repair runs.
    pub fn label(&self) -> String {
        match self.mode {
            RunMode::Repair => format!("{} [{}]", self.model_name, self.strategy),
            RunMode::Resample => format!("{} [resample k={}]", self.model_name, self.samples_k),
        }
    }

    fn corrupt(&self, message: &str) -> LedgerError {
        LedgerError::Corrupt {
            file: MANIFEST_FILE.into(),
            line: 0,
            message: message.to_string(),
        }
    }

    pub fn to_text(&self) -> String {
        let provider = match self.provider {
            ProviderKind::OpenaiCompatible => "openai_compatible",
            ProviderKind::Scripted => "scripted",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("run_id", self.run_id.clone()),
            ("harness_version", self.harness_version.clone()),
            ("created_at", self.created_at.clone()),
            ("status", self.status.as_str().into()),
            ("benchmark", self.benchmark.as_str().into()),
            ("problem_set", self.problem_set.clone()),
            ("problem_set_digest", self.problem_set_digest.clone()),
            ("n_problems", self.n_problems.to_string()),
            ("provider", provider.into()),
            ("model_name", self.model_name.clone()),
            ("endpoint_digest", self.endpoint_digest.clone()),
            ("mode", self.mode.as_str().into()),
            ("strategy", self.strategy.as_str().into()),
            ("max_rounds", self.max_rounds.to_string()),
            ("samples_k", self.samples_k.to_string()),
            ("temperature", self.temperature.to_string()),
            ("max_output_tokens", self.max_output_tokens.to_string()),
            ("timeout_ms", self.timeout_ms.to_string()),
            ("max_feedback_bytes", self.max_feedback_bytes.to_string()),
            ("nonce", self.nonce.clone()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k}={}\n", v.replace('\n', " ")))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, LedgerError> {
        let mut map = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| LedgerError::Corrupt {
                file: MANIFEST_FILE.into(),
                line: idx + 1,
                message: "expected key=value".into(),
            })?;
            map.insert(k.trim().to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String, LedgerError> {
            map.get(k).cloned().ok_or_else(|| LedgerError::Corrupt {
                file: MANIFEST_FILE.into(),
                line: 0,
                message: format!("missing key `{k}`"),
            })
        };
        fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T, LedgerError> {
            v.trim().parse().map_err(|_| LedgerError::Corrupt {
                file: MANIFEST_FILE.into(),
                line: 0,
                message: format!("bad value for `{k}`: {v}"),
            })
        }
        let bad = |k: &str, e: String| LedgerError::Corrupt {
            file: MANIFEST_FILE.into(),
            line: 0,
            message: format!("bad value for `{k}`: {e}"),
        };
        Ok(Self {
            run_id: get("run_id")?,
            harness_version: get("harness_version")?,
            created_at: get("created_at")?,
            status: match get("status")?.as_str() {
                "in_progress" => RunStatus::InProgress,
                "complete" => RunStatus::Complete,
                "aborted" => RunStatus::Aborted,
                other => return Err(bad("status", other.into())),
            },
            benchmark: get("benchmark")?.parse().map_err(|e| bad("benchmark", e))?,
            problem_set: get("problem_set")?,
            problem_set_digest: get("problem_set_digest")?,
            n_problems: num("n_problems", get("n_problems")?)?,
            provider: match get("provider")?.as_str() {
                "openai_compatible" => ProviderKind::OpenaiCompatible,
                "scripted" => ProviderKind::Scripted,
                other => return Err(bad("provider", other.into())),
            },
            model_name: get("model_name")?,
            endpoint_digest: get("endpoint_digest")?,
            mode: get("mode")?.parse().map_err(|e| bad("mode", e))?,
            strategy: get("strategy")?.parse().map_err(|e| bad("strategy", e))?,
            max_rounds: num("max_rounds", get("max_rounds")?)?,
            samples_k: num("samples_k", get("samples_k")?)?,
            temperature: num("temperature", get("temperature")?)?,
            max_output_tokens: num("max_output_tokens", get("max_output_tokens")?)?,
            timeout_ms: num("timeout_ms", get("timeout_ms")?)?,
            max_feedback_bytes: num("max_feedback_bytes", get("max_feedback_bytes")?)?,
            nonce: map.get("nonce").cloned().unwrap_or_default(),
        })
    }

    /// Identity fields only (ignores status and creation time).
    fn same_run(&self, other: &RunManifest) -> bool {
        let mut a = self.clone();
        a.status = other.status;
        a.created_at = other.created_at.clone();
        a == *other
    }
}

/// One attempt, flattened for storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub run_id: String,
    pub task_id: String,
    pub round: u32,
    pub messages: Vec<Message>,
    pub raw_completion: String,
    pub code: String,
    pub extraction_method: ExtractionMethod,
    pub stripped_reasoning: bool,
    pub status: Status,
    pub category: Option<ErrorCategory>,
    pub exception: Option<String>,
    pub feedback: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub reasoning_tokens: u64,
}

impl AttemptRecord {
    pub fn from_attempt(run_id: &str, task_id: &str, a: &Attempt) -> Self {
        Self {
            run_id: run_id.to_string(),
            task_id: task_id.to_string(),
            round: a.round,
            messages: a.conversation.messages.clone(),
            raw_completion: a.raw_completion.clone(),
            code: a.extraction.code.clone(),
            extraction_method: a.extraction.method,
            stripped_reasoning: a.extraction.stripped_reasoning,
            status: a.outcome.status,
            category: a.outcome.category,
            exception: a.outcome.exception_name.clone(),
            feedback: a.outcome.feedback.clone(),
            prompt_tokens: a.usage.prompt_tokens,
            completion_tokens: a.usage.completion_tokens,
            reasoning_tokens: a.usage.reasoning_tokens,
        }
    }

    pub fn to_attempt(&self, duration_ms: u64) -> Attempt {
        Attempt {
            round: self.round,
            conversation: Conversation {
                messages: self.messages.clone(),
                metadata: ConversationMeta {
                    task_id: self.task_id.clone(),
                    round: self.round,
                },
            },
            raw_completion: self.raw_completion.clone(),
            extraction: ExtractionResult {
                code: self.code.clone(),
                method: self.extraction_method,
                stripped_reasoning: self.stripped_reasoning,
            },
            outcome: ExecutionOutcome {
                status: self.status,
                category: self.category,
                exception_name: self.exception.clone(),
                feedback: self.feedback.clone(),
                duration_ms,
            },
            usage: TokenUsage {
                prompt_tokens: self.prompt_tokens,
                completion_tokens: self.completion_tokens,
                reasoning_tokens: self.reasoning_tokens,
            },
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("record serializes");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TimingRecord {
    task_id: String,
    round: u32,
    duration_ms: u64,
}

/// Parses an attempts file. A final line without its newline is a torn
/// write; `tolerate_torn_tail` drops it instead of failing.
pub fn parse_attempts(text: &str, tolerate_torn_tail: bool) -> Result<Vec<AttemptRecord>, LedgerError> {
    let mut records = Vec::new();
    let torn = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (idx, line) in lines.iter().enumerate() {
        let last = idx + 1 == lines.len();
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AttemptRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if last && torn && tolerate_torn_tail => break,
            Err(e) => {
                return Err(LedgerError::Corrupt {
                    file: ATTEMPTS_FILE.into(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

fn parse_timings(text: &str) -> BTreeMap<(String, u32), u64> {
    text.lines()
        .filter_map(|l| serde_json::from_str::<TimingRecord>(l).ok())
        .map(|t| ((t.task_id, t.round), t.duration_ms))
        .collect()
}

fn group(records: &[AttemptRecord], timings: &BTreeMap<(String, u32), u64>) -> Result<BTreeMap<String, Vec<Attempt>>, LedgerError> {
    let mut by_task: BTreeMap<String, Vec<Attempt>> = BTreeMap::new();
    for (idx, r) in records.iter().enumerate() {
        let duration = timings.get(&(r.task_id.clone(), r.round)).copied().unwrap_or(0);
        let attempts = by_task.entry(r.task_id.clone()).or_default();
        if attempts.len() as u32 != r.round {
            return Err(LedgerError::Corrupt {
                file: ATTEMPTS_FILE.into(),
                line: idx + 1,
                message: format!(
                    "task {} round {} out of sequence (expected round {})",
                    r.task_id,
                    r.round,
                    attempts.len()
                ),
            });
        }
        attempts.push(r.to_attempt(duration));
    }
    Ok(by_task)
}

fn read_to_string_opt(path: &Path) -> Result<String, LedgerError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), LedgerError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn build_result(manifest: RunManifest, by_task: &BTreeMap<String, Vec<Attempt>>) -> Result<RunResult, LedgerError> {
    let config = manifest.config()?;
    let transcripts = by_task
        .iter()
        .filter_map(|(task, attempts)| finalize(task, attempts, &config))
        .collect();
    Ok(RunResult { manifest, transcripts })
}

/// Reads a run directory without taking the writer lock.
pub fn load_run(dir: &Path) -> Result<RunResult, LedgerError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = RunManifest::parse(&fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?)?;
    let attempts = parse_attempts(&read_to_string_opt(&dir.join(ATTEMPTS_FILE))?, false)?;
    for (idx, r) in attempts.iter().enumerate() {
        if r.run_id != manifest.run_id {
            return Err(LedgerError::Corrupt {
                file: ATTEMPTS_FILE.into(),
                line: idx + 1,
                message: format!("record belongs to run {}", r.run_id),
            });
        }
    }
    let timings = parse_timings(&read_to_string_opt(&dir.join(TIMINGS_FILE))?);
    build_result(manifest, &group(&attempts, &timings)?)
}

/// Writer handle on one run directory.
pub struct RunLedger {
    dir: PathBuf,
    manifest: RunManifest,
    attempts: File,
    timings: File,
    _lock: File,
    keys: HashSet<(String, u32)>,
    by_task: BTreeMap<String, Vec<Attempt>>,
}

impl std::fmt::Debug for RunLedger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunLedger").field("dir", &self.dir).finish()
    }
}

impl RunLedger {
    /// Opens (creating if needed) `<root>/<run_id>` for writing. An existing
    /// manifest must describe the same run.
    pub fn open(root: &Path, manifest: RunManifest) -> Result<Self, LedgerError> {
        let dir = root.join(&manifest.run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        // SAFETY: flock on an fd we own; released when the file is closed.
        if unsafe { libc::flock(lock.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) } != 0 {
            return Err(LedgerError::Locked(dir));
        }

        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let existing = RunManifest::parse(&fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?)?;
            if !existing.same_run(&manifest) {
                return Err(LedgerError::Mismatch(format!(
                    "{} describes a different run than requested",
                    manifest_path.display()
                )));
            }
            let mut m = existing;
            if m.status == RunStatus::Aborted {
                m.status = RunStatus::InProgress;
                write_atomic(&manifest_path, &m.to_text())?;
            }
            m
        } else {
            write_atomic(&manifest_path, &manifest.to_text())?;
            manifest
        };

        let attempts_path = dir.join(ATTEMPTS_FILE);
        let text = read_to_string_opt(&attempts_path)?;
        let records = parse_attempts(&text, true)?;
        if !text.is_empty() && !text.ends_with('\n') {
            // drop the torn tail so new appends start on a fresh line
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            let f = OpenOptions::new().write(true).open(&attempts_path).map_err(io_err(&attempts_path))?;
            f.set_len(keep as u64).map_err(io_err(&attempts_path))?;
            tracing::warn!(path = %attempts_path.display(), "dropped torn final record");
        }
        let timings_path = dir.join(TIMINGS_FILE);
        let timings = parse_timings(&read_to_string_opt(&timings_path)?);
        let by_task = group(&records, &timings)?;
        let keys = records.iter().map(|r| (r.task_id.clone(), r.round)).collect();

        let open_append = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(io_err(p))
        };
        Ok(Self {
            attempts: open_append(&attempts_path)?,
            timings: open_append(&timings_path)?,
            dir,
            manifest,
            _lock: lock,
            keys,
            by_task,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Appends one record and syncs it to disk before returning.
    pub fn append_attempt(&mut self, record: &AttemptRecord, duration_ms: u64) -> Result<(), LedgerError> {
        self.append_records(std::slice::from_ref(record), &[duration_ms])
    }

    /// Appends the attempts of a transcript not yet stored, in one write.
    pub fn append_transcript(&mut self, transcript: &crate::engine::ProblemTranscript) -> Result<(), LedgerError> {
        let stored = self.by_task.get(&transcript.task_id).map_or(0, Vec::len);
        let fresh = &transcript.attempts[stored.min(transcript.attempts.len())..];
        let records: Vec<AttemptRecord> = fresh
            .iter()
            .map(|a| AttemptRecord::from_attempt(&self.manifest.run_id, &transcript.task_id, a))
            .collect();
        let durations: Vec<u64> = fresh.iter().map(|a| a.outcome.duration_ms).collect();
        self.append_records(&records, &durations)
    }

    fn append_records(&mut self, records: &[AttemptRecord], durations: &[u64]) -> Result<(), LedgerError> {
        let mut batch_keys = HashSet::new();
        for r in records {
            let key = (r.task_id.clone(), r.round);
            if r.run_id != self.manifest.run_id || self.keys.contains(&key) || !batch_keys.insert(key) {
                return Err(LedgerError::Conflict {
                    run_id: r.run_id.clone(),
                    task_id: r.task_id.clone(),
                    round: r.round,
                });
            }
        }
        let mut buf = String::new();
        let mut tbuf = String::new();
        for (r, d) in records.iter().zip(durations) {
            buf.push_str(&r.to_line());
            let t = TimingRecord {
                task_id: r.task_id.clone(),
                round: r.round,
                duration_ms: *d,
            };
            tbuf.push_str(&serde_json::to_string(&t).expect("timing serializes"));
            tbuf.push('\n');
        }
        let path = self.dir.join(ATTEMPTS_FILE);
        self.attempts.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        self.attempts.sync_data().map_err(io_err(&path))?;
        let tpath = self.dir.join(TIMINGS_FILE);
        self.timings.write_all(tbuf.as_bytes()).map_err(io_err(&tpath))?;

        for (r, d) in records.iter().zip(durations) {
            self.keys.insert((r.task_id.clone(), r.round));
            self.by_task.entry(r.task_id.clone()).or_default().push(r.to_attempt(*d));
        }
        Ok(())
    }

    /// Task ids of `set` that have no complete transcript yet, in set order.
    pub fn resume_plan(&self, set: &ProblemSet) -> Result<Vec<String>, LedgerError> {
        if set.digest() != self.manifest.problem_set_digest {
            return Err(LedgerError::Mismatch(
                "problem set differs from the one this run was started with".into(),
            ));
        }
        let config = self.manifest.config()?;
        Ok(set
            .problems()
            .iter()
            .filter(|p| {
                self.by_task
                    .get(&p.task_id)
                    .and_then(|a| finalize(&p.task_id, a, &config))
                    .is_none()
            })
            .map(|p| p.task_id.clone())
            .collect())
    }

    /// Recorded attempts of problems whose transcripts are not finished.
    pub fn partial_attempts(&self) -> BTreeMap<String, Vec<Attempt>> {
        let Ok(config) = self.manifest.config() else {
            return BTreeMap::new();
        };
        self.by_task
            .iter()
            .filter(|(task, a)| finalize(task, a, &config).is_none())
            .map(|(t, a)| (t.clone(), a.clone()))
            .collect()
    }

    pub fn result(&self) -> Result<RunResult, LedgerError> {
        build_result(self.manifest.clone(), &self.by_task)
    }

    pub fn record_count(&self) -> usize {
        self.keys.len()
    }

    fn set_status(&mut self, status: RunStatus) -> Result<(), LedgerError> {
        if self.manifest.status != status {
            self.manifest.status = status;
            write_atomic(&self.dir.join(MANIFEST_FILE), &self.manifest.to_text())?;
        }
        Ok(())
    }

    pub fn mark_complete(&mut self) -> Result<(), LedgerError> {
        self.set_status(RunStatus::Complete)
    }

    pub fn mark_aborted(&mut self) -> Result<(), LedgerError> {
        self.set_status(RunStatus::Aborted)
    }
}
