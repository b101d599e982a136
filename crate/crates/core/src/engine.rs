//! The generate / execute / feed back / repair loop.
//!
//! Round 0 sends the bare problem. Every later round sends a fresh
//! two-message conversation holding the problem, the previous extracted
//! candidate and its error feedback, phrased by the run's
//! [`RepairStrategy`]. A problem stops at its first passing attempt, after
//! `1 + max_rounds` attempts, or at a provider failure.
//!
//! Resample mode instead draws `samples_k` independent completions of the
//! round-0 conversation and keeps all of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::benchmark::{Problem, ProblemSet};
use crate::extraction::{extract, ExtractionResult};
use crate::ledger::{LedgerError, RunLedger};
use crate::provider::{DecodingParams, Provider, ProviderError, TokenUsage};
use crate::sandbox::{ErrorCategory, ExecutionLimits, ExecutionOutcome, Executor, SandboxError};

pub const SYSTEM_PROMPT: &str = "You are an expert Python programmer. Complete the given function. Return ONLY the Python code, no explanations, no markdown formatting.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationMeta {
    pub task_id: String,
    /// Repair round, or sample index in resample mode.
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub messages: Vec<Message>,
    pub metadata: ConversationMeta,
}

impl Conversation {
    pub fn system_count(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::System).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStrategy {
    Minimal,
    ExplainThenFix,
    ChainOfThought,
}

impl RepairStrategy {
    pub const ALL: [RepairStrategy; 3] = [
        RepairStrategy::Minimal,
        RepairStrategy::ExplainThenFix,
        RepairStrategy::ChainOfThought,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RepairStrategy::Minimal => "minimal",
            RepairStrategy::ExplainThenFix => "explain_then_fix",
            RepairStrategy::ChainOfThought => "chain_of_thought",
        }
    }
}

impl fmt::Display for RepairStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RepairStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minimal" => Ok(RepairStrategy::Minimal),
            "explain_then_fix" | "explain-then-fix" | "explain" => Ok(RepairStrategy::ExplainThenFix),
            "chain_of_thought" | "chain-of-thought" | "cot" => Ok(RepairStrategy::ChainOfThought),
            other => Err(format!(
                "unknown strategy `{other}` (expected minimal, explain_then_fix or chain_of_thought)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Repair,
    Resample,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Repair => "repair",
            RunMode::Resample => "resample",
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "repair" => Ok(RunMode::Repair),
            "resample" => Ok(RunMode::Resample),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    /// Repair rounds after round 0 (repair mode only).
    pub max_rounds: u32,
    pub strategy: RepairStrategy,
    pub decoding: DecodingParams,
    pub limits: ExecutionLimits,
    /// Independent samples per problem (resample mode only).
    pub samples_k: u32,
}

impl RunConfig {
    pub fn repair(strategy: RepairStrategy, max_rounds: u32) -> Self {
        Self {
            mode: RunMode::Repair,
            max_rounds,
            strategy,
            decoding: DecodingParams::GREEDY,
            limits: ExecutionLimits::default(),
            samples_k: 1,
        }
    }

    pub fn resample(samples_k: u32) -> Self {
        Self {
            mode: RunMode::Resample,
            max_rounds: 0,
            strategy: RepairStrategy::Minimal,
            decoding: DecodingParams::RESAMPLE,
            limits: ExecutionLimits::default(),
            samples_k: samples_k.max(1),
        }
    }

    /// Attempts a complete transcript may hold.
    pub fn attempt_budget(&self) -> usize {
        match self.mode {
            RunMode::Repair => 1 + self.max_rounds as usize,
            RunMode::Resample => self.samples_k as usize,
        }
    }

    /// Canonical JSON of the fields that matter for this mode; feeds run ids.
    pub fn canonical_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "mode": self.mode.as_str(),
            "temperature": self.decoding.temperature,
            "max_output_tokens": self.decoding.max_output_tokens,
            "timeout_ms": self.limits.wall_clock_timeout().as_millis() as u64,
            "max_feedback_bytes": self.limits.max_feedback_bytes(),
        });
        let obj = v.as_object_mut().unwrap();
        match self.mode {
            RunMode::Repair => {
                obj.insert("max_rounds".into(), self.max_rounds.into());
                obj.insert("strategy".into(), self.strategy.as_str().into());
            }
            RunMode::Resample => {
                obj.insert("samples_k".into(), self.samples_k.into());
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    /// Round index (repair) or sample index (resample).
    pub round: u32,
    pub conversation: Conversation,
    pub raw_completion: String,
    pub extraction: ExtractionResult,
    pub outcome: ExecutionOutcome,
    pub usage: TokenUsage,
}

impl Attempt {
    pub fn passed(&self) -> bool {
        self.outcome.passed()
    }

    pub fn is_api_error(&self) -> bool {
        self.outcome.category == Some(ErrorCategory::ApiError)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Solved,
    Exhausted,
    ApiError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemTranscript {
    pub task_id: String,
    pub attempts: Vec<Attempt>,
    pub first_solved_round: Option<u32>,
    pub terminal: Terminal,
}

impl ProblemTranscript {
    /// Category of the round-0 failure, if round 0 failed.
    pub fn r0_category(&self) -> Option<ErrorCategory> {
        self.attempts.first().and_then(|a| a.outcome.category)
    }

    pub fn usage(&self) -> TokenUsage {
        self.attempts.iter().map(|a| a.usage).sum()
    }

    pub fn passes(&self) -> usize {
        self.attempts.iter().filter(|a| a.passed()).count()
    }
}

/// Closes a transcript if `attempts` is complete under `config`; returns
/// `None` for a partial transcript that should be continued.
pub fn finalize(task_id: &str, attempts: &[Attempt], config: &RunConfig) -> Option<ProblemTranscript> {
    let last = attempts.last()?;
    let (terminal, first_solved_round) = match config.mode {
        RunMode::Repair => {
            if last.passed() {
                (Terminal::Solved, Some(last.round))
            } else if last.is_api_error() {
                (Terminal::ApiError, None)
            } else if attempts.len() >= config.attempt_budget() {
                (Terminal::Exhausted, None)
            } else {
                return None;
            }
        }
        RunMode::Resample => {
            if attempts.len() < config.attempt_budget() {
                return None;
            }
            match attempts.iter().find(|a| a.passed()) {
                Some(a) => (Terminal::Solved, Some(a.round)),
                None if attempts.iter().any(Attempt::is_api_error) => (Terminal::ApiError, None),
                None => (Terminal::Exhausted, None),
            }
        }
    };
    Some(ProblemTranscript {
        task_id: task_id.to_string(),
        attempts: attempts.to_vec(),
        first_solved_round,
        terminal,
    })
}

pub fn initial_conversation(problem: &Problem) -> Conversation {
    Conversation {
        messages: vec![Message::system(SYSTEM_PROMPT), Message::user(problem.prompt.clone())],
        metadata: ConversationMeta {
            task_id: problem.task_id.clone(),
            round: 0,
        },
    }
}

fn strategy_instruction(strategy: RepairStrategy) -> &'static str {
    match strategy {
        RepairStrategy::Minimal => "Please provide the corrected function.",
        RepairStrategy::ExplainThenFix => {
            "First explain the bug in 1-2 sentences, then provide the corrected code."
        }
        RepairStrategy::ChainOfThought => {
            "Reason step-by-step before writing code: (1) what does the error tell us, (2) what is the root cause, (3) what is the fix. Then provide the corrected code."
        }
    }
}

/// Builds the round-`round` repair request from the problem, the previous
/// extracted candidate and its feedback, in that order.
pub fn repair_conversation(
    problem: &Problem,
    previous_code: &str,
    feedback: &str,
    strategy: RepairStrategy,
    round: u32,
) -> Conversation {
    let code = if previous_code.trim().is_empty() {
        "(no code could be extracted from your previous response)"
    } else {
        previous_code
    };
    let content = format!(
        "{prompt}\n\nYour previous attempt:\n```python\n{code}\n```\n\nIt failed with the following error:\n{feedback}\n\n{instruction}",
        prompt = problem.prompt.trim_end(),
        code = code.trim_end(),
        feedback = feedback.trim_end(),
        instruction = strategy_instruction(strategy),
    );
    Conversation {
        messages: vec![Message::system(SYSTEM_PROMPT), Message::user(content)],
        metadata: ConversationMeta {
            task_id: problem.task_id.clone(),
            round,
        },
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("sandbox failure: {0}")]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Binds a provider, an executor and a configuration.
pub struct Engine<'a> {
    pub provider: &'a dyn Provider,
    pub executor: &'a Executor,
    pub config: RunConfig,
}

impl Engine<'_> {
    fn attempt(&self, problem: &Problem, conversation: Conversation) -> Result<Attempt, EngineError> {
        let round = conversation.metadata.round;
        let completion = match self.provider.generate(&conversation, &self.config.decoding) {
            Ok(c) => c,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                tracing::warn!(task = %problem.task_id, round, error = %e, "provider failure");
                return Ok(Attempt {
                    round,
                    conversation,
                    raw_completion: String::new(),
                    extraction: ExtractionResult::failed(false),
                    outcome: ExecutionOutcome::api_error(&e.to_string()),
                    usage: TokenUsage::default(),
                });
            }
        };
        let extraction = extract(&completion.text, problem);
        let outcome = self.executor.execute(&extraction.code, problem, &self.config.limits)?;
        Ok(Attempt {
            round,
            conversation,
            raw_completion: completion.text,
            extraction,
            outcome,
            usage: completion.usage,
        })
    }

    pub fn run_problem(&self, problem: &Problem) -> Result<ProblemTranscript, EngineError> {
        self.continue_problem(problem, Vec::new())
    }

    /// Runs a problem to completion starting from already-recorded attempts.
    pub fn continue_problem(&self, problem: &Problem, mut attempts: Vec<Attempt>) -> Result<ProblemTranscript, EngineError> {
        loop {
            if let Some(done) = finalize(&problem.task_id, &attempts, &self.config) {
                return Ok(done);
            }
            let round = attempts.len() as u32;
            let conversation = match (self.config.mode, attempts.last()) {
                (RunMode::Repair, Some(prev)) => repair_conversation(
                    problem,
                    &prev.extraction.code,
                    &prev.outcome.feedback,
                    self.config.strategy,
                    round,
                ),
                (RunMode::Resample, _) | (RunMode::Repair, None) => {
                    let mut c = initial_conversation(problem);
                    c.metadata.round = round;
                    c
                }
            };
            attempts.push(self.attempt(problem, conversation)?);
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Problems processed concurrently.
    pub workers: usize,
    /// Stop after committing this many transcripts in this invocation.
    pub stop_after: Option<usize>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            stop_after: None,
        }
    }
}

/// All transcripts of one run, sorted by task_id.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub manifest: crate::ledger::RunManifest,
    pub transcripts: Vec<ProblemTranscript>,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.transcripts.len() == self.manifest.n_problems
    }

    pub fn usage(&self) -> TokenUsage {
        self.transcripts.iter().map(ProblemTranscript::usage).sum()
    }
}

/// Runs every pending problem of `set`, committing finished transcripts to
/// the ledger in task_id order. Transcripts already in the ledger are kept.
pub fn run_suite(
    set: &ProblemSet,
    engine: &Engine<'_>,
    ledger: &mut RunLedger,
    options: &SuiteOptions,
) -> Result<RunResult, EngineError> {
    if ledger.manifest().config()?.canonical_json() != engine.config.canonical_json() {
        return Err(EngineError::Config(
            "ledger manifest was written for a different configuration".into(),
        ));
    }
    let pending = ledger.resume_plan(set)?;
    let partial = ledger.partial_attempts();
    let limit = options.stop_after.unwrap_or(usize::MAX).min(pending.len());
    let work: Vec<(&Problem, Vec<Attempt>)> = pending[..limit]
        .iter()
        .map(|id| {
            let problem = set.get(id).expect("resume plan only names problems of the set");
            (problem, partial.get(id).cloned().unwrap_or_default())
        })
        .collect();

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<ProblemTranscript, EngineError>)>();
    let workers = options.workers.max(1).min(work.len().max(1));

    let mut failure: Option<EngineError> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (work, next, abort) = (&work, &next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((problem, prior)) = work.get(i) else { break };
                let result = engine.continue_problem(problem, prior.clone());
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // reorder buffer: commit strictly in work order
        let mut buffered: BTreeMap<usize, ProblemTranscript> = BTreeMap::new();
        let mut committed = 0;
        for (i, result) in rx {
            match result {
                Ok(t) => {
                    buffered.insert(i, t);
                }
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(e);
                    }
                    continue;
                }
            }
            while let Some(t) = buffered.remove(&committed) {
                if let Err(e) = ledger.append_transcript(&t) {
                    abort.store(true, Ordering::SeqCst);
                    failure.get_or_insert(e.into());
                    return;
                }
                tracing::info!(task = %t.task_id, terminal = ?t.terminal, "committed");
                committed += 1;
            }
        }
        // flush anything finished out of order before the failure
        if failure.is_some() {
            for t in buffered.into_values() {
                if let Err(e) = ledger.append_transcript(&t) {
                    tracing::error!(error = %e, "failed to flush transcript during abort");
                    break;
                }
            }
        }
    });

    if let Some(e) = failure {
        ledger.mark_aborted()?;
        return Err(e);
    }
    let result = ledger.result()?;
    if result.is_complete() {
        ledger.mark_complete()?;
    }
    Ok(RunResult {
        manifest: ledger.manifest().clone(),
        ..result
    })
}
