//! Self-repair evaluation harness for LLM code generation.
//!
//! A model is given a programming problem, its candidate is run against the
//! benchmark tests in a subprocess, and failures are fed back for up to a
//! fixed number of repair rounds. Every attempt is appended to a resumable
//! ledger, and reports are derived from the ledger alone.

pub mod benchmark;
pub mod engine;
pub mod extraction;
pub mod ledger;
pub mod metrics;
pub mod provider;
pub mod report;
pub mod sandbox;
pub mod stub_runner;

pub use benchmark::{BenchmarkKind, LoadError, Problem, ProblemSet};
pub use engine::{
    run_suite, Attempt, Conversation, Engine, EngineError, Message, ProblemTranscript, RepairStrategy, RunConfig,
    RunMode, RunResult, SuiteOptions, Terminal,
};
pub use extraction::{extract, ExtractionMethod, ExtractionResult};
pub use ledger::{load_run, AttemptRecord, LedgerError, RunLedger, RunManifest};
pub use metrics::{pass_at_k, MetricsError, MetricsSummary, RoundCounts};
pub use provider::{Completion, DecodingParams, Gateway, ModelSpec, Provider, ProviderError, TokenUsage};
pub use report::{export_tables, ReportError, Table};
pub use sandbox::{classify, ErrorCategory, ExecutionLimits, ExecutionOutcome, Executor, RunnerSpec};
