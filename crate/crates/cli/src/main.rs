//! `mend`: run self-repair evaluations, resample, ablate repair prompts,
//! validate datasets and export reports.
//!
//! Exit codes: 0 success, 1 validation findings, 2 usage or configuration
//! error, 3 infrastructure failure during a run, 4 ledger or dataset error,
//! 5 run stopped before completion (resume by rerunning).

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use mend_core::benchmark::{self, validate, ProblemSet};
use mend_core::engine::{run_suite, Engine, EngineError, RepairStrategy, RunConfig, RunMode, RunResult, SuiteOptions};
use mend_core::ledger::{load_run, RunLedger, RunManifest};
use mend_core::metrics::{format_percent, format_pp, MetricsSummary, ResampleSummary};
use mend_core::provider::{
    Gateway, HttpTransport, ProviderError, ProviderKind, RateLimiter, RetryPolicy, ScriptedTransport,
};
use mend_core::report::{ablation_table, build_tables, export_tables, Table};
use mend_core::sandbox::{ExecutionLimits, Executor, RunnerParseCheck, RunnerSpec};
use mend_core::{BenchmarkKind, Provider};
use settings::{BenchmarkSource, RunFlags, Settings, UsageError};

#[derive(Debug, Parser)]
#[command(name = "mend", version, about = "Self-repair evaluation harness for code-generating models")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, test and repair every problem of a benchmark
    Run {
        #[command(flatten)]
        flags: RunFlags,
        /// minimal | explain_then_fix | chain_of_thought
        #[arg(long)]
        strategy: Option<RepairStrategy>,
        /// Repair rounds after the initial attempt
        #[arg(long)]
        max_rounds: Option<u32>,
        /// Sampling temperature
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Draw independent samples per problem and report pass@k
    Resample {
        #[command(flatten)]
        flags: RunFlags,
        /// Samples per problem
        #[arg(long)]
        samples: Option<u32>,
        /// Sampling temperature
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// One repair run per strategy, plus a strategy matrix
    Ablate {
        #[command(flatten)]
        flags: RunFlags,
        /// Comma-separated strategies
        #[arg(long, value_delimiter = ',', default_value = "minimal,explain_then_fix,chain_of_thought")]
        strategies: Vec<RepairStrategy>,
        /// Repair rounds after the initial attempt
        #[arg(long)]
        max_rounds: Option<u32>,
        /// Where to write the combined tables (default: <out-dir>/ablation)
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Regenerate all tables from run directories
    Report {
        /// Run directories
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Output directory (default: <run>/reports for one run, ./reports otherwise)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a benchmark file for loader and test-program problems
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// humaneval | mbpp_sanitized | normalized
        #[arg(long)]
        benchmark: String,
        /// Runner used for parse checks of the test programs
        #[arg(long)]
        runner: Option<PathBuf>,
        #[arg(long = "runner-arg", allow_hyphen_values = true)]
        runner_args: Vec<String>,
        /// Write the normalized problem set to this file
        #[arg(long)]
        normalized_out: Option<PathBuf>,
    },
}

/// A failed command, tagged with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Infrastructure(String),
    Data(String),
    Findings,
    Incomplete,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Findings => 1,
            Failure::Usage(_) => 2,
            Failure::Infrastructure(_) => 3,
            Failure::Data(_) => 4,
            Failure::Incomplete => 5,
        }
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match &e {
            EngineError::Provider(_) | EngineError::Config(_) => Failure::Usage(e.to_string()),
            EngineError::Sandbox(_) => Failure::Infrastructure(e.to_string()),
            EngineError::Ledger(_) => Failure::Data(e.to_string()),
        }
    }
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(m) | Failure::Infrastructure(m) | Failure::Data(m) => eprintln!("mend: {m}"),
                Failure::Findings => {}
                Failure::Incomplete => eprintln!("mend: run stopped before completion; rerun to resume"),
            }
            ExitCode::from(failure.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            flags,
            strategy,
            max_rounds,
            temperature,
        } => {
            let settings = Settings::resolve(&flags)?;
            let config = repair_config(&settings, strategy, max_rounds, temperature)?;
            let result = execute(&settings, config)?;
            print_repair(&result)?;
            finish(&result)
        }
        Command::Resample {
            flags,
            samples,
            temperature,
        } => {
            let settings = Settings::resolve(&flags)?;
            let samples = settings.extra(samples, "samples")?.unwrap_or(5);
            if samples == 0 {
                return Err(Failure::Usage("--samples must be at least 1".into()));
            }
            let mut config = RunConfig::resample(samples);
            config.limits = settings.limits;
            config.decoding.max_output_tokens = settings.max_tokens;
            if let Some(t) = settings.extra(temperature, "temperature")? {
                config.decoding.temperature = t;
            }
            let result = execute(&settings, config)?;
            print_resample(&result)?;
            finish(&result)
        }
        Command::Ablate {
            flags,
            strategies,
            max_rounds,
            report_dir,
        } => {
            let settings = Settings::resolve(&flags)?;
            let mut results = Vec::new();
            let mut strategies = strategies;
            strategies.dedup();
            for strategy in strategies {
                let config = repair_config(&settings, Some(strategy), max_rounds, None)?;
                let result = execute(&settings, config)?;
                println!(
                    "run {} [{}]: {} of {} problems",
                    result.manifest.run_id,
                    strategy,
                    result.transcripts.len(),
                    result.manifest.n_problems
                );
                results.push(result);
            }
            if results.iter().any(|r| !r.is_complete()) {
                return Err(Failure::Incomplete);
            }
            let refs: Vec<&RunResult> = results.iter().collect();
            let matrix = ablation_table(&refs).map_err(data)?;
            print!("{}", matrix.to_text());
            let dir = report_dir.unwrap_or_else(|| settings.out_dir.join("ablation"));
            export_tables(&results, &dir).map_err(data)?;
            println!("reports: {}", dir.display());
            Ok(())
        }
        Command::Report { run_dirs, out } => {
            let mut results = Vec::new();
            for dir in &run_dirs {
                results.push(load_run(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?);
            }
            let out = out.unwrap_or_else(|| match run_dirs.as_slice() {
                [one] => one.join("reports"),
                _ => PathBuf::from("reports"),
            });
            let tables = build_tables(&results).map_err(data)?;
            for r in &results {
                match r.manifest.mode {
                    RunMode::Repair => print_repair(r)?,
                    RunMode::Resample => print_resample(r)?,
                }
            }
            export_tables(&results, &out).map_err(data)?;
            for t in &tables {
                println!("wrote {}", out.join(format!("{}.csv", t.name)).display());
            }
            Ok(())
        }
        Command::Validate {
            dataset,
            benchmark,
            runner,
            runner_args,
            normalized_out,
        } => {
            let set = load_problem_set(&dataset, &benchmark)?;
            let limits = ExecutionLimits::default();
            let executor = runner.map(|r| Executor::new(RunnerSpec::new(r).with_args(runner_args), 4));
            let check = executor.as_ref().map(|executor| RunnerParseCheck {
                executor,
                limits,
            });
            let findings = validate(&set, check.as_ref().map(|c| c as &dyn benchmark::ParseCheck));
            if let Some(path) = normalized_out {
                let file = std::fs::File::create(&path).map_err(data)?;
                set.write_jsonl(std::io::BufWriter::new(file)).map_err(data)?;
            }
            for f in &findings {
                println!("{}: {}", f.task_id, f.message);
            }
            if findings.is_empty() {
                println!("ok: {} problems in {}", set.len(), set.name);
                Ok(())
            } else {
                println!("{} finding(s) in {} problems", findings.len(), set.len());
                Err(Failure::Findings)
            }
        }
    }
}

fn repair_config(
    settings: &Settings,
    strategy: Option<RepairStrategy>,
    max_rounds: Option<u32>,
    temperature: Option<f64>,
) -> Result<RunConfig, Failure> {
    let strategy = settings.strategy(strategy)?;
    let max_rounds = settings.extra(max_rounds, "max-rounds")?.unwrap_or(4);
    let mut config = RunConfig::repair(strategy, max_rounds);
    config.limits = settings.limits;
    config.decoding.max_output_tokens = settings.max_tokens;
    if let Some(t) = settings.extra(temperature, "temperature")? {
        config.decoding.temperature = t;
    }
    Ok(config)
}

fn load_problem_set(path: &Path, benchmark: &str) -> Result<ProblemSet, Failure> {
    let source = match benchmark.to_ascii_lowercase().as_str() {
        "normalized" => BenchmarkSource::Normalized,
        other => BenchmarkSource::Raw(other.parse().map_err(Failure::Usage)?),
    };
    load_source(path, source)
}

fn load_source(path: &Path, source: BenchmarkSource) -> Result<ProblemSet, Failure> {
    match source {
        BenchmarkSource::Raw(kind) => benchmark::load(kind, path),
        BenchmarkSource::Normalized => benchmark::load_normalized(path),
    }
    .map_err(data)
}

fn build_provider(settings: &Settings) -> Result<Box<dyn Provider>, Failure> {
    let config_err = |e: ProviderError| Failure::Usage(e.to_string());
    match settings.model.provider {
        ProviderKind::Scripted => {
            let script = settings.script.as_deref().expect("settings require a script");
            let transport = ScriptedTransport::from_file(script).map_err(config_err)?;
            Ok(Box::new(Gateway::new(transport, RetryPolicy::no_delay(settings.retries))))
        }
        ProviderKind::OpenaiCompatible => {
            let transport = HttpTransport::from_spec(&settings.model, Duration::from_secs(300)).map_err(config_err)?;
            let retry = RetryPolicy {
                max_attempts: settings.retries,
                ..RetryPolicy::default()
            };
            let mut gateway = Gateway::new(transport, retry);
            if let Some(rpm) = settings.rpm {
                gateway = gateway.with_rate_limit(RateLimiter::new(rpm, 1));
            }
            Ok(Box::new(gateway))
        }
    }
}

fn fresh_nonce() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    format!("{nanos:x}-{}", std::process::id())
}

/// Loads the problems, checks provider and runner, then runs or resumes.
fn execute(settings: &Settings, config: RunConfig) -> Result<RunResult, Failure> {
    let mut set = load_source(&settings.dataset, settings.benchmark)?;
    if let Some(n) = settings.limit {
        let head = set.problems()[..n.min(set.len())].to_vec();
        set = ProblemSet::new(format!("{}[:{n}]", set.name), head).map_err(data)?;
    }
    let kind: BenchmarkKind = match settings.benchmark {
        BenchmarkSource::Raw(k) => k,
        BenchmarkSource::Normalized => set
            .kind()
            .ok_or_else(|| Failure::Data("normalized file mixes benchmarks or is empty".into()))?,
    };
    let provider = build_provider(settings)?;
    let executor = Executor::new(settings.runner.clone(), settings.workers);
    match executor.parse_only("", &settings.limits) {
        Ok(outcome) if outcome.passed() => {}
        Ok(outcome) => {
            return Err(Failure::Usage(format!(
                "runner {} failed its self-check: {}",
                settings.runner.program.display(),
                outcome.feedback
            )))
        }
        Err(e) => return Err(Failure::Usage(format!("runner unusable: {e}"))),
    }

    let nonce = if settings.fresh { fresh_nonce() } else { String::new() };
    let manifest = RunManifest::new(&set, kind, &settings.model, &config, &nonce);
    let mut ledger = RunLedger::open(&settings.out_dir, manifest).map_err(data)?;
    let engine = Engine {
        provider: provider.as_ref(),
        executor: &executor,
        config,
    };
    let options = SuiteOptions {
        workers: settings.workers,
        stop_after: settings.stop_after,
    };
    let result = run_suite(&set, &engine, &mut ledger, &options)?;
    if result.is_complete() {
        export_tables(std::slice::from_ref(&result), &ledger.dir().join("reports")).map_err(data)?;
    }
    Ok(result)
}

fn finish(result: &RunResult) -> Result<(), Failure> {
    if result.is_complete() {
        Ok(())
    } else {
        println!(
            "run {}: {} of {} problems done",
            result.manifest.run_id,
            result.transcripts.len(),
            result.manifest.n_problems
        );
        Err(Failure::Incomplete)
    }
}

fn header(result: &RunResult) {
    let m = &result.manifest;
    println!("run {} {} on {}, {} problems", m.run_id, m.label(), m.benchmark, m.n_problems);
}

fn print_repair(result: &RunResult) -> Result<(), Failure> {
    if !result.is_complete() {
        return Ok(());
    }
    header(result);
    let rounds = 1 + result.manifest.max_rounds as usize;
    let s = MetricsSummary::from_transcripts(&result.transcripts, rounds).map_err(data)?;
    let n = s.n_problems as u64;
    let mut table = Table {
        name: "rounds".into(),
        header: vec!["round".into(), "first_solved".into(), "solved".into(), "pass@1_pct".into()],
        rows: Vec::new(),
    };
    for (i, (first, solved)) in s.first_solved_counts.iter().zip(s.counts.solved_by()).enumerate() {
        table.rows.push(vec![
            format!("R{i}"),
            first.to_string(),
            solved.to_string(),
            format_percent(solved as u64, n),
        ]);
    }
    print!("{}", table.to_text());
    println!("never solved: {}", s.never_count);
    println!("delta: {} pp", format_pp(s.counts.repaired() as i64, n));
    match s.counts.repair_success().percent() {
        Some(p) => println!("repaired: {} of {} initially failed ({p}%)", s.counts.repaired(), s.counts.initially_failed()),
        None => println!("repaired: no initial failures"),
    }
    println!("tokens: {} prompt + completion", s.total_tokens.billed());
    Ok(())
}

fn print_resample(result: &RunResult) -> Result<(), Failure> {
    if !result.is_complete() {
        return Ok(());
    }
    header(result);
    let s = ResampleSummary::from_transcripts(&result.transcripts, result.manifest.samples_k as usize).map_err(data)?;
    let mut table = Table {
        name: "pass_at_k".into(),
        header: vec!["k".into(), "pass@k".into(), "pct".into()],
        rows: Vec::new(),
    };
    for (i, v) in s.pass_at_k.iter().enumerate() {
        table.rows.push(vec![(i + 1).to_string(), format!("{v:.4}"), format!("{:.1}", 100.0 * v)]);
    }
    print!("{}", table.to_text());
    println!("tokens: {} prompt + completion", s.total_tokens.billed());
    Ok(())
}
