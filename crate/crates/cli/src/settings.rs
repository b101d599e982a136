//! Resolution of run settings from flags, an optional `key=value` config
//! file and built-in defaults, in that order of precedence.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use clap::Args;
use mend_core::engine::RepairStrategy;
use mend_core::provider::{ModelSpec, ProviderKind, RequestDecorations};
use mend_core::sandbox::{ExecutionLimits, RunnerSpec};
use mend_core::BenchmarkKind;

/// Keys accepted in a config file; each matches the long flag of the same name.
pub const CONFIG_KEYS: &[&str] = &[
    "dataset",
    "benchmark",
    "model",
    "provider",
    "endpoint",
    "api-key-env",
    "script",
    "strategy",
    "max-rounds",
    "timeout",
    "max-feedback-bytes",
    "workers",
    "out-dir",
    "runner",
    "runner-arg",
    "temperature",
    "max-tokens",
    "retries",
    "rpm",
    "limit",
    "samples",
    "user-suffix",
    "extra-body",
];

/// Flags shared by `run`, `resample` and `ablate`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Benchmark file (.jsonl or .jsonl.gz)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// humaneval | mbpp_sanitized | normalized
    #[arg(long)]
    pub benchmark: Option<String>,
    /// Model name sent to the provider
    #[arg(long)]
    pub model: Option<String>,
    /// openai | scripted
    #[arg(long)]
    pub provider: Option<String>,
    /// Base URL of an OpenAI-compatible chat-completions API
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Environment variable holding the API key
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Script file for the scripted provider
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Wall-clock limit per candidate, in seconds
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Maximum bytes of error feedback shown to the model
    #[arg(long)]
    pub max_feedback_bytes: Option<usize>,
    /// Problems processed concurrently
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory holding run directories
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Sandbox runner executable
    #[arg(long)]
    pub runner: Option<PathBuf>,
    /// Extra argument passed to the runner before the file names (repeatable)
    #[arg(long = "runner-arg", allow_hyphen_values = true)]
    pub runner_args: Vec<String>,
    /// Maximum completion tokens per request
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Total tries per provider call
    #[arg(long)]
    pub retries: Option<u32>,
    /// Requests per minute (shared by all workers)
    #[arg(long)]
    pub rpm: Option<u32>,
    /// Only use the first N problems, in file order
    #[arg(long)]
    pub limit: Option<usize>,
    /// Text appended to every user message on the wire (e.g. /no_think)
    #[arg(long)]
    pub user_suffix: Option<String>,
    /// JSON object merged into every request body
    #[arg(long)]
    pub extra_body: Option<String>,
    /// Start a new run instead of resuming a matching one
    #[arg(long)]
    pub fresh: bool,
    /// Stop after committing this many problems (the run can be resumed)
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// key=value config file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Parses a `key=value` config file. `#` starts a comment line; repeated
/// `runner-arg` keys accumulate.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, Vec<String>>, UsageError> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", idx + 1)))?;
        let key = k.trim().replace('_', "-");
        if matches!(key.as_str(), "api-key" | "key" | "token") {
            return Err(usage("credentials are read from the environment only"));
        }
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(usage(format!("config line {}: unknown key `{}`", idx + 1, k.trim())));
        }
        map.entry(key).or_default().push(v.trim().to_string());
    }
    Ok(map)
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub dataset: PathBuf,
    pub benchmark: BenchmarkSource,
    pub model: ModelSpec,
    pub script: Option<PathBuf>,
    pub limits: ExecutionLimits,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub runner: RunnerSpec,
    pub max_tokens: u32,
    pub retries: u32,
    pub rpm: Option<u32>,
    pub limit: Option<usize>,
    pub fresh: bool,
    pub stop_after: Option<usize>,
    config: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkSource {
    Raw(BenchmarkKind),
    /// A file previously written in the normalized problem format.
    Normalized,
}

struct Resolver<'a> {
    config: &'a BTreeMap<String, Vec<String>>,
}

impl Resolver<'_> {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.config.get(key).and_then(|v| v.last()) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config key `{key}`: {e}"))),
            None => Ok(None),
        }
    }

    fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(flag, key)?
            .ok_or_else(|| usage(format!("missing required setting --{key}")))
    }
}

fn parse_benchmark(text: &str) -> Result<BenchmarkSource, UsageError> {
    let lower = text.to_ascii_lowercase();
    if lower == "normalized" {
        return Ok(BenchmarkSource::Normalized);
    }
    lower.parse().map(BenchmarkSource::Raw).map_err(usage)
}

impl Settings {
    pub fn resolve(flags: &RunFlags) -> Result<Self, UsageError> {
        let config = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("config file {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let r = Resolver { config: &config };

        let provider_name: String = r.get(flags.provider.clone(), "provider")?.unwrap_or_else(|| "openai".into());
        let provider = match provider_name.as_str() {
            "openai" | "openai-compatible" | "openai_compatible" => ProviderKind::OpenaiCompatible,
            "scripted" => ProviderKind::Scripted,
            other => return Err(usage(format!("unknown provider `{other}` (expected openai or scripted)"))),
        };
        let model_name: String = r.require(flags.model.clone(), "model")?;
        let mut decorations = RequestDecorations {
            user_suffix: r.get(flags.user_suffix.clone(), "user-suffix")?,
            ..Default::default()
        };
        if let Some(extra) = r.get::<String>(flags.extra_body.clone(), "extra-body")? {
            let value: serde_json::Value =
                serde_json::from_str(&extra).map_err(|e| usage(format!("--extra-body: {e}")))?;
            decorations.extra_body = value
                .as_object()
                .cloned()
                .ok_or_else(|| usage("--extra-body must be a JSON object"))?;
        }
        let script: Option<PathBuf> = r.get(flags.script.clone(), "script")?;
        let model = match provider {
            ProviderKind::OpenaiCompatible => {
                let endpoint: String = r.require(flags.endpoint.clone(), "endpoint")?;
                let env: String = r
                    .get(flags.api_key_env.clone(), "api-key-env")?
                    .unwrap_or_else(|| "OPENAI_API_KEY".into());
                ModelSpec {
                    decorations,
                    ..ModelSpec::openai_compatible(model_name, endpoint, env)
                }
            }
            ProviderKind::Scripted => {
                if script.is_none() {
                    return Err(usage("--provider scripted needs --script"));
                }
                ModelSpec {
                    decorations,
                    ..ModelSpec::scripted(model_name)
                }
            }
        };

        let timeout: f64 = r.get(flags.timeout, "timeout")?.unwrap_or(15.0);
        if !(timeout.is_finite() && timeout > 0.0) {
            return Err(usage("--timeout must be a positive number of seconds"));
        }
        let feedback: usize = r.get(flags.max_feedback_bytes, "max-feedback-bytes")?.unwrap_or(2048);
        let limits = ExecutionLimits::new(Duration::from_millis((timeout * 1000.0).round() as u64), feedback)
            .map_err(|e| usage(e.to_string()))?;

        let runner_path: PathBuf = r
            .get(flags.runner.clone(), "runner")?
            .unwrap_or_else(|| PathBuf::from("mend-runner"));
        let runner_args = if flags.runner_args.is_empty() {
            config.get("runner-arg").cloned().unwrap_or_default()
        } else {
            flags.runner_args.clone()
        };

        let benchmark = parse_benchmark(&r.require::<String>(flags.benchmark.clone(), "benchmark")?)?;
        let settings = Settings {
            dataset: r.require(flags.dataset.clone(), "dataset")?,
            benchmark,
            model,
            script,
            limits,
            workers: r.get(flags.workers, "workers")?.unwrap_or(4).max(1),
            out_dir: r.get(flags.out_dir.clone(), "out-dir")?.unwrap_or_else(|| PathBuf::from("runs")),
            runner: RunnerSpec::new(runner_path).with_args(runner_args),
            max_tokens: r.get(flags.max_tokens, "max-tokens")?.unwrap_or(4096),
            retries: r.get(flags.retries, "retries")?.unwrap_or(5).max(1),
            rpm: r.get(flags.rpm, "rpm")?,
            limit: r.get(flags.limit, "limit")?,
            fresh: flags.fresh,
            stop_after: flags.stop_after,
            config: config.clone(),
        };
        Ok(settings)
    }

    /// A setting only some subcommands use, with the usual precedence.
    pub fn extra<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        Resolver { config: &self.config }.get(flag, key)
    }

    pub fn strategy(&self, flag: Option<RepairStrategy>) -> Result<RepairStrategy, UsageError> {
        Ok(self.extra(flag, "strategy")?.unwrap_or(RepairStrategy::Minimal))
    }
}
