//! Cumulative pass@1, self-repair gain, repair rates, token efficiency and
//! the unbiased pass@k estimator.
//!
//! Everything is computed from integer counts; rounding to one decimal
//! happens only when a number is formatted for a table.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::engine::{ProblemTranscript, Terminal};
use crate::provider::TokenUsage;
use crate::sandbox::ErrorCategory;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no transcripts to summarize")]
    Empty,
    #[error("pass@k undefined for n={n}, c={c}, k={k} (need 0 <= c <= n and 1 <= k <= n)")]
    Domain { n: u64, c: u64, k: u64 },
    #[error("invalid round counts: {0}")]
    InvalidCounts(String),
}

/// A count and the count it is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Self {
        Self { num, den }
    }

    /// `None` when the denominator is zero.
    pub fn value(self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }

    /// Percentage rounded half-up to one decimal, e.g. `"29.6"`.
    pub fn percent(self) -> Option<String> {
        (self.den > 0).then(|| format_percent(self.num as u64, self.den as u64))
    }
}

/// Rounds `100 * num / den` half-up to tenths, in integer arithmetic.
pub fn percent_tenths(num: u64, den: u64) -> u64 {
    assert!(den > 0, "percentage of an empty population");
    (2000 * num + den) / (2 * den)
}

/// `100 * num / den` with one decimal, e.g. `format_percent(110, 164) == "67.1"`.
pub fn format_percent(num: u64, den: u64) -> String {
    let t = percent_tenths(num, den);
    format!("{}.{}", t / 10, t % 10)
}

/// Signed percentage-point difference of `diff` problems out of `den`,
/// rounded half away from zero, e.g. `"+11.6"`.
pub fn format_pp(diff: i64, den: u64) -> String {
    let t = percent_tenths(diff.unsigned_abs(), den);
    let sign = if diff < 0 && t > 0 { '-' } else { '+' };
    format!("{sign}{}.{}", t / 10, t % 10)
}

/// Token counts in thousands with one decimal, e.g. `19897.9 -> "19.9K"`.
pub fn format_kilo(value: f64) -> String {
    let tenths = (value / 100.0).round() as i64;
    format!("{}.{}K", tenths / 10, (tenths % 10).abs())
}

/// First-solved histogram of a repair run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundCounts {
    n: usize,
    first_solved: Vec<usize>,
}

impl RoundCounts {
    /// `first_solved[i]` problems first pass at round `i`; the rest never do.
    pub fn new(n: usize, first_solved: Vec<usize>) -> Result<Self, MetricsError> {
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        if first_solved.is_empty() {
            return Err(MetricsError::InvalidCounts("no rounds".into()));
        }
        let solved: usize = first_solved.iter().sum();
        if solved > n {
            return Err(MetricsError::InvalidCounts(format!("{solved} solved of {n}")));
        }
        Ok(Self { n, first_solved })
    }

    /// Builds the histogram over `rounds` rounds (`1 + max_rounds`).
    pub fn from_transcripts(transcripts: &[ProblemTranscript], rounds: usize) -> Result<Self, MetricsError> {
        let mut first_solved = vec![0; rounds.max(1)];
        for t in transcripts {
            if let Some(r) = t.first_solved_round {
                let slot = first_solved.get_mut(r as usize).ok_or_else(|| {
                    MetricsError::InvalidCounts(format!("{} solved at round {r}, beyond {rounds} rounds", t.task_id))
                })?;
                *slot += 1;
            }
        }
        Self::new(transcripts.len(), first_solved)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rounds(&self) -> usize {
        self.first_solved.len()
    }

    pub fn first_solved(&self) -> &[usize] {
        &self.first_solved
    }

    pub fn never(&self) -> usize {
        self.n - self.first_solved.iter().sum::<usize>()
    }

    /// Problems solved at or before each round.
    pub fn solved_by(&self) -> Vec<usize> {
        self.first_solved
            .iter()
            .scan(0, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }

    /// Problems whose round-0 attempt failed.
    pub fn initially_failed(&self) -> usize {
        self.n - self.first_solved[0]
    }

    /// Initially failed problems solved in a later round.
    pub fn repaired(&self) -> usize {
        self.first_solved[1..].iter().sum()
    }

    pub fn cumulative_pass(&self) -> Vec<f64> {
        self.solved_by().iter().map(|&s| s as f64 / self.n as f64).collect()
    }

    /// Self-repair gain in percentage points, from raw counts.
    pub fn delta_pp(&self) -> f64 {
        100.0 * self.repaired() as f64 / self.n as f64
    }

    /// Gain of each repair round over the previous one, in percentage points.
    pub fn marginal_pp(&self) -> Vec<f64> {
        self.first_solved[1..]
            .iter()
            .map(|&c| 100.0 * c as f64 / self.n as f64)
            .collect()
    }

    /// Repaired fraction of initially failed problems.
    pub fn repair_success(&self) -> Ratio {
        Ratio::new(self.repaired(), self.initially_failed())
    }

    /// Rounds row as printed in tables: cumulative percentages then Δ.
    pub fn rounds_row(&self) -> Vec<String> {
        let mut row: Vec<String> = self
            .solved_by()
            .iter()
            .map(|&s| format_percent(s as u64, self.n as u64))
            .collect();
        row.push(format_pp(self.repaired() as i64, self.n as u64));
        row
    }
}

/// Cumulative pass@1 per round for a repair run of `rounds` rounds.
pub fn cumulative_pass_at_1(transcripts: &[ProblemTranscript], rounds: usize) -> Result<Vec<f64>, MetricsError> {
    Ok(RoundCounts::from_transcripts(transcripts, rounds)?.cumulative_pass())
}

pub fn repair_delta(transcripts: &[ProblemTranscript], rounds: usize) -> Result<f64, MetricsError> {
    Ok(RoundCounts::from_transcripts(transcripts, rounds)?.delta_pp())
}

pub fn per_round_marginal(transcripts: &[ProblemTranscript], rounds: usize) -> Result<Vec<f64>, MetricsError> {
    Ok(RoundCounts::from_transcripts(transcripts, rounds)?.marginal_pp())
}

/// `None` when every problem passed at round 0.
pub fn repair_success_rate(transcripts: &[ProblemTranscript], rounds: usize) -> Result<Option<f64>, MetricsError> {
    Ok(RoundCounts::from_transcripts(transcripts, rounds)?.repair_success().value())
}

/// Per round-0 failure category: problems eventually solved over problems
/// that failed with that category at round 0.
pub fn repair_rate_by_error_type(transcripts: &[ProblemTranscript]) -> BTreeMap<ErrorCategory, Ratio> {
    let mut rates: BTreeMap<ErrorCategory, Ratio> = BTreeMap::new();
    for t in transcripts {
        if let Some(category) = t.r0_category() {
            let r = rates.entry(category).or_insert(Ratio::new(0, 0));
            r.den += 1;
            if t.terminal == Terminal::Solved {
                r.num += 1;
            }
        }
    }
    rates
}

/// Counts of round-0 failure categories; problems passing at round 0 are
/// left out.
pub fn r0_error_distribution(transcripts: &[ProblemTranscript]) -> BTreeMap<ErrorCategory, usize> {
    let mut dist = BTreeMap::new();
    for category in transcripts.iter().filter_map(ProblemTranscript::r0_category) {
        *dist.entry(category).or_insert(0) += 1;
    }
    dist
}

/// Unbiased pass@k estimate from `n` samples of which `c` pass:
/// `1 - C(n-c, k) / C(n, k)`, evaluated as a product.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricsError> {
    if c > n || k < 1 || k > n {
        return Err(MetricsError::Domain { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (0..k).map(|i| 1.0 - c as f64 / (n - i) as f64).product();
    Ok(1.0 - miss)
}

/// Tokens spent per percentage point gained; billed tokens only.
/// `None` unless `delta_pp > 0`.
pub fn tokens_per_pp(usage: &TokenUsage, delta_pp: f64) -> Option<f64> {
    (delta_pp > 0.0).then(|| usage.billed() as f64 / delta_pp)
}

/// Every reported quantity of one repair run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub n_problems: usize,
    pub counts: RoundCounts,
    pub cumulative_pass: Vec<f64>,
    pub delta_pp: f64,
    pub marginal_pp: Vec<f64>,
    pub first_solved_counts: Vec<usize>,
    pub never_count: usize,
    pub repair_success_rate: Option<f64>,
    pub per_error_repair_rate: BTreeMap<ErrorCategory, Ratio>,
    pub r0_error_distribution: BTreeMap<ErrorCategory, usize>,
    pub total_tokens: TokenUsage,
    pub tokens_per_pp: Option<f64>,
}

impl MetricsSummary {
    pub fn from_transcripts(transcripts: &[ProblemTranscript], rounds: usize) -> Result<Self, MetricsError> {
        let counts = RoundCounts::from_transcripts(transcripts, rounds)?;
        let total_tokens: TokenUsage = transcripts.iter().map(ProblemTranscript::usage).sum();
        let delta_pp = counts.delta_pp();
        Ok(Self {
            n_problems: counts.n(),
            cumulative_pass: counts.cumulative_pass(),
            delta_pp,
            marginal_pp: counts.marginal_pp(),
            first_solved_counts: counts.first_solved().to_vec(),
            never_count: counts.never(),
            repair_success_rate: counts.repair_success().value(),
            per_error_repair_rate: repair_rate_by_error_type(transcripts),
            r0_error_distribution: r0_error_distribution(transcripts),
            tokens_per_pp: tokens_per_pp(&total_tokens, delta_pp),
            total_tokens,
            counts,
        })
    }
}

/// pass@k of a resample run for k = 1..=samples_k, averaged over problems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampleSummary {
    pub n_problems: usize,
    pub samples_k: usize,
    pub pass_at_k: Vec<f64>,
    pub solved_any: usize,
    pub total_tokens: TokenUsage,
}

impl ResampleSummary {
    pub fn from_transcripts(transcripts: &[ProblemTranscript], samples_k: usize) -> Result<Self, MetricsError> {
        if transcripts.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = samples_k as u64;
        let mut rates = vec![0.0; samples_k];
        for t in transcripts {
            let c = t.passes() as u64;
            for (k, slot) in rates.iter_mut().enumerate() {
                *slot += pass_at_k(n, c, k as u64 + 1)?;
            }
        }
        for slot in &mut rates {
            *slot /= transcripts.len() as f64;
        }
        Ok(Self {
            n_problems: transcripts.len(),
            samples_k,
            pass_at_k: rates,
            solved_any: transcripts.iter().filter(|t| t.terminal == Terminal::Solved).count(),
            total_tokens: transcripts.iter().map(ProblemTranscript::usage).sum(),
        })
    }
}

impl fmt::Display for RoundCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rounds_row().join(", "))
    }
}
