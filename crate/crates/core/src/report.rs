//! Table and plot-data export.
//!
//! Every table is a comma-separated file with a header row. Rows carry the
//! raw integer counts next to the one-decimal percentages derived from them,
//! so each percentage can be recomputed from the same file.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::benchmark::BenchmarkKind;
use crate::engine::{RunMode, RunResult};
use crate::metrics::{format_kilo, format_percent, format_pp, tokens_per_pp, MetricsError, MetricsSummary, ResampleSummary};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no runs to report")]
    Empty,
    #[error("table `{table}` mixes benchmarks {first} and {second}")]
    MixedBenchmarks {
        table: String,
        first: BenchmarkKind,
        second: BenchmarkKind,
    },
    #[error("run {run_id} is incomplete ({have} of {want} problems)")]
    Incomplete { run_id: String, have: usize, want: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// A named table with string cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn csv_cell(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

impl Table {
    fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = row.iter().map(|c| csv_cell(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned rendering for terminals.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// A complete repair run with its metrics.
struct RepairRun<'a> {
    run: &'a RunResult,
    summary: MetricsSummary,
}

struct ResampleRun<'a> {
    run: &'a RunResult,
    summary: ResampleSummary,
}

fn check_complete(run: &RunResult) -> Result<(), ReportError> {
    if !run.is_complete() {
        return Err(ReportError::Incomplete {
            run_id: run.manifest.run_id.clone(),
            have: run.transcripts.len(),
            want: run.manifest.n_problems,
        });
    }
    Ok(())
}

fn single_benchmark(table: &str, runs: &[&RunResult]) -> Result<BenchmarkKind, ReportError> {
    let first = runs.first().ok_or(ReportError::Empty)?.manifest.benchmark;
    for r in runs {
        if r.manifest.benchmark != first {
            return Err(ReportError::MixedBenchmarks {
                table: table.to_string(),
                first,
                second: r.manifest.benchmark,
            });
        }
    }
    Ok(first)
}

fn sort_key(run: &RunResult) -> (String, String, String) {
    let m = &run.manifest;
    (m.model_name.clone(), m.strategy.as_str().to_string(), m.run_id.clone())
}

fn repair_runs<'a>(runs: &[&'a RunResult]) -> Result<Vec<RepairRun<'a>>, ReportError> {
    let mut out = Vec::new();
    for &run in runs.iter().filter(|r| r.manifest.mode == RunMode::Repair) {
        check_complete(run)?;
        let rounds = 1 + run.manifest.max_rounds as usize;
        out.push(RepairRun {
            run,
            summary: MetricsSummary::from_transcripts(&run.transcripts, rounds)?,
        });
    }
    out.sort_by_key(|r| sort_key(r.run));
    Ok(out)
}

fn resample_runs<'a>(runs: &[&'a RunResult]) -> Result<Vec<ResampleRun<'a>>, ReportError> {
    let mut out = Vec::new();
    for &run in runs.iter().filter(|r| r.manifest.mode == RunMode::Resample) {
        check_complete(run)?;
        out.push(ResampleRun {
            run,
            summary: ResampleSummary::from_transcripts(&run.transcripts, run.manifest.samples_k as usize)?,
        });
    }
    out.sort_by_key(|r| sort_key(r.run));
    Ok(out)
}

fn max_rounds(runs: &[RepairRun<'_>]) -> usize {
    runs.iter().map(|r| r.summary.counts.rounds()).max().unwrap_or(1)
}

fn id_cells(run: &RunResult) -> Vec<String> {
    vec![
        run.manifest.model_name.clone(),
        run.manifest.strategy.as_str().to_string(),
        run.manifest.run_id.clone(),
    ]
}

/// Cumulative pass@1 per round and Δ, one row per repair run.
pub fn rounds_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("rounds", runs)?;
    let repair = repair_runs(runs)?;
    let rounds = max_rounds(&repair);
    let mut header = vec!["model".to_string(), "strategy".into(), "run_id".into(), "n".into()];
    for i in 0..rounds {
        header.push(format!("R{i}_solved"));
        header.push(format!("R{i}_pct"));
    }
    header.extend(["delta_solved".to_string(), "delta_pp".into()]);
    let mut table = Table {
        name: format!("{bench}_rounds"),
        header,
        rows: Vec::new(),
    };
    for r in &repair {
        let c = &r.summary.counts;
        let n = c.n() as u64;
        let mut row = id_cells(r.run);
        row.push(c.n().to_string());
        let solved = c.solved_by();
        for i in 0..rounds {
            match solved.get(i) {
                Some(&s) => row.extend([s.to_string(), format_percent(s as u64, n)]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(c.repaired().to_string());
        row.push(format_pp(c.repaired() as i64, n));
        table.rows.push(row);
    }
    Ok(table)
}

/// Problems first solved at each round, never solved, and the repair rate.
pub fn first_solved_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("first_solved", runs)?;
    let repair = repair_runs(runs)?;
    let rounds = max_rounds(&repair);
    let mut header = vec!["model".to_string(), "strategy".into(), "run_id".into(), "n".into()];
    header.extend((0..rounds).map(|i| format!("R{i}")));
    header.extend(["never".to_string(), "repaired".into(), "initially_failed".into(), "repair_pct".into()]);
    let mut table = Table {
        name: format!("{bench}_first_solved"),
        header,
        rows: Vec::new(),
    };
    for r in &repair {
        let c = &r.summary.counts;
        let mut row = id_cells(r.run);
        row.push(c.n().to_string());
        row.extend((0..rounds).map(|i| c.first_solved().get(i).map_or(String::new(), ToString::to_string)));
        row.push(c.never().to_string());
        row.push(c.repaired().to_string());
        row.push(c.initially_failed().to_string());
        row.push(c.repair_success().percent().unwrap_or_default());
        table.rows.push(row);
    }
    Ok(table)
}

/// Token totals and tokens per percentage point of repair gain.
pub fn tokens_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("tokens", runs)?;
    let mut table = Table::new(
        format!("{bench}_tokens"),
        &[
            "model",
            "strategy",
            "run_id",
            "prompt_tokens",
            "completion_tokens",
            "reasoning_tokens",
            "billed_tokens",
            "n",
            "delta_solved",
            "delta_pp",
            "tokens_per_pp",
        ],
    );
    for r in repair_runs(runs)? {
        let s = &r.summary;
        let u = s.total_tokens;
        let mut row = id_cells(r.run);
        row.extend([
            u.prompt_tokens.to_string(),
            u.completion_tokens.to_string(),
            u.reasoning_tokens.to_string(),
            u.billed().to_string(),
            s.n_problems.to_string(),
            s.counts.repaired().to_string(),
            format_pp(s.counts.repaired() as i64, s.n_problems as u64),
            tokens_per_pp(&u, s.delta_pp).map(format_kilo).unwrap_or_default(),
        ]);
        table.rows.push(row);
    }
    Ok(table)
}

/// Round-0 failure categories and how often each was eventually repaired.
pub fn error_types_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("error_types", runs)?;
    let mut table = Table::new(
        format!("{bench}_error_types"),
        &[
            "model",
            "strategy",
            "run_id",
            "category",
            "bucket",
            "r0_failures",
            "initially_failed",
            "share_pct",
            "repaired",
            "repair_pct",
        ],
    );
    for r in repair_runs(runs)? {
        let s = &r.summary;
        let failed = s.counts.initially_failed();
        for (category, count) in &s.r0_error_distribution {
            let rate = s.per_error_repair_rate[category];
            let mut row = id_cells(r.run);
            row.extend([
                category.as_str().to_string(),
                category.report_bucket().as_str().to_string(),
                count.to_string(),
                failed.to_string(),
                format_percent(*count as u64, failed as u64),
                rate.num.to_string(),
                rate.percent().unwrap_or_default(),
            ]);
            table.rows.push(row);
        }
    }
    Ok(table)
}

/// Strategy matrix: one row per (model, strategy) with Δ against the run's
/// own R0 and the gap to the same model's minimal-strategy Δ.
pub fn ablation_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("ablation", runs)?;
    let repair = repair_runs(runs)?;
    let rounds = max_rounds(&repair);
    let mut header = vec!["model".to_string(), "strategy".into(), "run_id".into(), "n".into()];
    header.extend((0..rounds).map(|i| format!("R{i}_pct")));
    header.extend([
        "delta_solved".to_string(),
        "delta_pp".into(),
        "minimal_delta_solved".into(),
        "delta_vs_minimal_pp".into(),
    ]);
    let mut table = Table {
        name: format!("{bench}_ablation"),
        header,
        rows: Vec::new(),
    };
    let minimal: BTreeMap<&str, (usize, usize)> = repair
        .iter()
        .filter(|r| r.run.manifest.strategy == crate::engine::RepairStrategy::Minimal)
        .map(|r| (r.run.manifest.model_name.as_str(), (r.summary.counts.repaired(), r.summary.n_problems)))
        .collect();
    for r in &repair {
        let c = &r.summary.counts;
        let n = c.n() as u64;
        let mut row = id_cells(r.run);
        row.push(c.n().to_string());
        let solved = c.solved_by();
        row.extend((0..rounds).map(|i| solved.get(i).map_or(String::new(), |&s| format_percent(s as u64, n))));
        row.push(c.repaired().to_string());
        row.push(format_pp(c.repaired() as i64, n));
        match minimal.get(r.run.manifest.model_name.as_str()) {
            Some(&(base, base_n)) if base_n == c.n() => {
                row.push(base.to_string());
                row.push(format_pp(c.repaired() as i64 - base as i64, n));
            }
            _ => row.extend([String::new(), String::new()]),
        }
        table.rows.push(row);
    }
    Ok(table)
}

/// pass@k for k = 1..=samples_k of each resample run.
pub fn pass_at_k_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("pass_at_k", runs)?;
    let mut table = Table::new(
        format!("{bench}_pass_at_k"),
        &["model", "run_id", "n", "samples", "k", "pass_at_k", "pass_at_k_pct"],
    );
    for r in resample_runs(runs)? {
        for (i, v) in r.summary.pass_at_k.iter().enumerate() {
            table.rows.push(vec![
                r.run.manifest.model_name.clone(),
                r.run.manifest.run_id.clone(),
                r.summary.n_problems.to_string(),
                r.summary.samples_k.to_string(),
                (i + 1).to_string(),
                format!("{v:.6}"),
                format!("{:.1}", 100.0 * v),
            ]);
        }
    }
    Ok(table)
}

/// Number of problems with each count of passing samples; pass@k is a
/// function of this histogram.
pub fn pass_counts_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("pass_counts", runs)?;
    let mut table = Table::new(
        format!("{bench}_pass_counts"),
        &["model", "run_id", "samples", "passing_samples", "problems"],
    );
    for r in resample_runs(runs)? {
        let mut hist = vec![0usize; r.summary.samples_k + 1];
        for t in &r.run.transcripts {
            hist[t.passes().min(r.summary.samples_k)] += 1;
        }
        for (c, count) in hist.iter().enumerate() {
            table.rows.push(vec![
                r.run.manifest.model_name.clone(),
                r.run.manifest.run_id.clone(),
                r.summary.samples_k.to_string(),
                c.to_string(),
                count.to_string(),
            ]);
        }
    }
    Ok(table)
}

/// Self-repair against independent resampling for models that have both.
pub fn resampling_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("resampling", runs)?;
    let mut table = Table::new(
        format!("{bench}_resampling"),
        &[
            "model",
            "repair_strategy",
            "repair_run_id",
            "n",
            "repair_solved",
            "repair_final_pct",
            "repair_tokens",
            "resample_run_id",
            "samples",
            "resample_solved_any",
            "resample_pass_at_k_pct",
            "resample_tokens",
        ],
    );
    let resample = resample_runs(runs)?;
    for r in repair_runs(runs)? {
        let m = &r.run.manifest;
        for s in resample.iter().filter(|s| s.run.manifest.model_name == m.model_name) {
            let n = r.summary.n_problems as u64;
            let solved = r.summary.counts.solved_by().last().copied().unwrap_or(0);
            table.rows.push(vec![
                m.model_name.clone(),
                m.strategy.as_str().to_string(),
                m.run_id.clone(),
                n.to_string(),
                solved.to_string(),
                format_percent(solved as u64, n),
                r.summary.total_tokens.billed().to_string(),
                s.run.manifest.run_id.clone(),
                s.summary.samples_k.to_string(),
                s.summary.solved_any.to_string(),
                format_percent(s.summary.solved_any as u64, s.summary.n_problems as u64),
                s.summary.total_tokens.billed().to_string(),
            ]);
        }
    }
    Ok(table)
}

/// Δ of every repair run across benchmarks; the one table allowed to span
/// benchmarks.
pub fn cross_benchmark_table(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let mut table = Table::new(
        "cross_benchmark",
        &[
            "model",
            "strategy",
            "run_id",
            "benchmark",
            "n",
            "R0_solved",
            "R0_pct",
            "final_solved",
            "final_pct",
            "delta_solved",
            "delta_pp",
        ],
    );
    let mut repair = repair_runs(runs)?;
    repair.sort_by_key(|r| {
        let (model, strategy, id) = sort_key(r.run);
        (model, strategy, r.run.manifest.benchmark.as_str(), id)
    });
    for r in &repair {
        let c = &r.summary.counts;
        let n = c.n() as u64;
        let solved = c.solved_by();
        let last = *solved.last().unwrap_or(&0);
        let mut row = id_cells(r.run);
        row.extend([
            r.run.manifest.benchmark.as_str().to_string(),
            c.n().to_string(),
            solved[0].to_string(),
            format_percent(solved[0] as u64, n),
            last.to_string(),
            format_percent(last as u64, n),
            c.repaired().to_string(),
            format_pp(c.repaired() as i64, n),
        ]);
        table.rows.push(row);
    }
    Ok(table)
}

/// Long-form plot series: cumulative pass@1 by round.
pub fn cumulative_series(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("series_cumulative", runs)?;
    let mut table = Table::new(
        format!("{bench}_series_cumulative"),
        &["model", "strategy", "run_id", "round", "solved", "n", "pass_pct"],
    );
    for r in repair_runs(runs)? {
        let n = r.summary.n_problems;
        for (i, s) in r.summary.counts.solved_by().into_iter().enumerate() {
            let mut row = id_cells(r.run);
            row.extend([i.to_string(), s.to_string(), n.to_string(), format_percent(s as u64, n as u64)]);
            table.rows.push(row);
        }
    }
    Ok(table)
}

/// Long-form plot series: marginal gain of each repair round.
pub fn marginal_series(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let bench = single_benchmark("series_marginal", runs)?;
    let mut table = Table::new(
        format!("{bench}_series_marginal"),
        &["model", "strategy", "run_id", "round", "first_solved", "n", "marginal_pp"],
    );
    for r in repair_runs(runs)? {
        let n = r.summary.n_problems;
        for (i, c) in r.summary.counts.first_solved().iter().enumerate().skip(1) {
            let mut row = id_cells(r.run);
            row.extend([i.to_string(), c.to_string(), n.to_string(), format_pp(*c as i64, n as u64)]);
            table.rows.push(row);
        }
    }
    Ok(table)
}

/// Long-form plot series over the reporting buckets: the round-0
/// distribution or, with `repair_rate`, the repair rate per bucket.
fn bucket_series(runs: &[&RunResult], repair_rate: bool) -> Result<Table, ReportError> {
    let name = if repair_rate { "series_repair_by_error" } else { "series_r0_errors" };
    let bench = single_benchmark(name, runs)?;
    let header: &[&str] = if repair_rate {
        &["model", "strategy", "run_id", "bucket", "repaired", "r0_failures", "repair_pct"]
    } else {
        &["model", "strategy", "run_id", "bucket", "r0_failures", "initially_failed", "share_pct"]
    };
    let mut table = Table::new(format!("{bench}_{name}"), header);
    for r in repair_runs(runs)? {
        let mut buckets: BTreeMap<_, (usize, usize)> = BTreeMap::new();
        for (cat, count) in &r.summary.r0_error_distribution {
            let e = buckets.entry(cat.report_bucket()).or_insert((0, 0));
            e.0 += r.summary.per_error_repair_rate[cat].num;
            e.1 += count;
        }
        let failed = r.summary.counts.initially_failed();
        for (bucket, (repaired, count)) in buckets {
            let mut row = id_cells(r.run);
            row.push(bucket.as_str().to_string());
            if repair_rate {
                row.extend([repaired.to_string(), count.to_string(), format_percent(repaired as u64, count as u64)]);
            } else {
                row.extend([count.to_string(), failed.to_string(), format_percent(count as u64, failed as u64)]);
            }
            table.rows.push(row);
        }
    }
    Ok(table)
}

pub fn r0_error_series(runs: &[&RunResult]) -> Result<Table, ReportError> {
    bucket_series(runs, false)
}

pub fn repair_by_error_series(runs: &[&RunResult]) -> Result<Table, ReportError> {
    bucket_series(runs, true)
}

/// Long-form plot series: Δ per model and benchmark.
pub fn cross_benchmark_series(runs: &[&RunResult]) -> Result<Table, ReportError> {
    let cross = cross_benchmark_table(runs)?;
    let pick = ["model", "strategy", "benchmark", "delta_solved", "n", "delta_pp"];
    let idx: Vec<usize> = pick
        .iter()
        .map(|p| cross.header.iter().position(|h| h == p).expect("column exists"))
        .collect();
    let mut table = Table::new("series_cross_benchmark", &pick);
    table.rows = cross
        .rows
        .iter()
        .map(|row| idx.iter().map(|&i| row[i].clone()).collect())
        .collect();
    Ok(table)
}

/// Builds every table for `runs`, without touching the filesystem.
pub fn build_tables(runs: &[RunResult]) -> Result<Vec<Table>, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut by_bench: BTreeMap<&str, Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        by_bench.entry(r.manifest.benchmark.as_str()).or_default().push(r);
    }
    let all: Vec<&RunResult> = runs.iter().collect();
    let mut tables = Vec::new();
    for group in by_bench.values() {
        let has_repair = group.iter().any(|r| r.manifest.mode == RunMode::Repair);
        let has_resample = group.iter().any(|r| r.manifest.mode == RunMode::Resample);
        if has_repair {
            tables.push(rounds_table(group)?);
            tables.push(first_solved_table(group)?);
            tables.push(tokens_table(group)?);
            tables.push(error_types_table(group)?);
            tables.push(ablation_table(group)?);
            tables.push(cumulative_series(group)?);
            tables.push(r0_error_series(group)?);
            tables.push(repair_by_error_series(group)?);
            tables.push(marginal_series(group)?);
        }
        if has_resample {
            tables.push(pass_at_k_table(group)?);
            tables.push(pass_counts_table(group)?);
        }
        if has_repair && has_resample {
            tables.push(resampling_table(group)?);
        }
    }
    if all.iter().any(|r| r.manifest.mode == RunMode::Repair) {
        tables.push(cross_benchmark_table(&all)?);
        tables.push(cross_benchmark_series(&all)?);
    }
    Ok(tables)
}

/// Writes every table for `runs` into `out_dir` as `<name>.csv`. Nothing is
/// written if any table fails to build.
pub fn export_tables(runs: &[RunResult], out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let tables = build_tables(runs)?;
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for t in &tables {
        let path = out_dir.join(format!("{}.csv", t.name));
        fs::write(&path, t.to_csv()).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
