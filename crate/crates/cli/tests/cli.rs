//! End-to-end behaviour of the `mend` binary: exit codes, resume, reports
//! across runs, resampling and configuration files.

mod common;

use std::fs;

use common::*;
use mend_core::ledger::ATTEMPTS_FILE;
use mend_core::provider::{ScriptEntry, ScriptedTransport};

/// Script in which problem i is first solved at the round given by
/// `first_solved` (consumed in task order); the rest never pass.
fn counts_script(n: usize, first_solved: &[usize], rounds: u32) -> String {
    let mut solve_at = Vec::new();
    for (round, &count) in first_solved.iter().enumerate() {
        solve_at.extend(std::iter::repeat_n(Some(round as u32), count));
    }
    solve_at.resize(n, None);
    let mut script = Vec::new();
    for (i, at) in solve_at.iter().enumerate() {
        for round in 0..rounds {
            let text = if Some(round) == *at {
                passing(i)
            } else {
                raising(i, "AssertionError")
            };
            script.push((format!("HumanEval/{i}"), round, ScriptEntry::Reply(text)));
            if Some(round) == *at {
                break;
            }
        }
    }
    ScriptedTransport::to_jsonl(&script)
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[test]
fn scripted_run_prints_summary() {
    let ws = Workspace::scenario();
    let out = mend(&ws.run_args("runs", 2));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("stub-model [minimal] on humaneval, 6 problems"), "{text}");
    assert!(text.contains("delta: +50.0 pp"), "{text}");
    assert!(text.contains("repaired: 3 of 5 initially failed (60.0%)"), "{text}");
}

#[test]
fn missing_credential_is_a_config_error_without_ledger() {
    let ws = Workspace::scenario();
    let out_dir = ws.path().join("runs");
    let out = mend(&args(&[
        "run",
        "--dataset",
        ws.dataset().to_str().unwrap(),
        "--benchmark",
        "humaneval",
        "--model",
        "gpt-test",
        "--endpoint",
        "http://127.0.0.1:9/v1",
        "--api-key-env",
        "MEND_TEST_KEY_THAT_IS_NOT_SET",
        "--runner",
        STUB_RUNNER,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("MEND_TEST_KEY_THAT_IS_NOT_SET"));
    assert!(!out_dir.exists());
}

#[test]
fn rerun_of_complete_run_changes_nothing() {
    let ws = Workspace::scenario();
    assert_eq!(mend(&ws.run_args("runs", 3)).status.code(), Some(0));
    let ledger = ws.run_dir("runs").join(ATTEMPTS_FILE);
    let before = fs::read(&ledger).unwrap();
    // an empty script proves no provider call is made
    fs::write(ws.script(), "").unwrap();
    let again = mend(&ws.run_args("runs", 3));
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    assert_eq!(fs::read(&ledger).unwrap(), before);
}

#[test]
fn strategy_runs_compare_against_minimal() {
    let ws = tempfile::tempdir().unwrap();
    let dataset = ws.path().join("he.jsonl");
    write_humaneval(&dataset, 164);
    let mut dirs = Vec::new();
    for (strategy, counts) in [("minimal", [108, 12, 4]), ("explain_then_fix", [108, 11, 6])] {
        let script = ws.path().join(format!("{strategy}.jsonl"));
        fs::write(&script, counts_script(164, &counts, 3)).unwrap();
        let out_dir = ws.path().join(strategy);
        let out = mend(&args(&[
            "run",
            "--dataset",
            dataset.to_str().unwrap(),
            "--benchmark",
            "humaneval",
            "--provider",
            "scripted",
            "--script",
            script.to_str().unwrap(),
            "--model",
            "stub-model",
            "--runner",
            STUB_RUNNER,
            "--strategy",
            strategy,
            "--max-rounds",
            "2",
            "--workers",
            "8",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]));
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        dirs.push(fs::read_dir(&out_dir).unwrap().next().unwrap().unwrap().path());
    }
    let reports = ws.path().join("reports");
    let mut report_args = vec!["report".to_string()];
    report_args.extend(dirs.iter().map(|d| d.to_str().unwrap().to_string()));
    report_args.extend(["--out".to_string(), reports.to_str().unwrap().to_string()]);
    let out = mend(&report_args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let (h, rows) = read_csv(&reports.join("humaneval_ablation.csv"));
    let row = |strategy: &str| rows.iter().find(|r| cell(&h, r, "strategy") == strategy).unwrap().clone();
    let minimal = row("minimal");
    let explain = row("explain_then_fix");
    let pcts = |r: &[String]| -> Vec<String> { (0..3).map(|i| cell(&h, r, &format!("R{i}_pct")).to_string()).collect() };
    assert_eq!(pcts(&minimal), ["65.9", "73.2", "75.6"]);
    assert_eq!(pcts(&explain), ["65.9", "72.6", "76.2"]);
    assert_eq!(cell(&h, &minimal, "delta_pp"), "+9.8");
    assert_eq!(cell(&h, &explain, "delta_pp"), "+10.4");
    assert_eq!(cell(&h, &explain, "delta_vs_minimal_pp"), "+0.6");
}

#[test]
fn ablate_runs_each_strategy() {
    let ws = Workspace::scenario();
    let mut a = ws.run_args("runs", 2);
    a[0] = "ablate".into();
    a.extend(args(&["--strategies", "minimal,chain_of_thought"]));
    let out = mend(&a);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let runs: Vec<_> = fs::read_dir(ws.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join(ATTEMPTS_FILE).exists())
        .collect();
    assert_eq!(runs.len(), 2);
    let (h, rows) = read_csv(&ws.path().join("runs/ablation/humaneval_ablation.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(cell(&h, r, "delta_pp"), "+50.0");
    }
}

#[test]
fn resample_reports_pass_at_k() {
    let ws = tempfile::tempdir().unwrap();
    let dataset = ws.path().join("he.jsonl");
    write_humaneval(&dataset, 1);
    let script: Vec<_> = (0..5u32)
        .map(|s| {
            let text = if s == 1 || s == 3 {
                passing(0)
            } else {
                raising(0, "AssertionError")
            };
            ("HumanEval/0".to_string(), s, ScriptEntry::Reply(text))
        })
        .collect();
    let script_path = ws.path().join("s.jsonl");
    fs::write(&script_path, ScriptedTransport::to_jsonl(&script)).unwrap();
    let out = mend(&args(&[
        "resample",
        "--dataset",
        dataset.to_str().unwrap(),
        "--benchmark",
        "humaneval",
        "--provider",
        "scripted",
        "--script",
        script_path.to_str().unwrap(),
        "--model",
        "stub-model",
        "--runner",
        STUB_RUNNER,
        "--samples",
        "5",
        "--out-dir",
        ws.path().join("runs").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split_whitespace().collect()).collect();
    assert!(rows.contains(&vec!["1", "0.4000", "40.0"]), "{text}");
    assert!(rows.contains(&vec!["5", "1.0000", "100.0"]), "{text}");
}

#[test]
fn corrupt_ledger_line_is_named() {
    let ws = Workspace::scenario();
    assert_eq!(mend(&ws.run_args("runs", 2)).status.code(), Some(0));
    let run = ws.run_dir("runs");
    let ledger = run.join(ATTEMPTS_FILE);
    let text = fs::read_to_string(&ledger).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{\"run_id\": broken";
    fs::write(&ledger, lines.join("\n") + "\n").unwrap();
    let out = mend(&args(&["report", run.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn report_across_benchmarks_builds_cross_table() {
    let ws = Workspace::scenario();
    assert_eq!(mend(&ws.run_args("he", 2)).status.code(), Some(0));

    let mbpp = ws.path().join("mbpp.jsonl");
    let record = serde_json::json!({
        "task_id": 2,
        "prompt": "Write a function that returns its argument.",
        "code": "def ident(x):\n    return x\n",
        "test_list": ["assert ident(1) == 1"],
    });
    fs::write(&mbpp, format!("{record}\n")).unwrap();
    let script = ws.path().join("mbpp_script.jsonl");
    let entry = ("Mbpp/2".to_string(), 0, ScriptEntry::Reply("```python\ndef ident(x):\n    return x\n```".into()));
    fs::write(&script, ScriptedTransport::to_jsonl(&[entry])).unwrap();
    let out = mend(&args(&[
        "run",
        "--dataset",
        mbpp.to_str().unwrap(),
        "--benchmark",
        "mbpp_sanitized",
        "--provider",
        "scripted",
        "--script",
        script.to_str().unwrap(),
        "--model",
        "stub-model",
        "--runner",
        STUB_RUNNER,
        "--out-dir",
        ws.path().join("mbpp").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let reports = ws.path().join("reports");
    let out = mend(&args(&[
        "report",
        ws.run_dir("he").to_str().unwrap(),
        ws.run_dir("mbpp").to_str().unwrap(),
        "--out",
        reports.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (_, rows) = read_csv(&reports.join("cross_benchmark.csv"));
    assert_eq!(rows.len(), 2);
    assert!(reports.join("humaneval_rounds.csv").exists());
    assert!(reports.join("mbpp_sanitized_rounds.csv").exists());
}

#[test]
fn report_without_runs_is_a_usage_error() {
    assert_eq!(mend(&["report"]).status.code(), Some(2));
}

#[test]
fn config_file_supplies_settings_but_not_secrets() {
    let ws = Workspace::scenario();
    let config = ws.path().join("mend.conf");
    fs::write(
        &config,
        format!(
            "# scripted fixture\ndataset = {}\nbenchmark = humaneval\nprovider = scripted\nscript = {}\nmodel = stub-model\nrunner = {}\nmax-rounds = 4\nworkers = 2\n",
            ws.dataset().display(),
            ws.script().display(),
            STUB_RUNNER
        ),
    )
    .unwrap();
    let out_dir = ws.path().join("runs");
    let out = mend(&args(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("delta: +50.0 pp"));

    let bad = ws.path().join("bad.conf");
    fs::write(&bad, "api-key = sk-something\n").unwrap();
    let out = mend(&args(&["run", "--config", bad.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_flags_unparseable_tests() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.jsonl");
    write_humaneval(&good, 3);
    let out = mend(&args(&[
        "validate",
        "--dataset",
        good.to_str().unwrap(),
        "--benchmark",
        "humaneval",
        "--runner",
        STUB_RUNNER,
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));

    let bad = dir.path().join("bad.jsonl");
    let mut record: serde_json::Value = serde_json::from_str(&humaneval_line("HumanEval/0", "f0")).unwrap();
    record["test"] = "def check(candidate):\n    assert candidate(1 == 1\n".into();
    fs::write(&bad, format!("{record}\n")).unwrap();
    let out = mend(&args(&[
        "validate",
        "--dataset",
        bad.to_str().unwrap(),
        "--benchmark",
        "humaneval",
        "--runner",
        STUB_RUNNER,
    ]));
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("HumanEval/0"));
}
