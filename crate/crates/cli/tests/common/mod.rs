//! Fixture benchmark, scripted model replies and helpers for driving the
//! `mend` binary against `mend-stub-runner`.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mend_core::provider::{ScriptEntry, ScriptedTransport};

pub const MEND: &str = env!("CARGO_BIN_EXE_mend");
pub const STUB_RUNNER: &str = env!("CARGO_BIN_EXE_mend-stub-runner");

/// One raw HumanEval record per line; `entry` is the function name.
pub fn humaneval_line(task_id: &str, entry: &str) -> String {
    serde_json::json!({
        "task_id": task_id,
        "prompt": format!("def {entry}(x):\n    \"\"\"Return x unchanged.\"\"\"\n"),
        "entry_point": entry,
        "canonical_solution": "    return x\n",
        "test": "def check(candidate):\n    assert candidate(1) == 1\n",
    })
    .to_string()
}

pub fn write_humaneval(path: &Path, n: usize) {
    let text: String = (0..n)
        .map(|i| humaneval_line(&format!("HumanEval/{i}"), &format!("f{i}")) + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

pub fn passing(i: usize) -> String {
    format!("```python\ndef f{i}(x):\n    return x\n```")
}

pub fn raising(i: usize, exception: &str) -> String {
    format!("```python\ndef f{i}(x):\n    # stub: raise {exception} failed on round\n    return x\n```")
}

pub fn syntax_error(i: usize) -> String {
    format!("```python\ndef f{i}(x:\n    return x\n```")
}

/// Hand-built six-problem scenario with four repair rounds:
///
/// | problem | behaviour                                      |
/// |---------|------------------------------------------------|
/// | 0       | passes at R0                                   |
/// | 1       | NameError at R0, fixed at R1                   |
/// | 2       | assertion failures R0..R2, fixed at R3         |
/// | 3       | assertion failures in every round              |
/// | 4       | syntax error at R0, provider failure at R1     |
/// | 5       | empty completion at R0, fixed at R1            |
pub fn scenario_script() -> Vec<(String, u32, ScriptEntry)> {
    let id = |i: usize| format!("HumanEval/{i}");
    let reply = |i: usize, round: u32, text: String| (id(i), round, ScriptEntry::Reply(text));
    let mut s = vec![
        reply(0, 0, passing(0)),
        reply(1, 0, raising(1, "NameError")),
        (
            id(1),
            1,
            ScriptEntry::Flaky {
                completion: passing(1),
                fail_times: 1,
            },
        ),
    ];
    for round in 0..3 {
        s.push(reply(2, round, raising(2, "AssertionError")));
    }
    s.push(reply(2, 3, passing(2)));
    for round in 0..5 {
        s.push(reply(3, round, raising(3, "AssertionError")));
    }
    s.push(reply(4, 0, syntax_error(4)));
    s.push((id(4), 1, ScriptEntry::AlwaysFail { always_fail: true }));
    s.push(reply(5, 0, String::new()));
    s.push(reply(5, 1, passing(5)));
    s
}

/// A scratch directory holding the dataset and script for one scenario.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn scenario() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        write_humaneval(&ws.dataset(), 6);
        fs::write(ws.script(), ScriptedTransport::to_jsonl(&scenario_script())).unwrap();
        ws
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn dataset(&self) -> PathBuf {
        self.path().join("humaneval.jsonl")
    }

    pub fn script(&self) -> PathBuf {
        self.path().join("script.jsonl")
    }

    /// Arguments for a scripted run writing under `out`.
    pub fn run_args(&self, out: &str, workers: usize) -> Vec<String> {
        let workers = workers.to_string();
        [
            "run",
            "--dataset",
            self.dataset().to_str().unwrap(),
            "--benchmark",
            "humaneval",
            "--provider",
            "scripted",
            "--script",
            self.script().to_str().unwrap(),
            "--model",
            "stub-model",
            "--runner",
            STUB_RUNNER,
            "--max-rounds",
            "4",
            "--workers",
            &workers,
            "--out-dir",
            self.path().join(out).to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    /// The single run directory under `out`.
    pub fn run_dir(&self, out: &str) -> PathBuf {
        let mut dirs: Vec<PathBuf> = fs::read_dir(self.path().join(out))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_dir())
            .collect();
        assert_eq!(dirs.len(), 1, "expected one run directory in {out}");
        dirs.pop().unwrap()
    }
}

pub fn mend<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(MEND)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("mend binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Parses a report CSV (no quoted cells expected) into header and rows.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

/// Value of `column` in `row`, looked up by header name.
pub fn cell<'a>(header: &[String], row: &'a [String], column: &str) -> &'a str {
    let idx = header
        .iter()
        .position(|h| h == column)
        .unwrap_or_else(|| panic!("no column {column} in {header:?}"));
    &row[idx]
}

/// All files in a directory with their bytes, sorted by name.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
