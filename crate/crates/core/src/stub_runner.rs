//! A Python-free runner that speaks the runner wire protocol.
//!
//! It is used for offline end-to-end runs and tests. Instead of executing
//! code it performs a structural syntax check (brackets, block headers,
//! indentation) and then obeys directives embedded in the candidate as
//! comments:
//!
//! ```text
//! # stub: raise NameError name 'helper' is not defined
//! # stub: hang
//! # stub: print some noise          (written to stderr, never stdout)
//! # stub: garbage                   (emits a non-protocol line)
//! # stub: crash                     (exits 1 without output)
//! ```
//!
//! A candidate with no directive passes.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::sandbox::ProtocolLine;

const DIRECTIVE: &str = "# stub:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxIssue {
    pub exception: &'static str,
    pub line: usize,
    pub message: String,
}

const BLOCK_KEYWORDS: &[&str] = &[
    "def", "class", "if", "elif", "else", "for", "while", "try", "except", "finally", "with",
    "async",
];

struct LogicalLine {
    number: usize,
    indent: usize,
    text: String,
}

/// Splits source into logical lines with string literals blanked out and
/// comments removed, checking bracket balance along the way.
fn logical_lines(source: &str) -> Result<Vec<LogicalLine>, SyntaxIssue> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut line = 1;
    let mut current = String::new();
    let mut start_line = 1;
    let mut at_line_start = true;
    let mut indent = 0;
    let mut i = 0;

    let syntax = |line: usize, message: &str| SyntaxIssue {
        exception: "SyntaxError",
        line,
        message: message.to_string(),
    };

    while i < chars.len() {
        let c = chars[i];
        if at_line_start {
            if c == ' ' || c == '\t' {
                indent += if c == '\t' { 8 } else { 1 };
                i += 1;
                continue;
            }
            at_line_start = false;
            start_line = line;
        }
        match c {
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '\'' | '"' => {
                let triple = i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c;
                let open_line = line;
                i += if triple { 3 } else { 1 };
                loop {
                    if i >= chars.len() {
                        return Err(syntax(open_line, "unterminated string literal"));
                    }
                    let d = chars[i];
                    if d == '\\' {
                        if chars.get(i + 1) == Some(&'\n') {
                            line += 1;
                        }
                        i += 2;
                        continue;
                    }
                    if d == '\n' {
                        if !triple {
                            return Err(syntax(open_line, "unterminated string literal"));
                        }
                        line += 1;
                    }
                    if d == c
                        && (!triple
                            || (i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c))
                    {
                        i += if triple { 3 } else { 1 };
                        break;
                    }
                    i += 1;
                }
                current.push_str("\"\"");
                continue;
            }
            '(' | '[' | '{' => stack.push((c, line)),
            ')' | ']' | '}' => {
                let expected = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match stack.pop() {
                    Some((open, _)) if open == expected => {}
                    _ => return Err(syntax(line, &format!("unmatched '{c}'"))),
                }
            }
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                i += 2;
                line += 1;
                continue;
            }
            '\n' => {
                line += 1;
                i += 1;
                if stack.is_empty() {
                    if !current.trim().is_empty() {
                        out.push(LogicalLine {
                            number: start_line,
                            indent,
                            text: current.trim().to_string(),
                        });
                    }
                    current.clear();
                    at_line_start = true;
                    indent = 0;
                } else {
                    current.push(' ');
                }
                continue;
            }
            _ => {}
        }
        current.push(c);
        i += 1;
    }
    if let Some((open, open_line)) = stack.pop() {
        return Err(syntax(open_line, &format!("'{open}' was never closed")));
    }
    if !current.trim().is_empty() {
        out.push(LogicalLine {
            number: start_line,
            indent,
            text: current.trim().to_string(),
        });
    }
    Ok(out)
}

fn first_word(text: &str) -> &str {
    let end = text
        .find(|c: char| !(c.is_alphanumeric() || c == '_'))
        .unwrap_or(text.len());
    &text[..end]
}

/// Structural syntax check. Returns the first problem found.
pub fn check_syntax(source: &str) -> Result<(), SyntaxIssue> {
    let lines = logical_lines(source)?;
    let mut levels = vec![0usize];
    let mut expect_block = false;
    for l in &lines {
        let top = *levels.last().unwrap();
        if expect_block {
            if l.indent <= top {
                return Err(SyntaxIssue {
                    exception: "IndentationError",
                    line: l.number,
                    message: "expected an indented block".into(),
                });
            }
            levels.push(l.indent);
        } else if l.indent > top {
            return Err(SyntaxIssue {
                exception: "IndentationError",
                line: l.number,
                message: "unexpected indent".into(),
            });
        } else if l.indent < top {
            while *levels.last().unwrap() > l.indent {
                levels.pop();
            }
            if *levels.last().unwrap() != l.indent {
                return Err(SyntaxIssue {
                    exception: "IndentationError",
                    line: l.number,
                    message: "unindent does not match any outer indentation level".into(),
                });
            }
        }

        let keyword = first_word(&l.text);
        let is_header = BLOCK_KEYWORDS.contains(&keyword)
            && !(keyword == "async" && !l.text["async".len()..].trim_start().starts_with("def"));
        if is_header && !l.text.contains(':') {
            return Err(SyntaxIssue {
                exception: "SyntaxError",
                line: l.number,
                message: "expected ':'".into(),
            });
        }
        expect_block = l.text.ends_with(':');
    }
    if expect_block {
        return Err(SyntaxIssue {
            exception: "IndentationError",
            line: lines.last().map_or(1, |l| l.number),
            message: "expected an indented block".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Raise { exception: String, message: String },
    Hang,
    Print(String),
    Garbage,
    Crash,
}

pub fn directives(candidate: &str) -> Vec<Directive> {
    candidate
        .lines()
        .filter_map(|l| l.trim_start().strip_prefix(DIRECTIVE))
        .filter_map(|rest| {
            let rest = rest.trim();
            let (verb, arg) = rest.split_once(' ').unwrap_or((rest, ""));
            match verb {
                "raise" => {
                    let (exception, message) = arg.split_once(' ').unwrap_or((arg, ""));
                    Some(Directive::Raise {
                        exception: exception.to_string(),
                        message: message.to_string(),
                    })
                }
                "hang" => Some(Directive::Hang),
                "print" => Some(Directive::Print(arg.to_string())),
                "garbage" => Some(Directive::Garbage),
                "crash" => Some(Directive::Crash),
                _ => None,
            }
        })
        .collect()
}

fn syntax_line(issue: &SyntaxIssue, file: &str, start: Instant) -> ProtocolLine {
    let traceback = format!(
        "  File \"{file}\", line {}\n{}: {}",
        issue.line, issue.exception, issue.message
    );
    ProtocolLine::fail(issue.exception, &traceback, start.elapsed().as_millis() as u64)
}

/// What the stub does for one invocation: the stdout text and exit code.
pub struct StubResult {
    pub stdout: String,
    pub exit_code: i32,
}

/// Evaluates a candidate/test pair. `Hang` blocks forever.
pub fn run_files(candidate: &str, tests: &str) -> StubResult {
    let start = Instant::now();
    if let Err(issue) = check_syntax(candidate) {
        return line_result(syntax_line(&issue, "candidate.py", start));
    }
    if let Err(issue) = check_syntax(tests) {
        return line_result(syntax_line(&issue, "tests.py", start));
    }
    for directive in directives(candidate) {
        match directive {
            Directive::Print(text) => {
                let _ = writeln!(std::io::stderr(), "{text}");
            }
            Directive::Raise { exception, message } => {
                let traceback = format!(
                    "Traceback (most recent call last):\n  File \"tests.py\", line 1, in <module>\n  File \"candidate.py\", line 1, in candidate\n{}",
                    if message.is_empty() {
                        exception.clone()
                    } else {
                        format!("{exception}: {message}")
                    }
                );
                return line_result(ProtocolLine::fail(
                    &exception,
                    &traceback,
                    start.elapsed().as_millis() as u64,
                ));
            }
            Directive::Hang => loop {
                std::thread::sleep(Duration::from_secs(3600));
            },
            Directive::Garbage => {
                return StubResult {
                    stdout: "this is not a protocol line\n".into(),
                    exit_code: 0,
                }
            }
            Directive::Crash => {
                return StubResult {
                    stdout: String::new(),
                    exit_code: 1,
                }
            }
        }
    }
    line_result(ProtocolLine::pass())
}

pub fn run_parse_only(program: &str) -> StubResult {
    let start = Instant::now();
    match check_syntax(program) {
        Ok(()) => line_result(ProtocolLine::pass()),
        Err(issue) => line_result(syntax_line(&issue, "program.py", start)),
    }
}

fn line_result(line: ProtocolLine) -> StubResult {
    StubResult {
        stdout: format!("{}\n", line.to_line()),
        exit_code: 0,
    }
}

/// Entry point for the stub binary; returns the process exit code.
pub fn main_with_args(args: &[String]) -> i32 {
    let read = |p: &str| std::fs::read_to_string(Path::new(p));
    let result = match args {
        [flag, file] if flag == "--parse-only" => match read(file) {
            Ok(src) => run_parse_only(&src),
            Err(e) => {
                eprintln!("mend-stub-runner: {file}: {e}");
                return 2;
            }
        },
        [candidate, tests] => match (read(candidate), read(tests)) {
            (Ok(c), Ok(t)) => run_files(&c, &t),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("mend-stub-runner: {e}");
                return 2;
            }
        },
        _ => {
            eprintln!("usage: mend-stub-runner <candidate-file> <test-file> | --parse-only <file>");
            return 2;
        }
    };
    print!("{}", result.stdout);
    let _ = std::io::stdout().flush();
    result.exit_code
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{parse_protocol, Status};

    #[test]
    fn valid_programs_parse() {
        for src in [
            "",
            "def f(x):\n    return x\n",
            "def f(a,\n      b):\n    if a:\n        return b\n    else:\n        return a\n",
            "x = '''multi\n  line:\n'''\ny = 1\n",
            "class A:\n    def m(self): return 1\n",
            "if x: y = 1\n",
            "def f():\n    s = \"a#b\"  # comment (\n    return s\n",
            "async def g():\n    await x\n",
        ] {
            assert_eq!(check_syntax(src), Ok(()), "{src:?}");
        }
    }

    #[test]
    fn invalid_programs_rejected() {
        for (src, exc) in [
            ("def f(:", "SyntaxError"),
            ("def f()\n    return 1\n", "SyntaxError"),
            ("x = (1, 2]\n", "SyntaxError"),
            ("def f():\nreturn 1\n", "IndentationError"),
            ("x = 1\n    y = 2\n", "IndentationError"),
            ("if x:\n        a = 1\n    b = 2\n", "IndentationError"),
            ("s = 'abc\n", "SyntaxError"),
            ("def f():\n", "IndentationError"),
        ] {
            assert_eq!(check_syntax(src).unwrap_err().exception, exc, "{src:?}");
        }
    }

    #[test]
    fn directive_raise() {
        let r = run_files("def f():\n    return g()\n# stub: raise NameError name 'g' is not defined\n", "assert f()\n");
        let line = parse_protocol(&r.stdout).unwrap();
        assert_eq!(line.status, Status::Fail);
        assert_eq!(line.exception.as_deref(), Some("NameError"));
        assert!(line.traceback.unwrap().ends_with("NameError: name 'g' is not defined"));
    }

    #[test]
    fn syntax_checked_before_directives() {
        let r = run_files("def f(:\n# stub: raise NameError x\n", "");
        let line = parse_protocol(&r.stdout).unwrap();
        assert_eq!(line.exception.as_deref(), Some("SyntaxError"));
    }

    #[test]
    fn print_does_not_touch_stdout() {
        let r = run_files("# stub: print hello {\"status\":\"fail\"}\nx = 1\n", "");
        assert_eq!(r.stdout, "{\"status\":\"pass\"}\n");
    }

    #[test]
    fn parse_only_empty_passes() {
        assert_eq!(run_parse_only("").stdout, "{\"status\":\"pass\"}\n");
    }
}
