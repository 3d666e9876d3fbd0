//! Runs an SMT solver process on emitted SMT-LIB2 and reads back its answer.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use num_traits::Zero;

use super::proof::Refutation;
use super::smtlib::emit_smtlib;
use super::{verify_witness, SolveError, SolveOutcome, Stats, Verdict, Witness};
use crate::formula::{Assignment, Formula};
use crate::rational::{parse_rational, Rational};

/// Environment variable holding the solver command line, e.g. `z3 -in -smt2`.
pub const SOLVER_ENV: &str = "CFSAT_SMT_SOLVER";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalBackend {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalBackend {
    /// Splits a command line on whitespace.
    pub fn new(command: &str) -> Option<Self> {
        let mut words = command.split_whitespace().map(str::to_string);
        let program = words.next()?;
        Some(ExternalBackend {
            program,
            args: words.collect(),
            timeout: Duration::from_secs(60),
        })
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(SOLVER_ENV).ok().and_then(|c| Self::new(&c))
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }

    pub fn describe(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Whether the program can be started at all.
    pub fn available(&self) -> bool {
        Command::new(&self.program)
            .arg("--version")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok()
    }

    pub fn solve(&self, f: &Formula) -> Result<SolveOutcome, SolveError> {
        let script = emit_smtlib(f);
        let output = self.run(&script)?;
        let verdict = parse_answer(&output, f)?;
        if let Verdict::Sat(w) = &verdict {
            verify_witness(f, w)?;
        }
        Ok(SolveOutcome {
            verdict,
            stats: Stats::default(),
        })
    }

    fn run(&self, script: &str) -> Result<String, SolveError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|_| SolveError::BackendMissing(self.program.clone()))?;
        let mut stdin = child.stdin.take().unwrap();
        let script = script.to_string();
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(script.as_bytes());
        });
        let mut stdout = child.stdout.take().unwrap();
        let reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(SolveError::Timeout);
                }
                Ok(None) => thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(SolveError::Backend(e.to_string())),
            }
        };
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        if out.trim().is_empty() && !status.success() {
            return Err(SolveError::Backend(format!("exited with {status}")));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Result<Vec<String>, SolveError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '(' | ')' => {
                out.push(c.to_string());
                chars.next();
            }
            ';' => {
                while chars.next().is_some_and(|c| c != '\n') {}
            }
            '|' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('|') => break,
                        Some(c) => s.push(c),
                        None => return Err(SolveError::Parse("unterminated |symbol|".into())),
                    }
                }
                out.push(s);
            }
            '"' => {
                chars.next();
                let mut s = String::from("\"");
                for c in chars.by_ref() {
                    if c == '"' {
                        break;
                    }
                    s.push(c);
                }
                out.push(s);
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                out.push(s);
            }
        }
    }
    Ok(out)
}

fn parse_all(tokens: &[String]) -> Result<Vec<Sexp>, SolveError> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in tokens {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().unwrap();
                stack
                    .last_mut()
                    .ok_or_else(|| SolveError::Parse("unbalanced `)`".into()))?
                    .push(Sexp::List(done));
            }
            _ => stack.last_mut().unwrap().push(Sexp::Atom(t.clone())),
        }
    }
    if stack.len() != 1 {
        return Err(SolveError::Parse("unbalanced `(`".into()));
    }
    Ok(stack.pop().unwrap())
}

fn value(e: &Sexp) -> Result<Rational, SolveError> {
    let bad = || SolveError::Parse(format!("unsupported model value {e:?}"));
    match e {
        Sexp::Atom(a) => match a.as_str() {
            "true" => Ok(Rational::from_integer(1.into())),
            "false" => Ok(Rational::zero()),
            _ => parse_rational(a).map_err(|_| bad()),
        },
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), x] if op == "-" => Ok(-value(x)?),
            [Sexp::Atom(op), x, y] if op == "/" => {
                let d = value(y)?;
                if d.is_zero() {
                    return Err(bad());
                }
                Ok(value(x)? / d)
            }
            [Sexp::Atom(op), x, y] if op == "-" => Ok(value(x)? - value(y)?),
            [Sexp::Atom(op), rest @ ..] if op == "+" => rest.iter().map(value).sum(),
            [Sexp::Atom(op), rest @ ..] if op == "*" => rest.iter().map(value).product(),
            [Sexp::Atom(op), x] if op == "to_real" || op == "to_int" => value(x),
            _ => Err(bad()),
        },
    }
}

fn collect_defs(e: &Sexp, out: &mut Vec<(String, Sexp)>) {
    if let Sexp::List(items) = e {
        if let [Sexp::Atom(head), Sexp::Atom(name), Sexp::List(params), _sort, body] =
            items.as_slice()
        {
            if head == "define-fun" && params.is_empty() {
                out.push((name.clone(), body.clone()));
                return;
            }
        }
        items.iter().for_each(|i| collect_defs(i, out));
    }
}

fn parse_answer(output: &str, f: &Formula) -> Result<Verdict, SolveError> {
    let exprs = parse_all(&tokenize(output)?)?;
    let first = exprs.first().ok_or_else(|| SolveError::Parse("empty output".into()))?;
    match first {
        Sexp::Atom(a) if a == "unsat" => Ok(Verdict::Unsat(Refutation::external(a))),
        Sexp::Atom(a) if a == "sat" => {
            let mut defs = Vec::new();
            exprs[1..].iter().for_each(|e| collect_defs(e, &mut defs));
            let mut w = Assignment::new();
            for v in f.sorts().keys() {
                let found = defs.iter().find(|(n, _)| n == v.name());
                let val = match found {
                    Some((_, body)) => value(body)?,
                    None => Rational::zero(),
                };
                w.insert(v.clone(), val);
            }
            Ok(Verdict::Sat(Witness(w)))
        }
        Sexp::Atom(a) if a == "unknown" => Err(SolveError::Backend("solver answered unknown".into())),
        other => Err(SolveError::Backend(format!("unexpected answer {other:?}"))),
    }
}
