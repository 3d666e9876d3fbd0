//! The satisfiability oracle.
//!
//! [`check_sat`] decides a [`Formula`] with lazy case splitting over its
//! disjunctions ([`dpll`]) and an exact linear-arithmetic check per branch:
//! an incremental simplex by default, or Fourier-Motzkin elimination
//! ([`Theory::FourierMotzkin`]). Integral variables are handled by
//! branch-and-bound. [`smtlib`] and [`external`] hand the same question to an
//! SMT solver process instead.

pub mod dpll;
pub mod external;
mod fm;
pub mod linear;
pub mod proof;
mod simplex;
pub mod smtlib;

use std::collections::BTreeSet;
use std::ops::Deref;
use std::time::Instant;

use num_traits::Zero;
use thiserror::Error;

use crate::formula::{Assignment, Formula, FormulaError};
use crate::rational::Rational;

pub use external::ExternalBackend;
pub use proof::{ProofNode, Refutation, ReplayError};
pub use smtlib::emit_smtlib;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Theory {
    #[default]
    Simplex,
    FourierMotzkin,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub theory: Theory,
    /// Disjunction and integer branches explored before giving up.
    pub max_branches: u64,
    pub max_pivots: u64,
    /// Rows generated by Fourier-Motzkin, summed over all calls.
    pub max_fm_rows: u64,
    /// Nested integer branches on one path.
    pub max_cut_depth: u32,
    pub deadline: Option<Instant>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            theory: Theory::Simplex,
            max_branches: 2_000_000,
            max_pivots: 50_000_000,
            max_fm_rows: 5_000_000,
            max_cut_depth: 64,
            deadline: None,
        }
    }
}

impl SolverConfig {
    pub fn fourier_motzkin() -> Self {
        SolverConfig {
            theory: Theory::FourierMotzkin,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("solver budget exceeded: {0}")]
    Budget(&'static str),
    #[error("solver time limit reached")]
    Timeout,
    #[error("external solver `{0}` could not be started")]
    BackendMissing(String),
    #[error("external solver failed: {0}")]
    Backend(String),
    #[error("cannot parse external solver output: {0}")]
    Parse(String),
    #[error("witness fails verification: {0}")]
    Unsound(String),
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

impl SolveError {
    /// Resource exhaustion, as opposed to a malformed query or broken
    /// backend.
    pub fn is_budget(&self) -> bool {
        matches!(self, SolveError::Budget(_) | SolveError::Timeout)
    }
}

/// A total assignment of the formula's declared variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness(pub Assignment);

impl Deref for Witness {
    type Target = Assignment;
    fn deref(&self) -> &Assignment {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Sat(Witness),
    Unsat(Refutation),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub branches: u64,
    pub cuts: u64,
    pub conflicts: u64,
    pub pivots: u64,
    pub fm_eliminations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveOutcome {
    pub verdict: Verdict,
    pub stats: Stats,
}

impl SolveOutcome {
    pub fn is_sat(&self) -> bool {
        matches!(self.verdict, Verdict::Sat(_))
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.verdict {
            Verdict::Sat(w) => Some(w),
            Verdict::Unsat(_) => None,
        }
    }
}

/// Farkas multipliers over constraint ids, and the decision levels whose
/// constraints they use.
#[derive(Debug, Clone, Default)]
pub(crate) struct Conflict {
    pub farkas: Vec<(usize, Rational)>,
    pub levels: BTreeSet<u32>,
}

impl Conflict {
    pub fn finish(mut self) -> Self {
        self.farkas.sort_by_key(|(i, _)| *i);
        let mut merged: Vec<(usize, Rational)> = Vec::with_capacity(self.farkas.len());
        for (i, q) in self.farkas {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += q,
                _ => merged.push((i, q)),
            }
        }
        merged.retain(|(_, q)| !q.is_zero());
        self.farkas = merged;
        self
    }
}

pub fn check_sat(f: &Formula) -> Result<SolveOutcome, SolveError> {
    check_sat_with(f, &SolverConfig::default())
}

pub fn check_sat_with(f: &Formula, cfg: &SolverConfig) -> Result<SolveOutcome, SolveError> {
    dpll::solve(f, cfg)
}

/// Which oracle answers satisfiability queries.
#[derive(Debug, Clone)]
pub enum Backend {
    Internal(SolverConfig),
    External(ExternalBackend),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Internal(SolverConfig::default())
    }
}

impl Backend {
    pub fn solve(&self, f: &Formula) -> Result<SolveOutcome, SolveError> {
        match self {
            Backend::Internal(cfg) => check_sat_with(f, cfg),
            Backend::External(ext) => ext.solve(f),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Backend::Internal(cfg) => match cfg.theory {
                Theory::Simplex => "internal".into(),
                Theory::FourierMotzkin => "internal-fm".into(),
            },
            Backend::External(ext) => ext.describe(),
        }
    }
}

/// Exact re-check of a witness against the formula and its sorts.
pub fn verify_witness(f: &Formula, w: &Assignment) -> Result<(), SolveError> {
    for (v, s) in f.sorts() {
        let value = w
            .get(v)
            .ok_or_else(|| SolveError::Unsound(format!("no value for `{v}`")))?;
        if !s.admits(value) {
            return Err(SolveError::Unsound(format!("`{v}` = {value} is not {s:?}")));
        }
    }
    if !f.eval(w)? {
        return Err(SolveError::Unsound("formula evaluates to false".into()));
    }
    Ok(())
}
