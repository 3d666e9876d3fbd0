//! Quantifier-free formulae over linear atoms.
//!
//! A [`Formula`] is a Boolean combination of [`Atom`]s together with the sort
//! of every variable it mentions. Boolean-sorted variables are numeric 0/1
//! variables, so `b = 1` is an ordinary linear atom.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{format_rational, int, Rational};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(Arc<str>);

impl Var {
    pub fn new(name: impl AsRef<str>) -> Self {
        Var(Arc::from(name.as_ref()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Var {
    fn from(s: &str) -> Self {
        Var::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sort {
    /// 0/1-valued.
    Bool,
    Int,
    Real,
}

impl Sort {
    pub fn admits(self, value: &Rational) -> bool {
        match self {
            Sort::Real => true,
            Sort::Int => value.is_integer(),
            Sort::Bool => value.is_zero() || value.is_one(),
        }
    }
}

pub type SortMap = BTreeMap<Var, Sort>;
pub type Assignment = BTreeMap<Var, Rational>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("variable `{var}` declared both {first:?} and {second:?}")]
    SortClash { var: Var, first: Sort, second: Sort },
    #[error("variable `{0}` has no declared sort")]
    Undeclared(Var),
    #[error("no value for variable `{0}`")]
    Unassigned(Var),
}

/// `Σ cᵢ·vᵢ + c`, coefficients exact and never zero.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LinExpr {
    terms: BTreeMap<Var, Rational>,
    constant: Rational,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Rational) -> Self {
        LinExpr {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(v: impl Into<Var>) -> Self {
        Self::term(v, int(1))
    }

    pub fn term(v: impl Into<Var>, coeff: Rational) -> Self {
        let mut e = Self::zero();
        e.add_term(v.into(), coeff);
        e
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Var, &Rational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, v: &Var) -> Option<&Rational> {
        self.terms.get(v)
    }

    pub fn constant_term(&self) -> &Rational {
        &self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.terms.keys()
    }

    pub fn add_term(&mut self, v: Var, coeff: Rational) {
        if coeff.is_zero() {
            return;
        }
        let slot = self.terms.entry(v.clone()).or_insert_with(Rational::zero);
        *slot += coeff;
        if slot.is_zero() {
            self.terms.remove(&v);
        }
    }

    pub fn add_constant(&mut self, c: &Rational) {
        self.constant += c;
    }

    pub fn add(mut self, other: &LinExpr) -> LinExpr {
        for (v, c) in &other.terms {
            self.add_term(v.clone(), c.clone());
        }
        self.constant += &other.constant;
        self
    }

    pub fn sub(self, other: &LinExpr) -> LinExpr {
        self.add(&other.scale(&-int(1)))
    }

    pub fn scale(&self, k: &Rational) -> LinExpr {
        if k.is_zero() {
            return LinExpr::zero();
        }
        LinExpr {
            terms: self.terms.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    pub fn eval(&self, env: &Assignment) -> Result<Rational, FormulaError> {
        let mut acc = self.constant.clone();
        for (v, c) in &self.terms {
            let val = env.get(v).ok_or_else(|| FormulaError::Unassigned(v.clone()))?;
            acc += c * val;
        }
        Ok(acc)
    }

    /// Replaces each variable found in `values` by its value.
    pub fn substitute(&self, values: &Assignment) -> LinExpr {
        let mut out = LinExpr::constant(self.constant.clone());
        for (v, c) in &self.terms {
            match values.get(v) {
                Some(val) => out.constant += c * val,
                None => out.add_term(v.clone(), c.clone()),
            }
        }
        out
    }

    pub fn rename(&self, map: &dyn Fn(&Var) -> Var) -> LinExpr {
        let mut out = LinExpr::constant(self.constant.clone());
        for (v, c) in &self.terms {
            out.add_term(map(v), c.clone());
        }
        out
    }
}

impl fmt::Debug for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.terms {
            let neg = c.is_negative();
            let mag = c.abs();
            match (first, neg) {
                (true, true) => write!(f, "-")?,
                (true, false) => {}
                (false, true) => write!(f, " - ")?,
                (false, false) => write!(f, " + ")?,
            }
            if mag.is_one() {
                write!(f, "{v}")?;
            } else {
                write!(f, "{}·{v}", format_rational(&mag))?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", format_rational(&self.constant))?;
        } else if !self.constant.is_zero() {
            let sign = if self.constant.is_negative() { "-" } else { "+" };
            write!(f, " {sign} {}", format_rational(&self.constant.abs()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rel {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Rel {
    pub fn negate(self) -> Rel {
        match self {
            Rel::Eq => Rel::Ne,
            Rel::Ne => Rel::Eq,
            Rel::Lt => Rel::Ge,
            Rel::Le => Rel::Gt,
            Rel::Gt => Rel::Le,
            Rel::Ge => Rel::Lt,
        }
    }

    pub fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            Rel::Eq => lhs == rhs,
            Rel::Ne => lhs != rhs,
            Rel::Lt => lhs < rhs,
            Rel::Le => lhs <= rhs,
            Rel::Gt => lhs > rhs,
            Rel::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Rel::Eq => "=",
            Rel::Ne => "≠",
            Rel::Lt => "<",
            Rel::Le => "≤",
            Rel::Gt => ">",
            Rel::Ge => "≥",
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub lhs: LinExpr,
    pub rel: Rel,
    pub rhs: LinExpr,
}

impl Atom {
    pub fn new(lhs: LinExpr, rel: Rel, rhs: LinExpr) -> Self {
        Atom { lhs, rel, rhs }
    }

    pub fn negate(&self) -> Atom {
        Atom::new(self.lhs.clone(), self.rel.negate(), self.rhs.clone())
    }

    pub fn eval(&self, env: &Assignment) -> Result<bool, FormulaError> {
        Ok(self.rel.holds(&self.lhs.eval(env)?, &self.rhs.eval(env)?))
    }

    /// `lhs − rhs`; the atom reads `difference() rel 0`.
    pub fn difference(&self) -> LinExpr {
        self.lhs.clone().sub(&self.rhs)
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.lhs.vars().chain(self.rhs.vars())
    }

    fn substitute(&self, values: &Assignment) -> Atom {
        Atom::new(
            self.lhs.substitute(values),
            self.rel,
            self.rhs.substitute(values),
        )
    }

    fn ground_value(&self) -> Option<bool> {
        let d = self.difference();
        d.is_constant()
            .then(|| self.rel.holds(d.constant_term(), &Rational::zero()))
    }
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.rel.symbol(), self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Const(bool),
    Atom(Atom),
    Not(Box<Term>),
    And(Vec<Term>),
    Or(Vec<Term>),
}

impl Term {
    pub fn atom(lhs: LinExpr, rel: Rel, rhs: LinExpr) -> Term {
        Term::Atom(Atom::new(lhs, rel, rhs))
    }

    /// Flattening conjunction: nested `And`s are spliced, `true` dropped,
    /// `false` absorbs.
    pub fn and(parts: impl IntoIterator<Item = Term>) -> Term {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Term::Const(true) => {}
                Term::Const(false) => return Term::Const(false),
                Term::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Term::Const(true),
            1 => out.pop().unwrap(),
            _ => Term::And(out),
        }
    }

    pub fn or(parts: impl IntoIterator<Item = Term>) -> Term {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Term::Const(false) => {}
                Term::Const(true) => return Term::Const(true),
                Term::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Term::Const(false),
            1 => out.pop().unwrap(),
            _ => Term::Or(out),
        }
    }

    pub fn not(t: Term) -> Term {
        match t {
            Term::Const(b) => Term::Const(!b),
            Term::Not(inner) => *inner,
            other => Term::Not(Box::new(other)),
        }
    }

    pub fn eval(&self, env: &Assignment) -> Result<bool, FormulaError> {
        Ok(match self {
            Term::Const(b) => *b,
            Term::Atom(a) => a.eval(env)?,
            Term::Not(t) => !t.eval(env)?,
            Term::And(ts) => {
                for t in ts {
                    if !t.eval(env)? {
                        return Ok(false);
                    }
                }
                true
            }
            Term::Or(ts) => {
                for t in ts {
                    if t.eval(env)? {
                        return Ok(true);
                    }
                }
                false
            }
        })
    }

    /// Negation normal form: `Not` only survives nowhere; negated atoms flip
    /// their relation.
    pub fn nnf(&self) -> Term {
        self.nnf_signed(true)
    }

    fn nnf_signed(&self, positive: bool) -> Term {
        match (self, positive) {
            (Term::Const(b), _) => Term::Const(*b == positive),
            (Term::Atom(a), true) => Term::Atom(a.clone()),
            (Term::Atom(a), false) => Term::Atom(a.negate()),
            (Term::Not(t), _) => t.nnf_signed(!positive),
            (Term::And(ts), true) | (Term::Or(ts), false) => {
                Term::and(ts.iter().map(|t| t.nnf_signed(positive)))
            }
            (Term::Or(ts), true) | (Term::And(ts), false) => {
                Term::or(ts.iter().map(|t| t.nnf_signed(positive)))
            }
        }
    }

    /// Substitutes values and folds every atom that becomes ground.
    pub fn substitute(&self, values: &Assignment) -> Term {
        match self {
            Term::Const(b) => Term::Const(*b),
            Term::Atom(a) => {
                let a = a.substitute(values);
                match a.ground_value() {
                    Some(b) => Term::Const(b),
                    None => Term::Atom(a),
                }
            }
            Term::Not(t) => Term::not(t.substitute(values)),
            Term::And(ts) => Term::and(ts.iter().map(|t| t.substitute(values))),
            Term::Or(ts) => Term::or(ts.iter().map(|t| t.substitute(values))),
        }
    }

    pub fn for_each_atom<'a>(&'a self, f: &mut dyn FnMut(&'a Atom)) {
        match self {
            Term::Const(_) => {}
            Term::Atom(a) => f(a),
            Term::Not(t) => t.for_each_atom(f),
            Term::And(ts) | Term::Or(ts) => ts.iter().for_each(|t| t.for_each_atom(f)),
        }
    }

    /// Top-level disjuncts (a non-`Or` term is its own single disjunct).
    pub fn disjuncts(&self) -> &[Term] {
        match self {
            Term::Or(ts) => ts,
            other => std::slice::from_ref(other),
        }
    }

    pub fn conjuncts(&self) -> &[Term] {
        match self {
            Term::And(ts) => ts,
            other => std::slice::from_ref(other),
        }
    }
}

/// A term plus the sort of every variable it may mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    term: Term,
    sorts: SortMap,
}

impl Formula {
    /// Checks that every variable of `term` is declared in `sorts`.
    pub fn new(term: Term, sorts: SortMap) -> Result<Formula, FormulaError> {
        let mut missing = None;
        term.for_each_atom(&mut |a| {
            if missing.is_none() {
                missing = a.vars().find(|v| !sorts.contains_key(*v)).cloned();
            }
        });
        match missing {
            Some(v) => Err(FormulaError::Undeclared(v)),
            None => Ok(Formula { term, sorts }),
        }
    }

    pub fn truth() -> Formula {
        Formula {
            term: Term::Const(true),
            sorts: SortMap::new(),
        }
    }

    pub fn falsity() -> Formula {
        Formula {
            term: Term::Const(false),
            sorts: SortMap::new(),
        }
    }

    pub fn term(&self) -> &Term {
        &self.term
    }

    pub fn sorts(&self) -> &SortMap {
        &self.sorts
    }

    pub fn into_parts(self) -> (Term, SortMap) {
        (self.term, self.sorts)
    }

    pub fn declare(&mut self, var: Var, sort: Sort) -> Result<(), FormulaError> {
        merge_sort(&mut self.sorts, var, sort)
    }

    pub fn and(parts: impl IntoIterator<Item = Formula>) -> Result<Formula, FormulaError> {
        let (terms, sorts) = merge_all(parts)?;
        Ok(Formula {
            term: Term::and(terms),
            sorts,
        })
    }

    pub fn or(parts: impl IntoIterator<Item = Formula>) -> Result<Formula, FormulaError> {
        let (terms, sorts) = merge_all(parts)?;
        Ok(Formula {
            term: Term::or(terms),
            sorts,
        })
    }

    pub fn negate(&self) -> Formula {
        Formula {
            term: Term::not(self.term.clone()),
            sorts: self.sorts.clone(),
        }
    }

    pub fn nnf(&self) -> Formula {
        Formula {
            term: self.term.nnf(),
            sorts: self.sorts.clone(),
        }
    }

    /// Fixes variables to values; substituted variables stay declared so the
    /// signature of the formula does not shrink.
    pub fn substitute(&self, values: &Assignment) -> Formula {
        Formula {
            term: self.term.substitute(values),
            sorts: self.sorts.clone(),
        }
    }

    /// Exact truth value under a total assignment of the mentioned variables.
    pub fn eval(&self, env: &Assignment) -> Result<bool, FormulaError> {
        self.term.eval(env)
    }

    pub fn atom_count(&self) -> usize {
        let mut n = 0;
        self.term.for_each_atom(&mut |_| n += 1);
        n
    }
}

fn merge_sort(sorts: &mut SortMap, var: Var, sort: Sort) -> Result<(), FormulaError> {
    match sorts.get(&var) {
        Some(&existing) if existing != sort => Err(FormulaError::SortClash {
            var,
            first: existing,
            second: sort,
        }),
        Some(_) => Ok(()),
        None => {
            sorts.insert(var, sort);
            Ok(())
        }
    }
}

fn merge_all(
    parts: impl IntoIterator<Item = Formula>,
) -> Result<(Vec<Term>, SortMap), FormulaError> {
    let mut sorts = SortMap::new();
    let mut terms = Vec::new();
    for p in parts {
        for (v, s) in p.sorts {
            merge_sort(&mut sorts, v, s)?;
        }
        terms.push(p.term);
    }
    Ok((terms, sorts))
}
