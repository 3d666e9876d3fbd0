//! Heterogeneous distances between raw instances and their threshold
//! formulae.
//!
//! `d(x, x̂) = α·‖δ‖₀/J + β·‖δ‖₁/J + γ·‖δ‖∞` with `α + β + γ = 1`, where
//! `δ_j ∈ [0, 1]` is the per-feature change: `|x_j − x̂_j| / R_j` for
//! numeric and ordinal features, a change indicator for binary and
//! categorical ones.

use std::fmt;

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::compile::{characteristic_formula_for, to_single_assignment, CompileError};
use crate::formula::{Formula, FormulaError, LinExpr, Rel, Sort, SortMap, Term, Var};
use crate::program::{Command, Expr, Guard, Program};
use crate::rational::{format_rational, int, Rational};
use crate::schema::{coordinate, Encoding, FeatureKind, FeatureSchema, FeatureSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DistanceError {
    #[error("distance weights must be non-negative and not all zero")]
    BadWeights,
    #[error("distance threshold {0} is outside [0, 1]")]
    ThresholdRange(String),
    #[error("unknown norm `{0}` (expected l0, l1, linf or combined)")]
    UnknownNorm(String),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormPreset {
    L0,
    L1,
    Linf,
    Combined,
}

impl std::str::FromStr for NormPreset {
    type Err = DistanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l0" => Ok(NormPreset::L0),
            "l1" => Ok(NormPreset::L1),
            "linf" | "l-inf" => Ok(NormPreset::Linf),
            "combined" => Ok(NormPreset::Combined),
            _ => Err(DistanceError::UnknownNorm(s.to_string())),
        }
    }
}

/// Normalized weights: `alpha + beta + gamma = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DistanceConfig {
    alpha: Rational,
    beta: Rational,
    gamma: Rational,
}

impl DistanceConfig {
    /// Scales the weights to sum to one.
    pub fn new(alpha: Rational, beta: Rational, gamma: Rational) -> Result<Self, DistanceError> {
        if alpha.is_negative() || beta.is_negative() || gamma.is_negative() {
            return Err(DistanceError::BadWeights);
        }
        let total = &alpha + &beta + &gamma;
        if total.is_zero() {
            return Err(DistanceError::BadWeights);
        }
        Ok(DistanceConfig {
            alpha: alpha / &total,
            beta: beta / &total,
            gamma: gamma / &total,
        })
    }

    pub fn preset(p: NormPreset) -> Self {
        let (a, b, g) = match p {
            NormPreset::L0 => (1, 0, 0),
            NormPreset::L1 => (0, 1, 0),
            NormPreset::Linf => (0, 0, 1),
            NormPreset::Combined => (1, 1, 1),
        };
        Self::new(int(a), int(b), int(g)).unwrap()
    }

    pub fn l0() -> Self {
        Self::preset(NormPreset::L0)
    }

    pub fn l1() -> Self {
        Self::preset(NormPreset::L1)
    }

    pub fn linf() -> Self {
        Self::preset(NormPreset::Linf)
    }

    pub fn alpha(&self) -> &Rational {
        &self.alpha
    }

    pub fn beta(&self) -> &Rational {
        &self.beta
    }

    pub fn gamma(&self) -> &Rational {
        &self.gamma
    }

    /// `l0`, `l1`, `linf`, `combined` when the weights match a preset.
    pub fn name(&self) -> String {
        for (p, n) in [
            (NormPreset::L0, "l0"),
            (NormPreset::L1, "l1"),
            (NormPreset::Linf, "linf"),
            (NormPreset::Combined, "combined"),
        ] {
            if *self == Self::preset(p) {
                return n.to_string();
            }
        }
        self.to_string()
    }
}

impl fmt::Display for DistanceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            format_rational(&self.alpha),
            format_rational(&self.beta),
            format_rational(&self.gamma)
        )
    }
}

/// `δ_j` for one feature.
pub fn feature_distance(spec: &FeatureSpec, x: &Rational, x_hat: &Rational) -> Rational {
    if spec.is_constant() {
        return Rational::zero();
    }
    match spec.kind {
        FeatureKind::Binary | FeatureKind::Categorical { .. } => int(i64::from(x != x_hat)),
        _ => (x - x_hat).abs() / spec.range(),
    }
}

pub fn distance_vector(schema: &FeatureSchema, x: &[Rational], x_hat: &[Rational]) -> Vec<Rational> {
    schema
        .features()
        .iter()
        .zip(x.iter().zip(x_hat))
        .map(|(f, (a, b))| feature_distance(f, a, b))
        .collect()
}

pub fn distance_value(
    cfg: &DistanceConfig,
    schema: &FeatureSchema,
    x: &[Rational],
    x_hat: &[Rational],
) -> Rational {
    let delta = distance_vector(schema, x, x_hat);
    let j = int(schema.len() as i64);
    let l0 = int(delta.iter().filter(|d| !d.is_zero()).count() as i64);
    let l1: Rational = delta.iter().fold(Rational::zero(), |s, d| s + d);
    let linf = delta.iter().max().cloned().unwrap_or_else(Rational::zero);
    &cfg.alpha * l0 / &j + &cfg.beta * l1 / &j + &cfg.gamma * linf
}

/// How `δ_j` is expressed over the encoded variables.
enum Change {
    /// δ_j is this linear expression on every valid encoding.
    Exact(LinExpr),
    /// δ_j = |t| with `t` linear (numeric and ordinal features).
    Numeric { t: LinExpr, raw: LinExpr },
    /// δ_j is the indicator of `raw ≠ x̂_j`.
    Indicator { raw: LinExpr },
}

fn change(spec: &FeatureSpec, x_hat: &Rational) -> Option<Change> {
    if spec.is_constant() {
        return None;
    }
    let raw = spec.raw_expr();
    Some(match (&spec.kind, spec.encoding) {
        (FeatureKind::Binary, _) => {
            let v = LinExpr::var(Var::new(&spec.name));
            if x_hat.is_zero() {
                Change::Exact(v)
            } else {
                Change::Exact(LinExpr::constant(int(1)).sub(&v))
            }
        }
        (FeatureKind::Categorical { .. }, Encoding::OneHot) => {
            let k: usize = x_hat.to_integer().try_into().unwrap_or(0);
            Change::Exact(LinExpr::constant(int(1)).sub(&LinExpr::var(coordinate(&spec.name, k))))
        }
        (FeatureKind::Categorical { .. }, _) => Change::Indicator { raw },
        _ => {
            let t = raw
                .clone()
                .sub(&LinExpr::constant(x_hat.clone()))
                .scale(&(int(1) / spec.range()));
            Change::Numeric { t, raw }
        }
    })
}

fn aux(kind: &str, feature: &str) -> Var {
    Var::new(format!("dist#{kind}@{feature}"))
}

fn max_var() -> Var {
    Var::new("dist#max")
}

/// `φ_d(x, δ)`: satisfiable for a given `x` iff `d(x, x̂) ≤ threshold`.
///
/// Absolute values and the maximum are bounded from above by auxiliary
/// reals, and changes counted by the 0-norm by 0/1 indicators with the
/// clause `(x_j = x̂_j) ∨ (b_j = 1)`. Each auxiliary only ever needs to be
/// at least its true value, so the encoding is exact for an upper bound.
pub fn distance_formula(
    cfg: &DistanceConfig,
    schema: &FeatureSchema,
    x_hat: &[Rational],
    threshold: &Rational,
) -> Result<Formula, DistanceError> {
    check_threshold(threshold)?;
    distance_formula_with(cfg, schema, x_hat, LinExpr::constant(threshold.clone()), SortMap::new())
}

/// Like [`distance_formula`] with the threshold a real variable.
pub fn distance_formula_var(
    cfg: &DistanceConfig,
    schema: &FeatureSchema,
    x_hat: &[Rational],
    threshold: &Var,
) -> Result<Formula, DistanceError> {
    let mut sorts = SortMap::new();
    sorts.insert(threshold.clone(), Sort::Real);
    distance_formula_with(cfg, schema, x_hat, LinExpr::var(threshold.clone()), sorts)
}

fn check_threshold(threshold: &Rational) -> Result<(), DistanceError> {
    if threshold.is_negative() || *threshold > int(1) {
        return Err(DistanceError::ThresholdRange(format_rational(threshold)));
    }
    Ok(())
}

fn distance_formula_with(
    cfg: &DistanceConfig,
    schema: &FeatureSchema,
    x_hat: &[Rational],
    threshold: LinExpr,
    mut sorts: SortMap,
) -> Result<Formula, DistanceError> {
    let j = int(schema.len() as i64);
    let want_l0 = !cfg.alpha.is_zero();
    let want_mag = !cfg.beta.is_zero() || !cfg.gamma.is_zero();
    let mut parts = Vec::new();
    let mut count = LinExpr::zero();
    let mut sum = LinExpr::zero();
    let mut maxima = Vec::new();
    for (v, s) in schema.encoded_vars() {
        sorts.insert(v, s);
    }
    let eq = |a: LinExpr, b: LinExpr| Term::atom(a, Rel::Eq, b);
    let ge = |a: LinExpr, b: LinExpr| Term::atom(a, Rel::Ge, b);
    for (spec, xh) in schema.features().iter().zip(x_hat) {
        let Some(ch) = change(spec, xh) else { continue };
        match ch {
            Change::Exact(e) => {
                count = count.add(&e);
                sum = sum.add(&e);
                maxima.push(e);
            }
            Change::Indicator { raw } => {
                let b = aux("b", &spec.name);
                sorts.insert(b.clone(), Sort::Bool);
                parts.push(Term::or([
                    eq(raw, LinExpr::constant(xh.clone())),
                    eq(LinExpr::var(b.clone()), LinExpr::constant(int(1))),
                ]));
                let e = LinExpr::var(b);
                count = count.add(&e);
                sum = sum.add(&e);
                maxima.push(e);
            }
            Change::Numeric { t, raw } => {
                if want_l0 {
                    let b = aux("b", &spec.name);
                    sorts.insert(b.clone(), Sort::Bool);
                    parts.push(Term::or([
                        eq(raw, LinExpr::constant(xh.clone())),
                        eq(LinExpr::var(b.clone()), LinExpr::constant(int(1))),
                    ]));
                    count = count.add(&LinExpr::var(b));
                }
                if want_mag {
                    let a = aux("a", &spec.name);
                    sorts.insert(a.clone(), Sort::Real);
                    let av = LinExpr::var(a);
                    parts.push(ge(av.clone(), t.clone()));
                    parts.push(ge(av.clone(), t.scale(&int(-1))));
                    sum = sum.add(&av);
                    maxima.push(av);
                }
            }
        }
    }
    let mut total = count.scale(&(&cfg.alpha / &j)).add(&sum.scale(&(&cfg.beta / &j)));
    if !cfg.gamma.is_zero() {
        let m = max_var();
        sorts.insert(m.clone(), Sort::Real);
        let mv = LinExpr::var(m);
        parts.push(ge(mv.clone(), LinExpr::zero()));
        for e in maxima {
            parts.push(ge(mv.clone(), e));
        }
        total = total.add(&mv.scale(&cfg.gamma));
    }
    parts.push(Term::atom(total, Rel::Le, threshold));
    Ok(Formula::new(Term::and(parts), sorts)?)
}

/// Output variable of [`distance_program`].
pub const DISTANCE_OUTPUT: &str = "dist#";

/// The distance to `x̂` as a program over the encoded variables, returning
/// `d(x, x̂)`.
pub fn distance_program(cfg: &DistanceConfig, schema: &FeatureSchema, x_hat: &[Rational]) -> Program {
    let j = int(schema.len() as i64);
    let mut cmds = Vec::new();
    let mut indicators = Vec::new();
    let mut magnitudes = Vec::new();
    let lin_expr = |e: &LinExpr| {
        let terms: Vec<(Var, Rational)> = e.terms().map(|(v, c)| (v.clone(), c.clone())).collect();
        Expr::linear(&terms, e.constant_term())
    };
    for (spec, xh) in schema.features().iter().zip(x_hat) {
        let Some(ch) = change(spec, xh) else { continue };
        let name = &spec.name;
        match ch {
            Change::Exact(e) => {
                let v = aux("delta", name);
                cmds.push(Command::assign(v.clone(), lin_expr(&e)));
                indicators.push(v.clone());
                magnitudes.push(v);
            }
            Change::Indicator { raw } => {
                let v = aux("delta", name);
                cmds.push(Command::ite(
                    Guard::cmp(lin_expr(&raw), Rel::Eq, Expr::constant(xh.clone())),
                    Command::assign(v.clone(), Expr::int(0)),
                    Command::assign(v.clone(), Expr::int(1)),
                ));
                indicators.push(v.clone());
                magnitudes.push(v);
            }
            Change::Numeric { t, .. } => {
                let tv = aux("t", name);
                let av = aux("a", name);
                let bv = aux("b", name);
                cmds.push(Command::assign(tv.clone(), lin_expr(&t)));
                cmds.push(Command::ite(
                    Guard::cmp(Expr::var(tv.clone()), Rel::Ge, Expr::int(0)),
                    Command::assign(av.clone(), Expr::var(tv.clone())),
                    Command::assign(av.clone(), Expr::neg(Expr::var(tv.clone()))),
                ));
                if !cfg.alpha.is_zero() {
                    cmds.push(Command::ite(
                        Guard::cmp(Expr::var(tv), Rel::Eq, Expr::int(0)),
                        Command::assign(bv.clone(), Expr::int(0)),
                        Command::assign(bv.clone(), Expr::int(1)),
                    ));
                    indicators.push(bv);
                }
                magnitudes.push(av);
            }
        }
    }
    let m = max_var();
    if !cfg.gamma.is_zero() {
        cmds.push(Command::assign(m.clone(), Expr::int(0)));
        for a in &magnitudes {
            cmds.push(Command::ite(
                Guard::cmp(Expr::var(a.clone()), Rel::Gt, Expr::var(m.clone())),
                Command::assign(m.clone(), Expr::var(a.clone())),
                Command::Skip,
            ));
        }
    }
    let mut terms: Vec<(Var, Rational)> = Vec::new();
    if !cfg.alpha.is_zero() {
        terms.extend(indicators.iter().map(|v| (v.clone(), &cfg.alpha / &j)));
    }
    if !cfg.beta.is_zero() {
        terms.extend(magnitudes.iter().map(|v| (v.clone(), &cfg.beta / &j)));
    }
    if !cfg.gamma.is_zero() {
        terms.push((m, cfg.gamma.clone()));
    }
    // The same auxiliary may appear in both sums; merge its coefficients.
    let mut merged = LinExpr::zero();
    for (v, c) in terms {
        merged.add_term(v, c);
    }
    cmds.push(Command::ret(lin_expr(&merged)));
    Program::new(schema.encoded_vars(), Command::Seq(cmds))
        .expect("distance programs are well formed and linear")
}

/// `φ_d` obtained by compiling [`distance_program`]: its characteristic
/// formula conjoined with `dist# ≤ threshold`.
pub fn compiled_distance_formula(
    cfg: &DistanceConfig,
    schema: &FeatureSchema,
    x_hat: &[Rational],
    threshold: &Rational,
) -> Result<Formula, DistanceError> {
    check_threshold(threshold)?;
    let out = Var::new(DISTANCE_OUTPUT);
    let sa = to_single_assignment(&distance_program(cfg, schema, x_hat))?;
    let phi = characteristic_formula_for(&sa, &out, Sort::Real)?;
    let bound = Formula::new(
        Term::atom(LinExpr::var(out.clone()), Rel::Le, LinExpr::constant(threshold.clone())),
        [(out, Sort::Real)].into_iter().collect(),
    )?;
    Ok(Formula::and([phi, bound])?)
}

/// Largest attainable distance on a schema: 1 unless some feature is
/// constant.
pub fn max_distance(cfg: &DistanceConfig, schema: &FeatureSchema) -> Rational {
    let j = int(schema.len() as i64);
    let movable = int(schema.features().iter().filter(|f| !f.is_constant()).count() as i64);
    let any = if movable.is_zero() { int(0) } else { int(1) };
    (&cfg.alpha + &cfg.beta) * movable / j + &cfg.gamma * any
}
