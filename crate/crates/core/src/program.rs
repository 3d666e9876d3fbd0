//! The core imperative language models are lowered into.
//!
//! Expressions are linear (products need a constant side), guards are
//! Boolean combinations of comparisons, and commands are skip, assignment,
//! sequencing, conditionals, bounded loops and return. A return may not be
//! followed by anything on any path.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Zero;
use thiserror::Error;

use crate::formula::{Assignment, LinExpr, Rel, Sort, Var};
use crate::rational::{format_rational, int, Rational};

/// Cap on the number of commands a program may expand to once its loops are
/// unrolled.
pub const MAX_UNROLLED_COMMANDS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("command after return")]
    PostReturn,
    #[error("return inside a loop body")]
    ReturnInLoop,
    #[error("non-linear product: neither factor of `{0}` is constant")]
    NonLinear(String),
    #[error("unbound variable `{0}`")]
    Unbound(Var),
    #[error("execution finished without reaching return")]
    NoReturn,
    #[error("unrolled program exceeds {MAX_UNROLLED_COMMANDS} commands")]
    UnrollLimit,
    #[error("input `{0}` declared twice")]
    DuplicateInput(Var),
    #[error("loop variable `{0}` is assigned inside its loop")]
    LoopVarAssigned(Var),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(Var),
    Const(Rational),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<Var>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn constant(c: Rational) -> Expr {
        Expr::Const(c)
    }

    pub fn int(n: i64) -> Expr {
        Expr::Const(int(n))
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::Neg(Box::new(e))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    /// `Σ cᵢ·vᵢ + c` with zero coefficients dropped and unit coefficients
    /// written as the bare variable.
    pub fn linear(terms: &[(Var, Rational)], constant: &Rational) -> Expr {
        let mut acc: Option<Expr> = None;
        for (v, c) in terms {
            if c.is_zero() {
                continue;
            }
            let negative = *c < int(0);
            let mag = if negative { -c.clone() } else { c.clone() };
            let term = if mag == int(1) {
                Expr::var(v.clone())
            } else {
                Expr::mul(Expr::Const(mag), Expr::var(v.clone()))
            };
            acc = Some(match (acc, negative) {
                (None, false) => term,
                (None, true) => Expr::neg(term),
                (Some(a), false) => Expr::add(a, term),
                (Some(a), true) => Expr::sub(a, term),
            });
        }
        match acc {
            None => Expr::Const(constant.clone()),
            Some(a) if constant.is_zero() => a,
            Some(a) if *constant < int(0) => Expr::sub(a, Expr::Const(-constant.clone())),
            Some(a) => Expr::add(a, Expr::Const(constant.clone())),
        }
    }

    /// Linear normal form; fails on a product of two non-constants.
    pub fn to_lin(&self) -> Result<LinExpr, ProgramError> {
        Ok(match self {
            Expr::Var(v) => LinExpr::var(v.clone()),
            Expr::Const(c) => LinExpr::constant(c.clone()),
            Expr::Neg(e) => e.to_lin()?.scale(&int(-1)),
            Expr::Add(a, b) => a.to_lin()?.add(&b.to_lin()?),
            Expr::Sub(a, b) => a.to_lin()?.sub(&b.to_lin()?),
            Expr::Mul(a, b) => {
                let (la, lb) = (a.to_lin()?, b.to_lin()?);
                if la.is_constant() {
                    lb.scale(la.constant_term())
                } else if lb.is_constant() {
                    la.scale(lb.constant_term())
                } else {
                    return Err(ProgramError::NonLinear(self.to_string()));
                }
            }
        })
    }

    pub fn eval(&self, env: &Assignment) -> Result<Rational, ProgramError> {
        Ok(match self {
            Expr::Var(v) => env
                .get(v)
                .cloned()
                .ok_or_else(|| ProgramError::Unbound(v.clone()))?,
            Expr::Const(c) => c.clone(),
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
        })
    }

    pub fn rename(&self, f: &mut dyn FnMut(&Var) -> Result<Var, ProgramError>) -> Result<Expr, ProgramError> {
        Ok(match self {
            Expr::Var(v) => Expr::Var(f(v)?),
            Expr::Const(c) => Expr::Const(c.clone()),
            Expr::Neg(e) => Expr::neg(e.rename(f)?),
            Expr::Add(a, b) => Expr::add(a.rename(f)?, b.rename(f)?),
            Expr::Sub(a, b) => Expr::sub(a.rename(f)?, b.rename(f)?),
            Expr::Mul(a, b) => Expr::mul(a.rename(f)?, b.rename(f)?),
        })
    }

    /// Replaces one variable by a constant.
    pub fn bind(&self, var: &Var, value: &Rational) -> Expr {
        match self {
            Expr::Var(v) if v == var => Expr::Const(value.clone()),
            Expr::Var(_) | Expr::Const(_) => self.clone(),
            Expr::Neg(e) => Expr::neg(e.bind(var, value)),
            Expr::Add(a, b) => Expr::add(a.bind(var, value), b.bind(var, value)),
            Expr::Sub(a, b) => Expr::sub(a.bind(var, value), b.bind(var, value)),
            Expr::Mul(a, b) => Expr::mul(a.bind(var, value), b.bind(var, value)),
        }
    }

    fn for_each_var(&self, f: &mut dyn FnMut(&Var)) {
        match self {
            Expr::Var(v) => f(v),
            Expr::Const(_) => {}
            Expr::Neg(e) => e.for_each_var(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Var(_) | Expr::Const(_) => 4,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |e: &Expr, min: u8, f: &mut fmt::Formatter<'_>| {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Const(c) => write!(f, "{}", format_rational(c)),
            Expr::Neg(e) => {
                write!(f, "-")?;
                wrap(e, 3, f)
            }
            Expr::Add(a, b) => {
                wrap(a, 1, f)?;
                write!(f, " + ")?;
                wrap(b, 2, f)
            }
            Expr::Sub(a, b) => {
                wrap(a, 1, f)?;
                write!(f, " - ")?;
                wrap(b, 2, f)
            }
            Expr::Mul(a, b) => {
                wrap(a, 2, f)?;
                write!(f, "*")?;
                wrap(b, 3, f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Guard {
    Cmp(Expr, Rel, Expr),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
    Not(Box<Guard>),
}

impl Guard {
    pub fn cmp(a: Expr, rel: Rel, b: Expr) -> Guard {
        Guard::Cmp(a, rel, b)
    }

    pub fn and(a: Guard, b: Guard) -> Guard {
        Guard::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Guard, b: Guard) -> Guard {
        Guard::Or(Box::new(a), Box::new(b))
    }

    pub fn not(g: Guard) -> Guard {
        Guard::Not(Box::new(g))
    }

    pub fn eval(&self, env: &Assignment) -> Result<bool, ProgramError> {
        Ok(match self {
            Guard::Cmp(a, rel, b) => rel.holds(&a.eval(env)?, &b.eval(env)?),
            Guard::And(a, b) => a.eval(env)? && b.eval(env)?,
            Guard::Or(a, b) => a.eval(env)? || b.eval(env)?,
            Guard::Not(g) => !g.eval(env)?,
        })
    }

    pub fn rename(&self, f: &mut dyn FnMut(&Var) -> Result<Var, ProgramError>) -> Result<Guard, ProgramError> {
        Ok(match self {
            Guard::Cmp(a, rel, b) => Guard::Cmp(a.rename(f)?, *rel, b.rename(f)?),
            Guard::And(a, b) => Guard::and(a.rename(f)?, b.rename(f)?),
            Guard::Or(a, b) => Guard::or(a.rename(f)?, b.rename(f)?),
            Guard::Not(g) => Guard::not(g.rename(f)?),
        })
    }

    pub fn bind(&self, var: &Var, value: &Rational) -> Guard {
        match self {
            Guard::Cmp(a, rel, b) => Guard::Cmp(a.bind(var, value), *rel, b.bind(var, value)),
            Guard::And(a, b) => Guard::and(a.bind(var, value), b.bind(var, value)),
            Guard::Or(a, b) => Guard::or(a.bind(var, value), b.bind(var, value)),
            Guard::Not(g) => Guard::not(g.bind(var, value)),
        }
    }

    /// Truth value when the guard mentions no variables.
    pub fn ground_value(&self) -> Option<bool> {
        self.eval(&Assignment::new()).ok()
    }

    fn for_each_expr(&self, f: &mut dyn FnMut(&Expr)) {
        match self {
            Guard::Cmp(a, _, b) => {
                f(a);
                f(b);
            }
            Guard::And(a, b) | Guard::Or(a, b) => {
                a.for_each_expr(f);
                b.for_each_expr(f);
            }
            Guard::Not(g) => g.for_each_expr(f),
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Cmp(a, rel, b) => {
                let op = match rel {
                    Rel::Eq => "==",
                    Rel::Ne => "!=",
                    Rel::Lt => "<",
                    Rel::Le => "<=",
                    Rel::Gt => ">",
                    Rel::Ge => ">=",
                };
                write!(f, "{a} {op} {b}")
            }
            Guard::And(a, b) => write!(f, "({a} and {b})"),
            Guard::Or(a, b) => write!(f, "({a} or {b})"),
            Guard::Not(g) => write!(f, "not ({g})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    Skip,
    Assign(Var, Expr),
    Seq(Vec<Command>),
    If(Guard, Box<Command>, Box<Command>),
    /// `for var in 1..=count do body`; `var` is read-only inside the body.
    For {
        var: Var,
        count: u32,
        body: Box<Command>,
    },
    Return(Expr),
}

impl Command {
    pub fn assign(v: impl Into<Var>, e: Expr) -> Command {
        Command::Assign(v.into(), e)
    }

    pub fn seq(cs: impl IntoIterator<Item = Command>) -> Command {
        Command::Seq(cs.into_iter().collect())
    }

    pub fn ite(g: Guard, then: Command, otherwise: Command) -> Command {
        Command::If(g, Box::new(then), Box::new(otherwise))
    }

    pub fn ret(e: Expr) -> Command {
        Command::Return(e)
    }

    pub fn contains_return(&self) -> bool {
        match self {
            Command::Return(_) => true,
            Command::Skip | Command::Assign(..) => false,
            Command::Seq(cs) => cs.iter().any(Command::contains_return),
            Command::If(_, a, b) => a.contains_return() || b.contains_return(),
            Command::For { body, .. } => body.contains_return(),
        }
    }

    /// Every execution path ends in a return.
    pub fn always_returns(&self) -> bool {
        match self {
            Command::Return(_) => true,
            Command::Skip | Command::Assign(..) | Command::For { .. } => false,
            Command::Seq(cs) => cs.last().is_some_and(Command::always_returns),
            Command::If(_, a, b) => a.always_returns() && b.always_returns(),
        }
    }

    fn check_well_formed(&self) -> Result<(), ProgramError> {
        match self {
            Command::Skip | Command::Assign(..) | Command::Return(_) => Ok(()),
            Command::Seq(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    c.check_well_formed()?;
                    if i + 1 < cs.len() && c.contains_return() {
                        return Err(ProgramError::PostReturn);
                    }
                }
                Ok(())
            }
            Command::If(_, a, b) => {
                a.check_well_formed()?;
                b.check_well_formed()
            }
            Command::For { var, body, .. } => {
                if body.contains_return() {
                    return Err(ProgramError::ReturnInLoop);
                }
                if body.assigns(var) {
                    return Err(ProgramError::LoopVarAssigned(var.clone()));
                }
                body.check_well_formed()
            }
        }
    }

    fn assigns(&self, var: &Var) -> bool {
        match self {
            Command::Assign(v, _) => v == var,
            Command::Skip | Command::Return(_) => false,
            Command::Seq(cs) => cs.iter().any(|c| c.assigns(var)),
            Command::If(_, a, b) => a.assigns(var) || b.assigns(var),
            Command::For { body, .. } => body.assigns(var),
        }
    }

    fn for_each_expr(&self, f: &mut dyn FnMut(&Expr)) {
        match self {
            Command::Skip => {}
            Command::Assign(_, e) | Command::Return(e) => f(e),
            Command::Seq(cs) => cs.iter().for_each(|c| c.for_each_expr(f)),
            Command::If(g, a, b) => {
                g.for_each_expr(f);
                a.for_each_expr(f);
                b.for_each_expr(f);
            }
            Command::For { body, .. } => body.for_each_expr(f),
        }
    }

    /// Fully unrolls loops, folding guards made ground by the loop index.
    /// Fails once the result would exceed [`MAX_UNROLLED_COMMANDS`].
    pub fn unroll(&self) -> Result<Command, ProgramError> {
        let mut budget = MAX_UNROLLED_COMMANDS;
        self.unroll_inner(&mut budget)
    }

    fn unroll_inner(&self, budget: &mut usize) -> Result<Command, ProgramError> {
        *budget = budget.checked_sub(1).ok_or(ProgramError::UnrollLimit)?;
        Ok(match self {
            Command::Skip | Command::Assign(..) | Command::Return(_) => self.clone(),
            Command::Seq(cs) => Command::Seq(
                cs.iter()
                    .map(|c| c.unroll_inner(budget))
                    .collect::<Result<_, _>>()?,
            ),
            Command::If(g, a, b) => match g.ground_value() {
                Some(true) => a.unroll_inner(budget)?,
                Some(false) => b.unroll_inner(budget)?,
                None => Command::ite(g.clone(), a.unroll_inner(budget)?, b.unroll_inner(budget)?),
            },
            Command::For { var, count, body } => Command::Seq(
                (1..=*count)
                    .map(|i| body.bind(var, &int(i as i64)).unroll_inner(budget))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    fn bind(&self, var: &Var, value: &Rational) -> Command {
        match self {
            Command::Skip => Command::Skip,
            Command::Assign(v, e) => Command::Assign(v.clone(), e.bind(var, value)),
            Command::Return(e) => Command::Return(e.bind(var, value)),
            Command::Seq(cs) => Command::Seq(cs.iter().map(|c| c.bind(var, value)).collect()),
            Command::If(g, a, b) => {
                Command::ite(g.bind(var, value), a.bind(var, value), b.bind(var, value))
            }
            Command::For {
                var: inner,
                count,
                body,
            } if inner != var => Command::For {
                var: inner.clone(),
                count: *count,
                body: Box::new(body.bind(var, value)),
            },
            Command::For { .. } => self.clone(),
        }
    }

    fn exec(&self, env: &mut Assignment) -> Result<Option<Rational>, ProgramError> {
        match self {
            Command::Skip => Ok(None),
            Command::Assign(v, e) => {
                let val = e.eval(env)?;
                env.insert(v.clone(), val);
                Ok(None)
            }
            Command::Seq(cs) => {
                for c in cs {
                    if let Some(r) = c.exec(env)? {
                        return Ok(Some(r));
                    }
                }
                Ok(None)
            }
            Command::If(g, a, b) => {
                if g.eval(env)? {
                    a.exec(env)
                } else {
                    b.exec(env)
                }
            }
            Command::For { var, count, body } => {
                let saved = env.remove(var);
                for i in 1..=*count {
                    env.insert(var.clone(), int(i as i64));
                    if let Some(r) = body.exec(env)? {
                        return Ok(Some(r));
                    }
                }
                env.remove(var);
                if let Some(s) = saved {
                    env.insert(var.clone(), s);
                }
                Ok(None)
            }
            Command::Return(e) => Ok(Some(e.eval(env)?)),
        }
    }

    fn pretty(&self, indent: usize, out: &mut String) {
        let pad = "    ".repeat(indent);
        match self {
            Command::Skip => out.push_str(&format!("{pad}pass\n")),
            Command::Assign(v, e) => out.push_str(&format!("{pad}{v} = {e}\n")),
            Command::Return(e) => out.push_str(&format!("{pad}return {e}\n")),
            Command::Seq(cs) if cs.is_empty() => out.push_str(&format!("{pad}pass\n")),
            Command::Seq(cs) => cs.iter().for_each(|c| c.pretty(indent, out)),
            Command::If(g, a, b) => {
                out.push_str(&format!("{pad}if {g}:\n"));
                a.pretty(indent + 1, out);
                out.push_str(&format!("{pad}else:\n"));
                b.pretty(indent + 1, out);
            }
            Command::For { var, count, body } => {
                out.push_str(&format!("{pad}for {var} in range(1, {}):\n", count + 1));
                body.pretty(indent + 1, out);
            }
        }
    }
}

/// A command together with its typed inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    inputs: Vec<(Var, Sort)>,
    body: Command,
}

impl Program {
    /// Validates well-formedness and linearity.
    pub fn new(inputs: Vec<(Var, Sort)>, body: Command) -> Result<Program, ProgramError> {
        let mut seen = BTreeMap::new();
        for (v, s) in &inputs {
            if seen.insert(v.clone(), *s).is_some() {
                return Err(ProgramError::DuplicateInput(v.clone()));
            }
        }
        body.check_well_formed()?;
        let mut err = None;
        body.for_each_expr(&mut |e| {
            if err.is_none() {
                err = e.to_lin().err();
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Program { inputs, body })
    }

    pub fn inputs(&self) -> &[(Var, Sort)] {
        &self.inputs
    }

    pub fn body(&self) -> &Command {
        &self.body
    }

    pub fn input_sorts(&self) -> BTreeMap<Var, Sort> {
        self.inputs.iter().cloned().collect()
    }

    /// Big-step evaluation. `input` must bind every input variable; extra
    /// bindings are ignored.
    pub fn evaluate(&self, input: &Assignment) -> Result<Rational, ProgramError> {
        let mut env = Assignment::new();
        for (v, _) in &self.inputs {
            let val = input
                .get(v)
                .ok_or_else(|| ProgramError::Unbound(v.clone()))?;
            env.insert(v.clone(), val.clone());
        }
        self.body.exec(&mut env)?.ok_or(ProgramError::NoReturn)
    }

    /// Variables read anywhere in the program.
    pub fn read_vars(&self) -> Vec<Var> {
        let mut out = std::collections::BTreeSet::new();
        self.body.for_each_expr(&mut |e| e.for_each_var(&mut |v| {
            out.insert(v.clone());
        }));
        out.into_iter().collect()
    }

    /// Python-like listing.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        self.body.pretty(0, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ge(a: Expr, b: Expr) -> Guard {
        Guard::cmp(a, Rel::Ge, b)
    }

    #[test]
    fn post_return_is_rejected() {
        let body = Command::seq([Command::ret(Expr::int(1)), Command::assign("z", Expr::int(0))]);
        assert_eq!(Program::new(vec![], body), Err(ProgramError::PostReturn));
        let body = Command::seq([
            Command::ite(
                ge(Expr::var("x"), Expr::int(0)),
                Command::ret(Expr::int(1)),
                Command::Skip,
            ),
            Command::ret(Expr::int(0)),
        ]);
        assert_eq!(
            Program::new(vec![(Var::new("x"), Sort::Real)], body),
            Err(ProgramError::PostReturn)
        );
    }

    #[test]
    fn products_need_a_constant() {
        let body = Command::ret(Expr::mul(Expr::var("x"), Expr::var("x")));
        assert!(matches!(
            Program::new(vec![(Var::new("x"), Sort::Real)], body),
            Err(ProgramError::NonLinear(_))
        ));
        let body = Command::ret(Expr::mul(Expr::add(Expr::int(1), Expr::int(2)), Expr::var("x")));
        assert!(Program::new(vec![(Var::new("x"), Sort::Real)], body).is_ok());
    }

    #[test]
    fn loops_run_their_bound() {
        let body = Command::seq([
            Command::assign("s", Expr::int(0)),
            Command::For {
                var: Var::new("i"),
                count: 4,
                body: Box::new(Command::assign("s", Expr::add(Expr::var("s"), Expr::var("i")))),
            },
            Command::ret(Expr::var("s")),
        ]);
        let p = Program::new(vec![], body).unwrap();
        assert_eq!(p.evaluate(&Assignment::new()).unwrap(), int(10));
        let unrolled = Program::new(vec![], p.body().unroll().unwrap()).unwrap();
        assert_eq!(unrolled.evaluate(&Assignment::new()).unwrap(), int(10));
    }

    #[test]
    fn unroll_cap() {
        let body = Command::For {
            var: Var::new("i"),
            count: 20_000,
            body: Box::new(Command::Skip),
        };
        assert_eq!(body.unroll(), Err(ProgramError::UnrollLimit));
    }

    #[test]
    fn missing_return_and_unbound_input() {
        let p = Program::new(vec![(Var::new("x"), Sort::Real)], Command::Skip).unwrap();
        let mut env = Assignment::new();
        assert_eq!(p.evaluate(&env), Err(ProgramError::Unbound(Var::new("x"))));
        env.insert(Var::new("x"), int(0));
        assert_eq!(p.evaluate(&env), Err(ProgramError::NoReturn));
    }

    #[test]
    fn linear_builder_drops_zero_terms() {
        let e = Expr::linear(
            &[(Var::new("a"), int(1)), (Var::new("b"), int(0)), (Var::new("c"), int(-2))],
            &int(0),
        );
        assert_eq!(e.to_string(), "a - 2*c");
    }
}
