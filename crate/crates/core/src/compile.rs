//! From programs to formulae: weak single-assignment form, path formulae,
//! characteristic formulae and counterfactual formulae.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::formula::{Atom, Formula, FormulaError, LinExpr, Rel, Sort, SortMap, Term, Var};
use crate::program::{Command, Expr, Guard, Program, ProgramError};
use crate::rational::{int, Rational};

/// The distinguished output variable of a characteristic formula.
pub const OUTPUT: &str = "y#";

pub const DEFAULT_PATH_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("variable `{0}` is used before it is defined")]
    UseBeforeDef(Var),
    #[error("some execution path ends without a return")]
    MissingReturn,
    #[error("program is not in single-assignment form")]
    NotSingleAssignment,
    #[error("{count} paths exceed the cap of {cap}")]
    PathOverflow { count: u128, cap: usize },
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

pub fn output_var() -> Var {
    Var::new(OUTPUT)
}

/// Unrolls loops and renames every assignment to a fresh `name#k`, so that
/// each variable is assigned at most once on any execution. Where the two
/// arms of a conditional leave different versions of a variable, the arms
/// are made to agree on one name (renaming, or appending a copy to an arm
/// that never assigned it).
pub fn to_single_assignment(p: &Program) -> Result<Program, CompileError> {
    let body = p.body().unroll()?;
    let mut st = SaState {
        counters: BTreeMap::new(),
    };
    let mut env: BTreeMap<Var, Var> = p.inputs().iter().map(|(v, _)| (v.clone(), v.clone())).collect();
    let out = st.convert(&body, &mut env)?;
    Ok(Program::new(p.inputs().to_vec(), out)?)
}

struct SaState {
    counters: BTreeMap<Var, usize>,
}

impl SaState {
    fn fresh(&mut self, v: &Var) -> Var {
        let k = self.counters.entry(v.clone()).or_insert(0);
        *k += 1;
        Var::new(format!("{}#{}", v.name(), k))
    }

    fn convert(&mut self, c: &Command, env: &mut BTreeMap<Var, Var>) -> Result<Command, CompileError> {
        let lookup = |env: &BTreeMap<Var, Var>| {
            let env = env.clone();
            move |v: &Var| env.get(v).cloned().ok_or_else(|| ProgramError::Unbound(v.clone()))
        };
        let use_err = |e: ProgramError| match e {
            ProgramError::Unbound(v) => CompileError::UseBeforeDef(v),
            other => other.into(),
        };
        Ok(match c {
            Command::Skip => Command::Skip,
            Command::Assign(v, e) => {
                let e = e.rename(&mut lookup(env)).map_err(use_err)?;
                let n = self.fresh(v);
                env.insert(v.clone(), n.clone());
                Command::Assign(n, e)
            }
            Command::Return(e) => Command::Return(e.rename(&mut lookup(env)).map_err(use_err)?),
            Command::Seq(cs) => Command::Seq(
                cs.iter()
                    .map(|c| self.convert(c, env))
                    .collect::<Result<_, _>>()?,
            ),
            Command::If(g, a, b) => {
                let g = g.rename(&mut lookup(env)).map_err(use_err)?;
                let mut env_a = env.clone();
                let mut a2 = self.convert(a, &mut env_a)?;
                let mut env_b = env.clone();
                let mut b2 = self.convert(b, &mut env_b)?;
                match (a.always_returns(), b.always_returns()) {
                    (true, _) => *env = env_b,
                    (false, true) => *env = env_a,
                    (false, false) => {
                        let keys: BTreeSet<Var> = env_a.keys().chain(env_b.keys()).cloned().collect();
                        let mut joined = BTreeMap::new();
                        for v in keys {
                            let before = env.get(&v);
                            match (env_a.get(&v), env_b.get(&v)) {
                                (Some(na), Some(nb)) if na == nb => {
                                    joined.insert(v, na.clone());
                                }
                                (Some(na), Some(nb)) => {
                                    let (na, nb) = (na.clone(), nb.clone());
                                    if Some(&na) == before {
                                        a2 = append(a2, Command::Assign(nb.clone(), Expr::Var(na)));
                                        joined.insert(v, nb);
                                    } else if Some(&nb) == before {
                                        b2 = append(b2, Command::Assign(na.clone(), Expr::Var(nb)));
                                        joined.insert(v, na);
                                    } else {
                                        b2 = rename_in(&b2, &nb, &na);
                                        joined.insert(v, na);
                                    }
                                }
                                // Defined on one arm only: unusable afterwards.
                                _ => {}
                            }
                        }
                        *env = joined;
                    }
                }
                Command::ite(g, a2, b2)
            }
            Command::For { .. } => unreachable!("loops are unrolled first"),
        })
    }
}

fn append(c: Command, extra: Command) -> Command {
    match c {
        Command::Seq(mut cs) => {
            cs.push(extra);
            Command::Seq(cs)
        }
        Command::Skip => extra,
        other => Command::Seq(vec![other, extra]),
    }
}

fn rename_in(c: &Command, from: &Var, to: &Var) -> Command {
    let mut f = |v: &Var| Ok(if v == from { to.clone() } else { v.clone() });
    match c {
        Command::Skip => Command::Skip,
        Command::Assign(v, e) => {
            let target = if v == from { to.clone() } else { v.clone() };
            Command::Assign(target, e.rename(&mut f).unwrap())
        }
        Command::Return(e) => Command::Return(e.rename(&mut f).unwrap()),
        Command::Seq(cs) => Command::Seq(cs.iter().map(|c| rename_in(c, from, to)).collect()),
        Command::If(g, a, b) => Command::ite(
            g.rename(&mut f).unwrap(),
            rename_in(a, from, to),
            rename_in(b, from, to),
        ),
        Command::For { var, count, body } => Command::For {
            var: var.clone(),
            count: *count,
            body: Box::new(rename_in(body, from, to)),
        },
    }
}

/// Syntactic check: loop-free, every read variable definitely defined, and
/// no variable (inputs included) assigned twice along any path.
pub fn is_single_assignment(p: &Program) -> bool {
    fn go(c: &Command, def: &mut BTreeSet<Var>, maybe: &mut BTreeSet<Var>) -> bool {
        let reads_ok = |e: &Expr, def: &BTreeSet<Var>| {
            e.clone()
                .rename(&mut |v| {
                    if def.contains(v) {
                        Ok(v.clone())
                    } else {
                        Err(ProgramError::Unbound(v.clone()))
                    }
                })
                .is_ok()
        };
        match c {
            Command::Skip => true,
            Command::Return(e) => reads_ok(e, def),
            Command::Assign(v, e) => {
                if !reads_ok(e, def) || maybe.contains(v) {
                    return false;
                }
                def.insert(v.clone());
                maybe.insert(v.clone());
                true
            }
            Command::Seq(cs) => cs.iter().all(|c| go(c, def, maybe)),
            Command::If(g, a, b) => {
                let guard_ok = g
                    .rename(&mut |v| {
                        if def.contains(v) {
                            Ok(v.clone())
                        } else {
                            Err(ProgramError::Unbound(v.clone()))
                        }
                    })
                    .is_ok();
                let (mut da, mut ma) = (def.clone(), maybe.clone());
                let (mut db, mut mb) = (def.clone(), maybe.clone());
                if !guard_ok || !go(a, &mut da, &mut ma) || !go(b, &mut db, &mut mb) {
                    return false;
                }
                *def = match (a.always_returns(), b.always_returns()) {
                    (true, _) => db,
                    (false, true) => da,
                    _ => da.intersection(&db).cloned().collect(),
                };
                *maybe = ma.union(&mb).cloned().collect();
                true
            }
            Command::For { .. } => false,
        }
    }
    let mut def: BTreeSet<Var> = p.inputs().iter().map(|(v, _)| v.clone()).collect();
    let mut maybe = def.clone();
    go(p.body(), &mut def, &mut maybe)
}

/// Guard as an NNF term. Negated (dis)equalities of a 0/1 variable against
/// 0 or 1 become the complementary equality.
pub fn guard_term(g: &Guard, positive: bool, sorts: &SortMap) -> Result<Term, CompileError> {
    Ok(match g {
        Guard::Cmp(a, rel, b) => {
            let rel = if positive { *rel } else { rel.negate() };
            let (lhs, rhs) = (a.to_lin()?, b.to_lin()?);
            match boolean_flip(&lhs, rel, &rhs, sorts) {
                Some(t) => t,
                None => Term::Atom(Atom::new(lhs, rel, rhs)),
            }
        }
        Guard::Not(inner) => guard_term(inner, !positive, sorts)?,
        Guard::And(a, b) | Guard::Or(a, b) => {
            let parts = [guard_term(a, positive, sorts)?, guard_term(b, positive, sorts)?];
            if matches!(g, Guard::And(..)) == positive {
                Term::and(parts)
            } else {
                Term::or(parts)
            }
        }
    })
}

fn boolean_flip(lhs: &LinExpr, rel: Rel, rhs: &LinExpr, sorts: &SortMap) -> Option<Term> {
    if rel != Rel::Ne || !rhs.is_constant() {
        return None;
    }
    let mut terms = lhs.terms();
    let (v, c) = terms.next()?;
    let single = terms.next().is_none() && *c == int(1) && lhs.constant_term() == &int(0);
    let k = rhs.constant_term();
    if single && sorts.get(v) == Some(&Sort::Bool) && (*k == int(0) || *k == int(1)) {
        let other: Rational = int(1) - k;
        return Some(Term::atom(lhs.clone(), Rel::Eq, LinExpr::constant(other)));
    }
    None
}

/// Sorts of every variable of a single-assignment program: inputs as
/// declared, assigned variables real, the output as given.
fn program_sorts(p: &Program, output: &Var, output_sort: Sort) -> SortMap {
    let mut sorts = p.input_sorts();
    fn assigned(c: &Command, out: &mut SortMap) {
        match c {
            Command::Assign(v, _) => {
                out.entry(v.clone()).or_insert(Sort::Real);
            }
            Command::Seq(cs) => cs.iter().for_each(|c| assigned(c, out)),
            Command::If(_, a, b) => {
                assigned(a, out);
                assigned(b, out);
            }
            Command::For { body, .. } => assigned(body, out),
            Command::Skip | Command::Return(_) => {}
        }
    }
    assigned(p.body(), &mut sorts);
    sorts.insert(output.clone(), output_sort);
    sorts
}

/// Number of syntactic execution paths, saturating.
pub fn path_count(c: &Command) -> u128 {
    match c {
        Command::Skip | Command::Assign(..) | Command::Return(_) => 1,
        Command::Seq(cs) => cs.iter().fold(1u128, |acc, c| acc.saturating_mul(path_count(c))),
        Command::If(_, a, b) => path_count(a).saturating_add(path_count(b)),
        Command::For { count, body, .. } => path_count(body).saturating_pow(*count),
    }
}

/// A purely conjunctive description of one execution path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathFormula {
    pub conjuncts: Vec<Term>,
}

impl PathFormula {
    pub fn term(&self) -> Term {
        Term::and(self.conjuncts.iter().cloned())
    }
}

fn check_compilable(p: &Program) -> Result<(), CompileError> {
    if !is_single_assignment(p) {
        return Err(CompileError::NotSingleAssignment);
    }
    if !p.body().always_returns() {
        return Err(CompileError::MissingReturn);
    }
    Ok(())
}

/// One path formula per syntactic path of a single-assignment program.
pub fn path_formulae(p: &Program, cap: usize) -> Result<Vec<PathFormula>, CompileError> {
    check_compilable(p)?;
    let count = path_count(p.body());
    if count > cap as u128 {
        return Err(CompileError::PathOverflow { count, cap });
    }
    let sorts = program_sorts(p, &output_var(), Sort::Bool);
    fn go(c: &Command, sorts: &SortMap) -> Result<Vec<Vec<Term>>, CompileError> {
        Ok(match c {
            Command::Skip => vec![vec![]],
            Command::Assign(v, e) => vec![vec![assign_atom(v, e)?]],
            Command::Return(e) => vec![vec![assign_atom(&output_var(), e)?]],
            Command::Seq(cs) => {
                let mut acc = vec![vec![]];
                for c in cs {
                    let next = go(c, sorts)?;
                    acc = acc
                        .iter()
                        .flat_map(|p| {
                            next.iter().map(move |q| {
                                let mut r = p.clone();
                                r.extend(q.iter().cloned());
                                r
                            })
                        })
                        .collect();
                }
                acc
            }
            Command::If(g, a, b) => {
                let pos = guard_term(g, true, sorts)?;
                let neg = guard_term(g, false, sorts)?;
                let mut out = Vec::new();
                for (guard, arm) in [(pos, a), (neg, b)] {
                    for mut path in go(arm, sorts)? {
                        path.insert(0, guard.clone());
                        out.push(path);
                    }
                }
                out
            }
            Command::For { .. } => unreachable!("rejected by the single-assignment check"),
        })
    }
    Ok(go(p.body(), &sorts)?
        .into_iter()
        .map(|conjuncts| PathFormula { conjuncts })
        .collect())
}

fn assign_atom(v: &Var, e: &Expr) -> Result<Term, CompileError> {
    Ok(Term::atom(LinExpr::var(v.clone()), Rel::Eq, e.to_lin()?))
}

/// The characteristic formula `φ(x, y)` of a single-assignment program with
/// a 0/1 output.
pub fn characteristic_formula(p: &Program) -> Result<Formula, CompileError> {
    characteristic_formula_for(p, &output_var(), Sort::Bool)
}

/// Characteristic formula with a chosen output variable and sort.
///
/// Equivalent to the disjunction of all path formulae, but kept structured:
/// sequencing conjoins, and a conditional distributes its guard (and the
/// negated guard) over the top-level disjuncts of each arm.
pub fn characteristic_formula_for(
    p: &Program,
    output: &Var,
    output_sort: Sort,
) -> Result<Formula, CompileError> {
    check_compilable(p)?;
    let sorts = program_sorts(p, output, output_sort);
    fn go(c: &Command, out: &Var, sorts: &SortMap) -> Result<Term, CompileError> {
        Ok(match c {
            Command::Skip => Term::Const(true),
            Command::Assign(v, e) => assign_atom(v, e)?,
            Command::Return(e) => assign_atom(out, e)?,
            Command::Seq(cs) => Term::and(
                cs.iter()
                    .map(|c| go(c, out, sorts))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            Command::If(g, a, b) => {
                let pos = guard_term(g, true, sorts)?;
                let neg = guard_term(g, false, sorts)?;
                let ta = go(a, out, sorts)?;
                let tb = go(b, out, sorts)?;
                let arm = |guard: &Term, t: &Term| -> Vec<Term> {
                    t.disjuncts()
                        .iter()
                        .map(|d| Term::and([guard.clone(), d.clone()]))
                        .collect()
                };
                Term::or(arm(&pos, &ta).into_iter().chain(arm(&neg, &tb)))
            }
            Command::For { .. } => unreachable!("rejected by the single-assignment check"),
        })
    }
    Ok(Formula::new(go(p.body(), output, &sorts)?, sorts)?)
}

/// `φ_f(x, 1 − ŷ)`: satisfied exactly by inputs whose prediction differs
/// from `ŷ`.
pub fn counterfactual_formula(phi_f: &Formula, y_hat: u8) -> Formula {
    let mut fix = crate::formula::Assignment::new();
    fix.insert(output_var(), int(1 - i64::from(y_hat.min(1))));
    phi_f.substitute(&fix)
}

/// Single-assignment program and characteristic formula in one step.
pub fn compile(p: &Program) -> Result<(Program, Formula), CompileError> {
    let sa = to_single_assignment(p)?;
    let phi = characteristic_formula(&sa)?;
    Ok((sa, phi))
}
