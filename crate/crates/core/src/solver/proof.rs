//! Unsat certificates: a tree of case splits whose leaves are Farkas
//! combinations of premises adding up to a contradiction `0 ≤ c`, `c < 0`
//! (or `0 < 0`).

use std::collections::BTreeSet;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use super::linear::{axpy, normalize, scale, Cmp, Constraint, Normal, Origin, Sparse, VarTable};
use crate::formula::{Sort, Var};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Premise {
    pub constraint: Constraint,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProofNode {
    /// Premise multipliers; non-negative except on equalities.
    Farkas(Vec<(usize, Rational)>),
    /// Every branch of a disjunction refuted.
    Split(Vec<ProofNode>),
    /// `x ≤ k ∨ x ≥ k + 1` for an integral `x`.
    Cut {
        low: usize,
        high: usize,
        below: Box<ProofNode>,
        above: Box<ProofNode>,
    },
    /// The formula simplified to `false`.
    Trivial,
    /// Verdict taken from an external solver; nothing to replay.
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refutation {
    pub vars: Vec<(Var, Sort)>,
    pub premises: Vec<Premise>,
    pub root: ProofNode,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("premise {0} does not follow from its origin")]
    Unjustified(usize),
    #[error("premise {0} is used outside the branch that introduced it")]
    OutOfScope(usize),
    #[error("negative multiplier on inequality premise {0}")]
    NegativeMultiplier(usize),
    #[error("combination leaves variables uncancelled")]
    Uncancelled,
    #[error("combination {0} is not contradictory")]
    NotContradictory(String),
    #[error("integer cut on premises {0} and {1} is not exhaustive")]
    BadCut(usize, usize),
    #[error("premise index {0} out of range")]
    Missing(usize),
}

impl Refutation {
    pub fn external(name: &str) -> Self {
        Refutation {
            vars: Vec::new(),
            premises: Vec::new(),
            root: ProofNode::External(name.to_string()),
        }
    }

    /// Number of Farkas leaves.
    pub fn leaves(&self) -> usize {
        fn count(n: &ProofNode) -> usize {
            match n {
                ProofNode::Farkas(_) | ProofNode::Trivial | ProofNode::External(_) => 1,
                ProofNode::Split(bs) => bs.iter().map(count).sum(),
                ProofNode::Cut { below, above, .. } => count(below) + count(above),
            }
        }
        count(&self.root)
    }

    pub fn is_external(&self) -> bool {
        matches!(self.root, ProofNode::External(_))
    }

    /// Re-checks every arithmetic step and every premise's justification.
    pub fn replay(&self) -> Result<(), ReplayError> {
        let table = VarTable::new(self.vars.iter().cloned());
        for (i, p) in self.premises.iter().enumerate() {
            if !justified(p, &table) {
                return Err(ReplayError::Unjustified(i));
            }
        }
        self.check(&self.root, &mut BTreeSet::new(), &table)
    }

    fn premise(&self, i: usize) -> Result<&Premise, ReplayError> {
        self.premises.get(i).ok_or(ReplayError::Missing(i))
    }

    fn check(
        &self,
        node: &ProofNode,
        scope: &mut BTreeSet<usize>,
        table: &VarTable,
    ) -> Result<(), ReplayError> {
        match node {
            ProofNode::Trivial | ProofNode::External(_) => Ok(()),
            ProofNode::Split(bs) => bs.iter().try_for_each(|b| self.check(b, scope, table)),
            ProofNode::Farkas(combo) => {
                for (i, _) in combo {
                    let p = self.premise(*i)?;
                    if matches!(p.origin, Origin::Branch(_)) && !scope.contains(i) {
                        return Err(ReplayError::OutOfScope(*i));
                    }
                }
                self.check_farkas(combo)
            }
            ProofNode::Cut {
                low,
                high,
                below,
                above,
            } => {
                let (l, h) = (self.premise(*low)?, self.premise(*high)?);
                if !exhaustive_cut(&l.constraint, &h.constraint, table) {
                    return Err(ReplayError::BadCut(*low, *high));
                }
                scope.insert(*low);
                self.check(below, scope, table)?;
                scope.remove(low);
                scope.insert(*high);
                self.check(above, scope, table)?;
                scope.remove(high);
                Ok(())
            }
        }
    }

    fn check_farkas(&self, combo: &[(usize, Rational)]) -> Result<(), ReplayError> {
        let mut form: Sparse = Vec::new();
        let mut rhs = Rational::zero();
        let mut strict = false;
        for (i, lambda) in combo {
            let c = &self.premise(*i)?.constraint;
            if c.cmp != Cmp::Eq && lambda.is_negative() {
                return Err(ReplayError::NegativeMultiplier(*i));
            }
            form = axpy(&form, lambda, &c.form);
            rhs += lambda * &c.rhs;
            strict |= c.cmp == Cmp::Lt && lambda.is_positive();
        }
        if !form.is_empty() {
            return Err(ReplayError::Uncancelled);
        }
        if rhs.is_negative() || (rhs.is_zero() && strict) {
            Ok(())
        } else {
            let rel = if strict { "<" } else { "<=" };
            Err(ReplayError::NotContradictory(format!("0 {rel} {rhs}")))
        }
    }
}

fn justified(p: &Premise, table: &VarTable) -> bool {
    let c = &p.constraint;
    match &p.origin {
        Origin::Atom(a) => {
            if a.vars().any(|v| !table.index.contains_key(v)) {
                return false;
            }
            match normalize(a, table) {
                Normal::One(n) => &n == c,
                Normal::Either(x, y) => &x == c || &y == c,
                Normal::Const(_) => false,
            }
        }
        Origin::BoolBound(v) => {
            let Some(&i) = table.index.get(v) else {
                return false;
            };
            let upper = Constraint {
                form: vec![(i, Rational::one())],
                cmp: Cmp::Le,
                rhs: Rational::one(),
            };
            let lower = Constraint {
                form: vec![(i, -Rational::one())],
                cmp: Cmp::Le,
                rhs: Rational::zero(),
            };
            table.sorts[i as usize] == Sort::Bool && (c == &upper || c == &lower)
        }
        Origin::Branch(v) => table
            .index
            .get(v)
            .is_some_and(|&i| c.form.len() == 1 && c.form[0].0 == i && c.cmp == Cmp::Le),
    }
}

/// `x ≤ k` and `−x ≤ −(k + 1)` over an integral variable.
fn exhaustive_cut(low: &Constraint, high: &Constraint, table: &VarTable) -> bool {
    let one = Rational::one();
    let [(v, a)] = low.form.as_slice() else {
        return false;
    };
    low.cmp == Cmp::Le
        && high.cmp == Cmp::Le
        && *a == one
        && high.form == scale(&low.form, &-one.clone())
        && table.is_integral(*v)
        && low.rhs.is_integer()
        && high.rhs == -(&low.rhs + one)
}
