//! Normalized linear constraints over indexed variables.

use std::collections::HashMap;

use num_integer::Integer;
use num_traits::{One, Zero};

use crate::formula::{Atom, LinExpr, Rel, Sort, Var};
use crate::rational::Rational;

/// Sorted by variable, no zero coefficients.
pub type Sparse = Vec<(u32, Rational)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cmp {
    Le,
    Lt,
    Eq,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Lt => "<",
            Cmp::Eq => "=",
        }
    }
}

/// Where a constraint came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Origin {
    /// An atom of the decided formula.
    Atom(Atom),
    /// `0 ≤ b` or `b ≤ 1` for a Boolean variable.
    BoolBound(Var),
    /// One side of an integer branch `x ≤ k ∨ x ≥ k + 1`.
    Branch(Var),
}

/// `form cmp rhs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Constraint {
    pub form: Sparse,
    pub cmp: Cmp,
    pub rhs: Rational,
}

impl Constraint {
    pub fn eval(&self, values: &[Rational]) -> bool {
        let lhs = dot(&self.form, values);
        match self.cmp {
            Cmp::Le => lhs <= self.rhs,
            Cmp::Lt => lhs < self.rhs,
            Cmp::Eq => lhs == self.rhs,
        }
    }
}

pub fn dot(form: &Sparse, values: &[Rational]) -> Rational {
    form.iter()
        .fold(Rational::zero(), |acc, (v, c)| acc + c * &values[*v as usize])
}

/// `a + k·b` over sparse vectors.
pub fn axpy(a: &Sparse, k: &Rational, b: &Sparse) -> Sparse {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i].0 < b[j].0);
        let take_b = i >= a.len() || (j < b.len() && b[j].0 < a[i].0);
        if take_a {
            out.push(a[i].clone());
            i += 1;
        } else if take_b {
            out.push((b[j].0, k * &b[j].1));
            j += 1;
        } else {
            let c = &a[i].1 + k * &b[j].1;
            if !c.is_zero() {
                out.push((a[i].0, c));
            }
            i += 1;
            j += 1;
        }
    }
    out
}

pub fn scale(a: &Sparse, k: &Rational) -> Sparse {
    if k.is_zero() {
        return Vec::new();
    }
    a.iter().map(|(v, c)| (*v, c * k)).collect()
}

pub fn coeff(a: &Sparse, v: u32) -> Option<&Rational> {
    a.binary_search_by_key(&v, |(w, _)| *w).ok().map(|i| &a[i].1)
}

/// Variables of a decided formula, indexed in name order.
#[derive(Debug, Clone, Default)]
pub struct VarTable {
    pub vars: Vec<Var>,
    pub sorts: Vec<Sort>,
    pub index: HashMap<Var, u32>,
}

impl VarTable {
    pub fn new(sorts: impl IntoIterator<Item = (Var, Sort)>) -> Self {
        let mut t = VarTable::default();
        for (v, s) in sorts {
            t.index.insert(v.clone(), t.vars.len() as u32);
            t.vars.push(v);
            t.sorts.push(s);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_integral(&self, v: u32) -> bool {
        self.sorts[v as usize] != Sort::Real
    }

    fn form(&self, e: &LinExpr) -> Sparse {
        let mut out: Sparse = e
            .terms()
            .map(|(v, c)| (self.index[v], c.clone()))
            .collect();
        out.sort_by_key(|(v, _)| *v);
        out
    }
}

/// Result of normalizing an atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normal {
    Const(bool),
    One(Constraint),
    /// A disequality, as the two strict sides.
    Either(Constraint, Constraint),
}

/// Turns `lhs rel rhs` into `form cmp k`, tightening constraints whose
/// variables are all integral.
pub fn normalize(atom: &Atom, table: &VarTable) -> Normal {
    let d = atom.difference();
    let form = table.form(&d);
    let k = -d.constant_term().clone();
    if form.is_empty() {
        return Normal::Const(atom.rel.holds(&-k, &Rational::zero()));
    }
    let neg = |f: &Sparse| scale(f, &-Rational::one());
    let build = |form: Sparse, cmp: Cmp, rhs: Rational| tighten(Constraint { form, cmp, rhs }, table);
    match atom.rel {
        Rel::Le => build(form, Cmp::Le, k),
        Rel::Lt => build(form, Cmp::Lt, k),
        Rel::Eq => build(form, Cmp::Eq, k),
        Rel::Ge => build(neg(&form), Cmp::Le, -k),
        Rel::Gt => build(neg(&form), Cmp::Lt, -k),
        Rel::Ne => {
            if let Some(n) = bool_disequality(&form, &k, table) {
                return n;
            }
            let lo = build(form.clone(), Cmp::Lt, k.clone());
            let hi = build(neg(&form), Cmp::Lt, -k);
            match (lo, hi) {
                (Normal::One(a), Normal::One(b)) => Normal::Either(a, b),
                (Normal::Const(false), other) | (other, Normal::Const(false)) => other,
                _ => Normal::Const(true),
            }
        }
    }
}

/// `c·b ≠ k` for a single Boolean `b` pins `b` to the other value.
fn bool_disequality(form: &Sparse, k: &Rational, table: &VarTable) -> Option<Normal> {
    if form.len() != 1 || table.sorts[form[0].0 as usize] != Sort::Bool {
        return None;
    }
    let value = k / &form[0].1;
    let other = if value.is_zero() {
        Rational::one()
    } else if value.is_one() {
        Rational::zero()
    } else {
        return Some(Normal::Const(true));
    };
    Some(Normal::One(Constraint {
        form: vec![(form[0].0, Rational::one())],
        cmp: Cmp::Eq,
        rhs: other,
    }))
}

/// Integer tightening: with integral variables and coefficients scaled to
/// coprime integers, `e < k` becomes `e ≤ ⌈k⌉ − 1` and `e ≤ k` becomes
/// `e ≤ ⌊k⌋`; an equality with fractional right side is false.
pub fn tighten(c: Constraint, table: &VarTable) -> Normal {
    if !c.form.iter().all(|(v, _)| table.is_integral(*v)) {
        return Normal::One(c);
    }
    let den_lcm = c
        .form
        .iter()
        .fold(num_bigint::BigInt::one(), |acc, (_, q)| acc.lcm(q.denom()));
    let scaled: Vec<num_bigint::BigInt> = c
        .form
        .iter()
        .map(|(_, q)| (q * Rational::from_integer(den_lcm.clone())).to_integer())
        .collect();
    let g = scaled
        .iter()
        .fold(num_bigint::BigInt::zero(), |acc, n| acc.gcd(n));
    let factor = Rational::new(den_lcm, g);
    let form: Sparse = c.form.iter().map(|(v, q)| (*v, q * &factor)).collect();
    let rhs = &c.rhs * &factor;
    let (cmp, rhs) = match c.cmp {
        Cmp::Eq if !rhs.is_integer() => return Normal::Const(false),
        Cmp::Eq => (Cmp::Eq, rhs),
        Cmp::Le => (Cmp::Le, rhs.floor()),
        Cmp::Lt => (Cmp::Le, rhs.ceil() - Rational::one()),
    };
    Normal::One(Constraint { form, cmp, rhs })
}

/// Scales `form` so its first coefficient is 1; returns the factor applied.
pub fn monic(form: &Sparse) -> (Sparse, Rational) {
    let lead = form[0].1.clone();
    let inv = lead.recip();
    (scale(form, &inv), inv)
}
