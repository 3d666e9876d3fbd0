//! Incremental bounded simplex over exact rationals, with strict bounds
//! handled symbolically as `c + k·δ` for an infinitesimal `δ > 0`.
//!
//! Every distinct multi-variable form gets a slack variable; single-variable
//! constraints bound the variable itself. Bland's rule keeps pivoting
//! finite. Backtracking only restores bounds: the current assignment stays
//! consistent with the tableau and nonbasic variables stay within the
//! looser bounds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::{Add, Sub};

use num_traits::{One, Signed, Zero};

use super::linear::{monic, Cmp, Constraint, Sparse};
use super::{Conflict, SolveError};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct DeltaRat {
    pub c: Rational,
    pub k: Rational,
}

impl DeltaRat {
    fn new(c: Rational, k: i64) -> Self {
        DeltaRat {
            c,
            k: Rational::from_integer(k.into()),
        }
    }

    fn scale(&self, q: &Rational) -> DeltaRat {
        DeltaRat {
            c: &self.c * q,
            k: &self.k * q,
        }
    }

    fn concrete(&self, delta: &Rational) -> Rational {
        &self.c + &self.k * delta
    }
}

impl Add for &DeltaRat {
    type Output = DeltaRat;
    fn add(self, o: &DeltaRat) -> DeltaRat {
        DeltaRat {
            c: &self.c + &o.c,
            k: &self.k + &o.k,
        }
    }
}

impl Sub for &DeltaRat {
    type Output = DeltaRat;
    fn sub(self, o: &DeltaRat) -> DeltaRat {
        DeltaRat {
            c: &self.c - &o.c,
            k: &self.k - &o.k,
        }
    }
}

#[derive(Debug, Clone)]
struct BoundVal {
    value: DeltaRat,
    cid: usize,
    /// The bounded variable is `factor · form(cid)`.
    factor: Rational,
    level: u32,
}

type Row = BTreeMap<usize, Rational>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct Simplex {
    n_orig: usize,
    values: Vec<DeltaRat>,
    lower: Vec<Option<BoundVal>>,
    upper: Vec<Option<BoundVal>>,
    rows: Vec<Option<Row>>,
    basics: BTreeSet<usize>,
    slack_of: HashMap<Sparse, usize>,
    trail: Vec<(usize, Side, Option<BoundVal>)>,
    pub pivots: u64,
    max_pivots: u64,
}

impl Simplex {
    pub fn new(n: usize, max_pivots: u64) -> Self {
        Simplex {
            n_orig: n,
            values: vec![DeltaRat::default(); n],
            lower: vec![None; n],
            upper: vec![None; n],
            rows: vec![None; n],
            basics: BTreeSet::new(),
            slack_of: HashMap::new(),
            trail: Vec::new(),
            pivots: 0,
            max_pivots,
        }
    }

    pub fn mark(&self) -> usize {
        self.trail.len()
    }

    pub fn backtrack(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let (v, side, old) = self.trail.pop().unwrap();
            match side {
                Side::Lower => self.lower[v] = old,
                Side::Upper => self.upper[v] = old,
            }
        }
    }

    fn slack(&mut self, form: Sparse) -> usize {
        if let Some(&s) = self.slack_of.get(&form) {
            return s;
        }
        let s = self.values.len();
        let mut row = Row::new();
        let mut value = DeltaRat::default();
        for (v, a) in &form {
            let v = *v as usize;
            value = &value + &self.values[v].scale(a);
            match &self.rows[v] {
                Some(r) => {
                    for (j, b) in r {
                        add_to(&mut row, *j, &(a * b));
                    }
                }
                None => add_to(&mut row, v, a),
            }
        }
        self.values.push(value);
        self.lower.push(None);
        self.upper.push(None);
        self.rows.push(Some(row));
        self.basics.insert(s);
        self.slack_of.insert(form, s);
        s
    }

    /// Asserts a constraint; detects only direct bound clashes. Call
    /// [`check`](Self::check) for full feasibility.
    pub fn assert(&mut self, cid: usize, c: &Constraint, level: u32) -> Result<(), Conflict> {
        let (form, factor) = monic(&c.form);
        let rhs = &c.rhs * &factor;
        let var = if form.len() == 1 {
            form[0].0 as usize
        } else {
            self.slack(form)
        };
        let flips = factor.is_negative();
        let strict = if c.cmp == Cmp::Lt { 1 } else { 0 };
        let bound = |k: i64| BoundVal {
            value: DeltaRat::new(rhs.clone(), k),
            cid,
            factor: factor.clone(),
            level,
        };
        match (c.cmp, flips) {
            (Cmp::Eq, _) => {
                self.assert_side(var, Side::Upper, bound(0))?;
                self.assert_side(var, Side::Lower, bound(0))
            }
            (_, false) => self.assert_side(var, Side::Upper, bound(-strict)),
            (_, true) => self.assert_side(var, Side::Lower, bound(strict)),
        }
    }

    fn assert_side(&mut self, v: usize, side: Side, b: BoundVal) -> Result<(), Conflict> {
        let (same, other) = match side {
            Side::Upper => (&self.upper[v], &self.lower[v]),
            Side::Lower => (&self.lower[v], &self.upper[v]),
        };
        let redundant = same.as_ref().is_some_and(|s| match side {
            Side::Upper => s.value <= b.value,
            Side::Lower => s.value >= b.value,
        });
        if redundant {
            return Ok(());
        }
        if let Some(o) = other {
            let clash = match side {
                Side::Upper => b.value < o.value,
                Side::Lower => b.value > o.value,
            };
            if clash {
                let mut conflict = Conflict::default();
                explain(&mut conflict, &b, side, &Rational::one());
                let opposite = match side {
                    Side::Upper => Side::Lower,
                    Side::Lower => Side::Upper,
                };
                explain(&mut conflict, o, opposite, &Rational::one());
                return Err(conflict.finish());
            }
        }
        let value = b.value.clone();
        let old = match side {
            Side::Upper => self.upper[v].replace(b),
            Side::Lower => self.lower[v].replace(b),
        };
        self.trail.push((v, side, old));
        if self.rows[v].is_none() {
            let out = match side {
                Side::Upper => self.values[v] > value,
                Side::Lower => self.values[v] < value,
            };
            if out {
                self.update(v, value);
            }
        }
        Ok(())
    }

    fn update(&mut self, j: usize, v: DeltaRat) {
        let diff = &v - &self.values[j];
        for &b in &self.basics {
            if let Some(a) = self.rows[b].as_ref().unwrap().get(&j) {
                let inc = diff.scale(a);
                self.values[b] = &self.values[b] + &inc;
            }
        }
        self.values[j] = v;
    }

    fn pivot_and_update(&mut self, i: usize, j: usize, v: DeltaRat) {
        let a_ij = self.rows[i].as_ref().unwrap()[&j].clone();
        let theta = (&v - &self.values[i]).scale(&a_ij.recip());
        self.values[i] = v;
        self.values[j] = &self.values[j] + &theta;
        for &b in &self.basics {
            if b == i {
                continue;
            }
            if let Some(a) = self.rows[b].as_ref().unwrap().get(&j) {
                let inc = theta.scale(a);
                self.values[b] = &self.values[b] + &inc;
            }
        }
        self.pivot(i, j);
    }

    fn pivot(&mut self, i: usize, j: usize) {
        self.pivots += 1;
        let mut row_i = self.rows[i].take().unwrap();
        let a_ij = row_i.remove(&j).unwrap();
        let inv = a_ij.recip();
        let mut row_j = Row::new();
        row_j.insert(i, inv.clone());
        for (k, a) in row_i {
            row_j.insert(k, -(a * &inv));
        }
        self.basics.remove(&i);
        for &b in &self.basics {
            let row = self.rows[b].as_mut().unwrap();
            if let Some(c) = row.remove(&j) {
                for (k, a) in &row_j {
                    add_to(row, *k, &(&c * a));
                }
            }
        }
        self.rows[j] = Some(row_j);
        self.basics.insert(j);
    }

    pub fn check(&mut self) -> Result<Result<(), Conflict>, SolveError> {
        loop {
            if self.pivots >= self.max_pivots {
                return Err(SolveError::Budget("simplex pivots"));
            }
            let violated = self.basics.iter().copied().find_map(|b| {
                if let Some(l) = &self.lower[b] {
                    if self.values[b] < l.value {
                        return Some((b, Side::Lower));
                    }
                }
                if let Some(u) = &self.upper[b] {
                    if self.values[b] > u.value {
                        return Some((b, Side::Upper));
                    }
                }
                None
            });
            let Some((i, side)) = violated else {
                return Ok(Ok(()));
            };
            let row = self.rows[i].as_ref().unwrap();
            // Raising x_i needs a nonbasic that can move in the helpful
            // direction; lowering it, the opposite.
            let can_move = |j: usize, a: &Rational| {
                let up = (side == Side::Lower) == a.is_positive();
                if up {
                    self.upper[j].as_ref().is_none_or(|u| self.values[j] < u.value)
                } else {
                    self.lower[j].as_ref().is_none_or(|l| self.values[j] > l.value)
                }
            };
            let entering = row.iter().find(|(j, a)| can_move(**j, a)).map(|(j, _)| *j);
            match entering {
                Some(j) => {
                    let target = match side {
                        Side::Lower => self.lower[i].as_ref().unwrap().value.clone(),
                        Side::Upper => self.upper[i].as_ref().unwrap().value.clone(),
                    };
                    self.pivot_and_update(i, j, target);
                }
                None => {
                    let mut conflict = Conflict::default();
                    let own = match side {
                        Side::Lower => self.lower[i].as_ref().unwrap(),
                        Side::Upper => self.upper[i].as_ref().unwrap(),
                    };
                    explain(&mut conflict, own, side, &Rational::one());
                    for (j, a) in row {
                        let blocking = if (side == Side::Lower) == a.is_positive() {
                            (self.upper[*j].as_ref().unwrap(), Side::Upper)
                        } else {
                            (self.lower[*j].as_ref().unwrap(), Side::Lower)
                        };
                        explain(&mut conflict, blocking.0, blocking.1, &a.abs());
                    }
                    return Ok(Err(conflict.finish()));
                }
            }
        }
    }

    /// Concrete values of the original variables: `δ` is fixed small enough
    /// that every bound holds.
    pub fn model(&self) -> Vec<Rational> {
        let mut delta = Rational::one();
        for v in 0..self.values.len() {
            let x = &self.values[v];
            if let Some(l) = &self.lower[v] {
                if l.value.c < x.c && l.value.k > x.k {
                    delta = delta.min((&x.c - &l.value.c) / (&l.value.k - &x.k));
                }
            }
            if let Some(u) = &self.upper[v] {
                if x.c < u.value.c && x.k > u.value.k {
                    delta = delta.min((&u.value.c - &x.c) / (&x.k - &u.value.k));
                }
            }
        }
        delta /= Rational::from_integer(2.into());
        self.values[..self.n_orig]
            .iter()
            .map(|x| x.concrete(&delta))
            .collect()
    }
}

fn add_to(row: &mut Row, j: usize, a: &Rational) {
    let e = row.entry(j).or_insert_with(Rational::zero);
    *e += a;
    if e.is_zero() {
        row.remove(&j);
    }
}

/// Adds `μ ·` (the used side of bound `b`) to the conflict, translated back
/// to a multiple of the originating constraint.
fn explain(conflict: &mut Conflict, b: &BoundVal, side: Side, mu: &Rational) {
    let lambda = match side {
        Side::Upper => mu * &b.factor,
        Side::Lower => -(mu * &b.factor),
    };
    conflict.farkas.push((b.cid, lambda));
    conflict.levels.insert(b.level);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn c(form: &[(u32, i64)], cmp: Cmp, rhs: Rational) -> Constraint {
        Constraint {
            form: form.iter().map(|(v, a)| (*v, int(*a))).collect(),
            cmp,
            rhs,
        }
    }

    #[test]
    fn sum_bound_conflict() {
        let mut s = Simplex::new(2, 1000);
        let cs = [
            c(&[(0, 1), (1, 1)], Cmp::Le, int(1)),
            c(&[(0, -1)], Cmp::Le, ratio(-3, 5)),
            c(&[(1, -1)], Cmp::Le, ratio(-3, 5)),
        ];
        for (i, k) in cs.iter().enumerate() {
            s.assert(i, k, 0).unwrap();
        }
        let conflict = s.check().unwrap().unwrap_err();
        let ids: Vec<usize> = conflict.farkas.iter().map(|(i, _)| *i).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(conflict.farkas.iter().all(|(_, l)| l.is_positive()));
    }

    #[test]
    fn strict_bounds_and_model() {
        let mut s = Simplex::new(2, 1000);
        s.assert(0, &c(&[(0, 1), (1, -1)], Cmp::Lt, int(0)), 0).unwrap();
        s.assert(1, &c(&[(0, -1)], Cmp::Le, int(0)), 0).unwrap();
        s.assert(2, &c(&[(1, 1)], Cmp::Le, int(1)), 0).unwrap();
        assert!(s.check().unwrap().is_ok());
        let m = s.model();
        assert!(m[0] >= int(0) && m[0] < m[1] && m[1] <= int(1), "{m:?}");
        let mark = s.mark();
        assert!(s.assert(3, &c(&[(1, 1)], Cmp::Le, int(0)), 1).is_ok());
        let conflict = s.check().unwrap().unwrap_err();
        assert!(conflict.levels.contains(&1));
        s.backtrack(mark);
        assert!(s.check().unwrap().is_ok());
    }

    #[test]
    fn direct_clash() {
        let mut s = Simplex::new(1, 1000);
        s.assert(0, &c(&[(0, 1)], Cmp::Le, ratio(3, 10)), 0).unwrap();
        let conflict = s.assert(1, &c(&[(0, -1)], Cmp::Le, ratio(-1, 2)), 0).unwrap_err();
        assert_eq!(conflict.farkas.len(), 2);
    }
}
