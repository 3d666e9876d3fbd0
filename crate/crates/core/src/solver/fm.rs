//! Fourier-Motzkin elimination with Farkas bookkeeping.
//!
//! Equalities are substituted away first (Real variables preferred), then
//! variables are eliminated one at a time from the remaining inequalities.
//! Each derived row carries the combination of input constraints that
//! produced it, so a contradictory row is directly a Farkas certificate.
//! Chernikov's rule drops rows derived from more than `s + 1` inputs after
//! `s` eliminations.

use std::collections::{BTreeSet, HashMap};

use num_traits::{One, Signed, Zero};

use super::linear::{axpy, coeff, scale, Cmp, Constraint, Sparse};
use super::SolveError;
use crate::formula::Sort;
use crate::rational::Rational;

#[derive(Debug, Clone)]
struct Row {
    form: Sparse,
    cmp: Cmp,
    rhs: Rational,
    /// Multipliers over constraint ids.
    combo: Sparse,
    hist: BTreeSet<u32>,
}

impl Row {
    fn combine(&self, k: &Rational, other: &Row) -> Row {
        Row {
            form: axpy(&self.form, k, &other.form),
            cmp: if other.cmp == Cmp::Lt { Cmp::Lt } else { self.cmp },
            rhs: &self.rhs + k * &other.rhs,
            combo: axpy(&self.combo, k, &other.combo),
            hist: self.hist.union(&other.hist).copied().collect(),
        }
    }

    fn scaled(&self, k: &Rational) -> Row {
        Row {
            form: scale(&self.form, k),
            cmp: self.cmp,
            rhs: &self.rhs * k,
            combo: scale(&self.combo, k),
            hist: self.hist.clone(),
        }
    }

    /// `None` if fine, `Some(certificate)` if the row is a ground
    /// contradiction. Only meaningful for an empty form.
    fn contradiction(&self) -> Option<Sparse> {
        let bad = match self.cmp {
            Cmp::Le => self.rhs.is_negative(),
            Cmp::Lt => !self.rhs.is_positive(),
            Cmp::Eq => !self.rhs.is_zero(),
        };
        if !bad {
            return None;
        }
        if self.cmp == Cmp::Eq && self.rhs.is_positive() {
            return Some(scale(&self.combo, &-Rational::one()));
        }
        Some(self.combo.clone())
    }
}

enum Step {
    Subst(u32, Row),
    Elim(u32, Vec<Row>, Vec<Row>),
}

pub enum FmResult {
    Sat(Vec<Rational>),
    /// Multipliers over constraint ids.
    Unsat(Vec<(usize, Rational)>),
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FmStats {
    pub eliminations: u64,
    pub generated: u64,
}

/// Decides the conjunction of `constraints` (id, constraint) over `n`
/// variables with the given sorts.
pub fn decide(
    constraints: &[(usize, &Constraint)],
    sorts: &[Sort],
    max_rows: u64,
    stats: &mut FmStats,
) -> Result<FmResult, SolveError> {
    let mut rows = Vec::new();
    for (i, (cid, c)) in constraints.iter().enumerate() {
        let row = Row {
            form: c.form.clone(),
            cmp: c.cmp,
            rhs: c.rhs.clone(),
            combo: vec![(*cid as u32, Rational::one())],
            hist: if c.cmp == Cmp::Eq {
                BTreeSet::new()
            } else {
                BTreeSet::from([i as u32])
            },
        };
        if row.form.is_empty() {
            if let Some(cert) = row.contradiction() {
                return Ok(FmResult::Unsat(unpack(cert)));
            }
            continue;
        }
        rows.push(row);
    }
    let mut steps = Vec::new();

    while let Some(pos) = rows.iter().position(|r| r.cmp == Cmp::Eq) {
        let eq = rows.swap_remove(pos);
        let var = eq
            .form
            .iter()
            .map(|(v, _)| *v)
            .find(|v| sorts[*v as usize] == Sort::Real)
            .unwrap_or(eq.form[0].0);
        let a = coeff(&eq.form, var).unwrap().clone();
        let mut next = Vec::with_capacity(rows.len());
        for r in rows {
            let row = match coeff(&r.form, var) {
                Some(c) => r.combine(&-(c / &a), &eq),
                None => r,
            };
            if row.form.is_empty() {
                if let Some(cert) = row.contradiction() {
                    return Ok(FmResult::Unsat(unpack(cert)));
                }
                continue;
            }
            next.push(row);
        }
        rows = next;
        steps.push(Step::Subst(var, eq));
    }

    rows = dedup(rows);
    let mut eliminated = 0usize;
    loop {
        let mut occurrences: HashMap<u32, (usize, usize)> = HashMap::new();
        for r in &rows {
            for (v, c) in &r.form {
                let e = occurrences.entry(*v).or_default();
                if c.is_positive() {
                    e.1 += 1;
                } else {
                    e.0 += 1;
                }
            }
        }
        let Some(var) = occurrences
            .iter()
            .min_by_key(|(v, (l, u))| ((l * u) as i64 - (*l + *u) as i64, **v))
            .map(|(v, _)| *v)
        else {
            break;
        };
        eliminated += 1;
        stats.eliminations += 1;
        let (mut lowers, mut uppers, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for r in rows {
            match coeff(&r.form, var) {
                Some(c) if c.is_positive() => uppers.push(r),
                Some(_) => lowers.push(r),
                None => rest.push(r),
            }
        }
        for l in &lowers {
            let a_l = coeff(&l.form, var).unwrap();
            for u in &uppers {
                let a_u = coeff(&u.form, var).unwrap();
                if l.hist.union(&u.hist).count() > eliminated + 1 {
                    continue;
                }
                let row = l.scaled(a_u).combine(&-a_l.clone(), u);
                stats.generated += 1;
                if stats.generated > max_rows {
                    return Err(SolveError::Budget("Fourier-Motzkin rows"));
                }
                if row.form.is_empty() {
                    if let Some(cert) = row.contradiction() {
                        return Ok(FmResult::Unsat(unpack(cert)));
                    }
                    continue;
                }
                let lead = row.form[0].1.abs().recip();
                rest.push(row.scaled(&lead));
            }
        }
        rows = dedup(rest);
        steps.push(Step::Elim(var, lowers, uppers));
    }

    let mut values = vec![Rational::zero(); sorts.len()];
    for step in steps.iter().rev() {
        match step {
            Step::Subst(var, eq) => {
                let a = coeff(&eq.form, *var).unwrap();
                values[*var as usize] = solve_for(eq, *var, &values) / a;
            }
            Step::Elim(var, lowers, uppers) => {
                let bound = |r: &Row| {
                    let a = coeff(&r.form, *var).unwrap();
                    (solve_for(r, *var, &values) / a, r.cmp == Cmp::Lt)
                };
                let lo = lowers.iter().map(bound).reduce(|x, y| tighter(x, y, true));
                let hi = uppers.iter().map(bound).reduce(|x, y| tighter(x, y, false));
                values[*var as usize] = pick(lo, hi, sorts[*var as usize] != Sort::Real);
            }
        }
    }
    Ok(FmResult::Sat(values))
}

/// `rhs − Σ_{w ≠ var} a_w·x_w`.
fn solve_for(r: &Row, var: u32, values: &[Rational]) -> Rational {
    r.form
        .iter()
        .filter(|(w, _)| *w != var)
        .fold(r.rhs.clone(), |acc, (w, a)| acc - a * &values[*w as usize])
}

fn tighter(x: (Rational, bool), y: (Rational, bool), lower: bool) -> (Rational, bool) {
    if x.0 == y.0 {
        return (x.0, x.1 || y.1);
    }
    if (x.0 > y.0) == lower {
        x
    } else {
        y
    }
}

/// A value in the interval: the integer nearest 0 for integral variables
/// when one exists, otherwise the midpoint (or the bound, or the bound ± 1
/// when open, or 0 when unbounded).
fn pick(lo: Option<(Rational, bool)>, hi: Option<(Rational, bool)>, integral: bool) -> Rational {
    let one = Rational::one();
    if integral {
        let lo_i = lo.as_ref().map(|(l, strict)| {
            if *strict || !l.is_integer() {
                l.floor() + &one
            } else {
                l.clone()
            }
        });
        let hi_i = hi.as_ref().map(|(h, strict)| {
            if *strict || !h.is_integer() {
                h.ceil() - &one
            } else {
                h.clone()
            }
        });
        let fits = match (&lo_i, &hi_i) {
            (Some(l), Some(h)) => l <= h,
            _ => true,
        };
        if fits {
            let mut v = Rational::zero();
            if let Some(l) = lo_i {
                v = v.max(l);
            }
            if let Some(h) = hi_i {
                v = v.min(h);
            }
            return v;
        }
    }
    match (lo, hi) {
        (Some((l, _)), Some((h, _))) if l == h => l,
        (Some((l, _)), Some((h, _))) => (l + h) / Rational::from_integer(2.into()),
        (Some((l, false)), None) => l,
        (Some((l, true)), None) => l + one,
        (None, Some((h, false))) => h,
        (None, Some((h, true))) => h - one,
        (None, None) => Rational::zero(),
    }
}

/// Keeps the tightest row per (positively normalized) form.
fn dedup(rows: Vec<Row>) -> Vec<Row> {
    let mut index: HashMap<Sparse, usize> = HashMap::new();
    let mut out: Vec<Row> = Vec::with_capacity(rows.len());
    for r in rows {
        match index.get(&r.form) {
            Some(&i) => {
                let kept = &out[i];
                let better = r.rhs < kept.rhs || (r.rhs == kept.rhs && r.cmp == Cmp::Lt && kept.cmp == Cmp::Le);
                if better {
                    out[i] = r;
                }
            }
            None => {
                index.insert(r.form.clone(), out.len());
                out.push(r);
            }
        }
    }
    out
}

fn unpack(cert: Sparse) -> Vec<(usize, Rational)> {
    cert.into_iter().map(|(i, q)| (i as usize, q)).collect()
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

    fn run(cs: &[Constraint], sorts: &[Sort]) -> FmResult {
        let refs: Vec<(usize, &Constraint)> = cs.iter().enumerate().collect();
        decide(&refs, sorts, 10_000, &mut FmStats::default()).unwrap()
    }

    #[test]
    fn one_step_refutation() {
        let cs = [
            c(&[(0, 1), (1, 1)], Cmp::Le, int(1)),
            c(&[(0, -1)], Cmp::Le, ratio(-6, 10)),
            c(&[(1, -1)], Cmp::Le, ratio(-6, 10)),
        ];
        match run(&cs, &[Sort::Real, Sort::Real]) {
            FmResult::Unsat(cert) => {
                assert_eq!(cert.len(), 3);
                assert!(cert.iter().all(|(_, q)| q.is_positive()));
            }
            FmResult::Sat(_) => panic!("expected unsat"),
        }
    }

    #[test]
    fn strict_interval_midpoint() {
        let cs = [c(&[(0, 1)], Cmp::Lt, int(1)), c(&[(0, -1)], Cmp::Lt, int(0))];
        match run(&cs, &[Sort::Real]) {
            FmResult::Sat(v) => assert_eq!(v[0], ratio(1, 2)),
            FmResult::Unsat(_) => panic!(),
        }
        let cs = [c(&[(0, 1)], Cmp::Lt, int(0)), c(&[(0, -1)], Cmp::Lt, int(0))];
        assert!(matches!(run(&cs, &[Sort::Real]), FmResult::Unsat(_)));
    }

    #[test]
    fn equality_substitution() {
        // x = y + 1, y ≥ 2, x ≤ 2
        let cs = [
            c(&[(0, 1), (1, -1)], Cmp::Eq, int(1)),
            c(&[(1, -1)], Cmp::Le, int(-2)),
            c(&[(0, 1)], Cmp::Le, int(2)),
        ];
        assert!(matches!(run(&cs, &[Sort::Real, Sort::Real]), FmResult::Unsat(_)));
        let cs = [
            c(&[(0, 1), (1, -1)], Cmp::Eq, int(1)),
            c(&[(1, -1)], Cmp::Le, int(-2)),
            c(&[(0, 1)], Cmp::Le, int(5)),
        ];
        match run(&cs, &[Sort::Real, Sort::Real]) {
            FmResult::Sat(v) => {
                assert!(cs.iter().all(|k| k.eval(&v)), "{v:?}");
            }
            FmResult::Unsat(_) => panic!(),
        }
    }

    #[test]
    fn integers_prefer_zero() {
        let cs = [c(&[(0, 1)], Cmp::Le, int(10)), c(&[(0, -1)], Cmp::Le, int(3))];
        match run(&cs, &[Sort::Int]) {
            FmResult::Sat(v) => assert_eq!(v[0], int(0)),
            FmResult::Unsat(_) => panic!(),
        }
    }
}
