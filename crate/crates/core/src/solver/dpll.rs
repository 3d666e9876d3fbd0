//! Depth-first case splitting over the disjunctions of an NNF formula.
//!
//! Atoms reached through conjunctions are asserted as soon as they are seen;
//! disjunctions queue up and are split in syntactic order, alternatives tried
//! left to right, disjunctions opened by a chosen alternative first. After
//! every step the accumulated constraints go to the theory check. A refuted
//! branch that does not depend on the current decision refutes its parent
//! as well, so the remaining alternatives are skipped.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use num_traits::One;

use super::fm::{self, FmResult, FmStats};
use super::linear::{normalize, Cmp, Constraint, Normal, Origin, VarTable};
use super::proof::{Premise, ProofNode, Refutation};
use super::simplex::Simplex;
use super::{
    verify_witness, Conflict, SolveError, SolveOutcome, SolverConfig, Stats, Theory, Verdict,
    Witness,
};
use crate::formula::{Assignment, Formula, Sort, Term};
use crate::rational::Rational;

#[derive(Debug)]
enum Node {
    True,
    False,
    Lit(usize),
    And(Vec<Node>),
    Or(Vec<Node>),
}

enum Res {
    Sat(Vec<Rational>),
    Unsat(ProofNode, BTreeSet<u32>),
}

struct Search<'c> {
    cfg: &'c SolverConfig,
    table: VarTable,
    premises: Vec<Premise>,
    interned: HashMap<Constraint, usize>,
    simplex: Simplex,
    /// Asserted constraint ids with their decision level (Fourier-Motzkin
    /// mode re-decides this list at every check).
    active: Vec<(usize, u32)>,
    fm_model: Vec<Rational>,
    fm_stats: FmStats,
    level: u32,
    stats: Stats,
}

pub fn solve(f: &Formula, cfg: &SolverConfig) -> Result<SolveOutcome, SolveError> {
    let table = VarTable::new(f.sorts().iter().map(|(v, s)| (v.clone(), *s)));
    let n = table.len();
    let mut s = Search {
        cfg,
        table,
        premises: Vec::new(),
        interned: HashMap::new(),
        simplex: Simplex::new(n, cfg.max_pivots),
        active: Vec::new(),
        fm_model: vec![Rational::default(); n],
        fm_stats: FmStats::default(),
        level: 0,
        stats: Stats::default(),
    };
    let root = s.build(&f.term().nnf());
    let result = s.run(&root);
    s.stats.pivots = s.simplex.pivots;
    s.stats.fm_eliminations = s.fm_stats.eliminations;
    let verdict = match result? {
        Res::Sat(values) => {
            let w: Assignment = s.table.vars.iter().cloned().zip(values).collect();
            verify_witness(f, &w)?;
            Verdict::Sat(Witness(w))
        }
        Res::Unsat(root, _) => Verdict::Unsat(Refutation {
            vars: s
                .table
                .vars
                .iter()
                .cloned()
                .zip(s.table.sorts.iter().copied())
                .collect(),
            premises: s.premises,
            root,
        }),
    };
    Ok(SolveOutcome {
        verdict,
        stats: s.stats,
    })
}

impl<'c> Search<'c> {
    fn intern(&mut self, c: Constraint, origin: Origin) -> usize {
        if let Some(&i) = self.interned.get(&c) {
            return i;
        }
        let i = self.premises.len();
        self.interned.insert(c.clone(), i);
        self.premises.push(Premise {
            constraint: c,
            origin,
        });
        i
    }

    fn fresh(&mut self, c: Constraint, origin: Origin) -> usize {
        self.premises.push(Premise {
            constraint: c,
            origin,
        });
        self.premises.len() - 1
    }

    fn build(&mut self, t: &Term) -> Node {
        match t {
            Term::Const(true) => Node::True,
            Term::Const(false) => Node::False,
            Term::Atom(a) => match normalize(a, &self.table) {
                Normal::Const(true) => Node::True,
                Normal::Const(false) => Node::False,
                Normal::One(c) => Node::Lit(self.intern(c, Origin::Atom(a.clone()))),
                Normal::Either(x, y) => Node::Or(vec![
                    Node::Lit(self.intern(x, Origin::Atom(a.clone()))),
                    Node::Lit(self.intern(y, Origin::Atom(a.clone()))),
                ]),
            },
            Term::Not(_) => unreachable!("input is in negation normal form"),
            Term::And(ts) => {
                let mut kids = Vec::with_capacity(ts.len());
                for t in ts {
                    match self.build(t) {
                        Node::True => {}
                        Node::False => return Node::False,
                        k => kids.push(k),
                    }
                }
                if kids.is_empty() {
                    Node::True
                } else {
                    Node::And(kids)
                }
            }
            Term::Or(ts) => {
                let mut kids = Vec::with_capacity(ts.len());
                for t in ts {
                    match self.build(t) {
                        Node::False => {}
                        Node::True => return Node::True,
                        k => kids.push(k),
                    }
                }
                match kids.len() {
                    0 => Node::False,
                    1 => kids.pop().unwrap(),
                    _ => Node::Or(kids),
                }
            }
        }
    }

    fn run(&mut self, root: &Node) -> Result<Res, SolveError> {
        for i in 0..self.table.len() {
            if self.table.sorts[i] != Sort::Bool {
                continue;
            }
            let v = self.table.vars[i].clone();
            let one = Rational::one();
            for (coef, rhs) in [(one.clone(), one.clone()), (-one, Rational::default())] {
                let c = Constraint {
                    form: vec![(i as u32, coef)],
                    cmp: Cmp::Le,
                    rhs,
                };
                let id = self.intern(c, Origin::BoolBound(v.clone()));
                if let Some(conflict) = self.assert(id) {
                    return Ok(self.refuted(conflict));
                }
            }
        }
        let mut pending = Vec::new();
        if let Some(r) = self.absorb(root, &mut pending) {
            return Ok(r);
        }
        self.search(pending)
    }

    fn refuted(&mut self, c: Conflict) -> Res {
        self.stats.conflicts += 1;
        Res::Unsat(ProofNode::Farkas(c.farkas), c.levels)
    }

    fn assert(&mut self, cid: usize) -> Option<Conflict> {
        match self.cfg.theory {
            Theory::Simplex => {
                let c = self.premises[cid].constraint.clone();
                self.simplex.assert(cid, &c, self.level).err()
            }
            Theory::FourierMotzkin => {
                self.active.push((cid, self.level));
                None
            }
        }
    }

    fn check(&mut self) -> Result<Option<Conflict>, SolveError> {
        match self.cfg.theory {
            Theory::Simplex => Ok(self.simplex.check()?.err()),
            Theory::FourierMotzkin => {
                let refs: Vec<(usize, &Constraint)> = self
                    .active
                    .iter()
                    .map(|(i, _)| (*i, &self.premises[*i].constraint))
                    .collect();
                match fm::decide(
                    &refs,
                    &self.table.sorts,
                    self.cfg.max_fm_rows,
                    &mut self.fm_stats,
                )? {
                    FmResult::Sat(values) => {
                        self.fm_model = values;
                        Ok(None)
                    }
                    FmResult::Unsat(farkas) => {
                        let level_of: HashMap<usize, u32> = self.active.iter().copied().collect();
                        let levels = farkas.iter().map(|(i, _)| level_of[i]).collect();
                        Ok(Some(Conflict { farkas, levels }.finish()))
                    }
                }
            }
        }
    }

    fn model(&self) -> Vec<Rational> {
        match self.cfg.theory {
            Theory::Simplex => self.simplex.model(),
            Theory::FourierMotzkin => self.fm_model.clone(),
        }
    }

    fn mark(&self) -> (usize, usize) {
        (self.simplex.mark(), self.active.len())
    }

    fn backtrack(&mut self, (m, a): (usize, usize)) {
        self.simplex.backtrack(m);
        self.active.truncate(a);
    }

    /// Asserts the atoms of `node` reachable through conjunctions and queues
    /// its disjunctions.
    fn absorb<'n>(&mut self, node: &'n Node, pending: &mut Vec<&'n Node>) -> Option<Res> {
        match node {
            Node::True => None,
            Node::False => Some(Res::Unsat(ProofNode::Trivial, BTreeSet::from([self.level]))),
            Node::Lit(c) => self.assert(*c).map(|c| self.refuted(c)),
            Node::And(kids) => kids.iter().find_map(|k| self.absorb(k, pending)),
            Node::Or(_) => {
                pending.push(node);
                None
            }
        }
    }

    fn tick(&mut self) -> Result<(), SolveError> {
        self.stats.branches += 1;
        if self.stats.branches > self.cfg.max_branches {
            return Err(SolveError::Budget("branches"));
        }
        if self.stats.branches.is_multiple_of(64) {
            if let Some(d) = self.cfg.deadline {
                if Instant::now() >= d {
                    return Err(SolveError::Timeout);
                }
            }
        }
        Ok(())
    }

    fn search(&mut self, pending: Vec<&Node>) -> Result<Res, SolveError> {
        if let Some(c) = self.check()? {
            return Ok(self.refuted(c));
        }
        let Some((first, rest)) = pending.split_first() else {
            return self.leaf(0);
        };
        let Node::Or(alternatives) = first else {
            unreachable!("only disjunctions are queued")
        };
        self.level += 1;
        let me = self.level;
        let mut proofs = Vec::new();
        let mut deps = BTreeSet::new();
        for alt in alternatives {
            self.tick()?;
            let mark = self.mark();
            let mut next = Vec::new();
            let r = match self.absorb(alt, &mut next) {
                Some(r) => r,
                None => {
                    next.extend_from_slice(rest);
                    self.search(next)?
                }
            };
            self.backtrack(mark);
            self.level = me;
            match r {
                Res::Sat(m) => {
                    self.level = me - 1;
                    return Ok(Res::Sat(m));
                }
                Res::Unsat(p, d) if !d.contains(&me) => {
                    self.level = me - 1;
                    return Ok(Res::Unsat(p, d));
                }
                Res::Unsat(p, mut d) => {
                    d.remove(&me);
                    deps.extend(d);
                    proofs.push(p);
                }
            }
        }
        self.level = me - 1;
        Ok(Res::Unsat(ProofNode::Split(proofs), deps))
    }

    /// All disjunctions decided and the relaxation feasible: branch on the
    /// first integral variable with a fractional value, if any.
    fn leaf(&mut self, depth: u32) -> Result<Res, SolveError> {
        let model = self.model();
        let fractional = (0..self.table.len())
            .find(|&i| self.table.is_integral(i as u32) && !model[i].is_integer());
        let Some(i) = fractional else {
            return Ok(Res::Sat(model));
        };
        if depth >= self.cfg.max_cut_depth {
            return Err(SolveError::Budget("branch-and-bound depth"));
        }
        let k = model[i].floor();
        let var = self.table.vars[i].clone();
        let one = Rational::one();
        let low = self.fresh(
            Constraint {
                form: vec![(i as u32, one.clone())],
                cmp: Cmp::Le,
                rhs: k.clone(),
            },
            Origin::Branch(var.clone()),
        );
        let high = self.fresh(
            Constraint {
                form: vec![(i as u32, -one.clone())],
                cmp: Cmp::Le,
                rhs: -(k + one),
            },
            Origin::Branch(var),
        );
        self.level += 1;
        let me = self.level;
        let mut proofs = Vec::new();
        let mut deps = BTreeSet::new();
        for cid in [low, high] {
            self.tick()?;
            self.stats.cuts += 1;
            let mark = self.mark();
            let r = match self.assert(cid) {
                Some(c) => self.refuted(c),
                None => match self.check()? {
                    Some(c) => self.refuted(c),
                    None => self.leaf(depth + 1)?,
                },
            };
            self.backtrack(mark);
            self.level = me;
            match r {
                Res::Sat(m) => {
                    self.level = me - 1;
                    return Ok(Res::Sat(m));
                }
                Res::Unsat(p, d) if !d.contains(&me) => {
                    self.level = me - 1;
                    return Ok(Res::Unsat(p, d));
                }
                Res::Unsat(p, mut d) => {
                    d.remove(&me);
                    deps.extend(d);
                    proofs.push(p);
                }
            }
        }
        self.level = me - 1;
        let above = proofs.pop().unwrap();
        let below = proofs.pop().unwrap();
        Ok(Res::Unsat(
            ProofNode::Cut {
                low,
                high,
                below: Box::new(below),
                above: Box::new(above),
            },
            deps,
        ))
    }
}
