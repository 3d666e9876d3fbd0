//! Bisection over the distance threshold with the satisfiability oracle,
//! and the diverse-generation loop built on it.

use std::time::{Duration, Instant};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::compile::{compile, counterfactual_formula, CompileError};
use crate::constraints::{
    diversity_formula, plausibility_formula, ConstraintError, ConstraintSpec, DiversityHook,
};
use crate::distance::{
    compiled_distance_formula, distance_formula, distance_value, DistanceConfig, DistanceError,
};
use crate::formula::{Assignment, Formula, FormulaError};
use crate::model::ModelSpec;
use crate::program::Program;
use crate::rational::{int, Rational};
use crate::schema::{FeatureSchema, SchemaError};
use crate::solver::{Backend, Refutation, SolveError, SolverConfig, Stats, Verdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("no counterfactual satisfies the constraints within distance 1 ({calls} oracle calls)")]
    OverConstrained { calls: usize },
    #[error("oracle budget exhausted: {0}")]
    Budget(SolveError),
    #[error("oracle failed: {0}")]
    Oracle(SolveError),
    #[error("accuracy must lie strictly between 0 and 1")]
    Epsilon,
    #[error("counterfactual does not flip the prediction")]
    NotFlipped,
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

impl SearchError {
    pub fn is_budget(&self) -> bool {
        matches!(self, SearchError::Budget(_))
    }
}

impl From<SolveError> for SearchError {
    fn from(e: SolveError) -> Self {
        if e.is_budget() {
            SearchError::Budget(e)
        } else {
            SearchError::Oracle(e)
        }
    }
}

/// How the distance bound reaches the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceRoute {
    /// Auxiliary-variable encoding, no case split per numeric feature.
    #[default]
    Auxiliary,
    /// Characteristic formula of the compiled distance program.
    Compiled,
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    epsilon: Rational,
    pub backend: Backend,
    pub route: DistanceRoute,
    /// Wall-clock budget per search, shared by all its oracle calls.
    pub time_budget: Option<Duration>,
    /// When bisection finds nothing, ask once more at distance exactly 1
    /// before declaring the problem over-constrained.
    pub boundary_probe: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            epsilon: Rational::new(1.into(), 1000.into()),
            backend: Backend::default(),
            route: DistanceRoute::default(),
            time_budget: None,
            boundary_probe: true,
        }
    }
}

impl SearchConfig {
    pub fn new(epsilon: Rational) -> Result<Self, SearchError> {
        Self::default().with_epsilon(epsilon)
    }

    pub fn with_epsilon(mut self, epsilon: Rational) -> Result<Self, SearchError> {
        if epsilon <= Rational::zero() || epsilon >= Rational::one() {
            return Err(SearchError::Epsilon);
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn epsilon(&self) -> &Rational {
        &self.epsilon
    }

    /// `⌈log₂(1/ε)⌉`, the exact number of bisection steps.
    pub fn bisection_steps(&self) -> u32 {
        let mut width = Rational::one();
        let mut n = 0;
        while width > self.epsilon {
            width /= int(2);
            n += 1;
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCall {
    pub delta: Rational,
    pub sat: bool,
    /// The call at distance 1 made after an all-unsat bisection.
    pub probe: bool,
    pub stats: Stats,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Raw values of the counterfactual.
    pub counterfactual: Vec<Rational>,
    /// Its encoding, as found by the oracle.
    pub encoded: Assignment,
    pub distance: Rational,
    pub delta_min: Rational,
    pub delta_max: Rational,
    pub calls: Vec<OracleCall>,
    /// Refutation from the last unsat call, i.e. at `delta_min`.
    pub certificate: Option<Refutation>,
    pub wall: Duration,
}

impl SearchResult {
    /// Oracle calls made by the bisection loop proper.
    pub fn bisection_calls(&self) -> usize {
        self.calls.iter().filter(|c| !c.probe).count()
    }

    pub fn probed(&self) -> bool {
        self.calls.iter().any(|c| c.probe)
    }
}

/// One counterfactual question: everything except the threshold.
pub struct Query<'a> {
    pub schema: &'a FeatureSchema,
    pub x_hat: &'a [Rational],
    pub distance: &'a DistanceConfig,
    /// `φ_CF`: the model's formula with the output fixed to `1 − ŷ`.
    pub phi_cf: &'a Formula,
    /// `φ_g`: plausibility, actionability and diversity.
    pub phi_g: &'a Formula,
}

impl Query<'_> {
    fn phi_d(&self, route: DistanceRoute, delta: &Rational) -> Result<Formula, DistanceError> {
        match route {
            DistanceRoute::Auxiliary => distance_formula(self.distance, self.schema, self.x_hat, delta),
            DistanceRoute::Compiled => {
                compiled_distance_formula(self.distance, self.schema, self.x_hat, delta)
            }
        }
    }
}

/// Bisection on `δ ∈ [0, 1]`: an unsat call raises `δ_min`, a sat call
/// lowers `δ_max` and replaces the current counterfactual.
pub fn nearest_counterfactual(q: &Query, cfg: &SearchConfig) -> Result<SearchResult, SearchError> {
    let start = Instant::now();
    let deadline = cfg.time_budget.map(|t| start + t);
    let backend = match (&cfg.backend, deadline) {
        (Backend::Internal(c), Some(d)) => Backend::Internal(SolverConfig {
            deadline: Some(d),
            ..c.clone()
        }),
        (b, _) => b.clone(),
    };
    let mut lo = Rational::zero();
    let mut hi = Rational::one();
    let mut best: Option<Assignment> = None;
    let mut calls = Vec::new();
    let mut certificate = None;
    let mut ask = |delta: &Rational, probe: bool| -> Result<Option<Assignment>, SearchError> {
        let psi = Formula::and([q.phi_cf.clone(), q.phi_d(cfg.route, delta)?, q.phi_g.clone()])?;
        let out = backend.solve(&psi)?;
        calls.push(OracleCall {
            delta: delta.clone(),
            sat: out.is_sat(),
            probe,
            stats: out.stats,
        });
        Ok(match out.verdict {
            Verdict::Sat(w) => Some(w.0),
            Verdict::Unsat(r) => {
                certificate = Some(r);
                None
            }
        })
    };
    while &hi - &lo > cfg.epsilon {
        let delta = (&lo + &hi) / int(2);
        match ask(&delta, false)? {
            Some(w) => {
                best = Some(w);
                hi = delta;
            }
            None => lo = delta,
        }
    }
    if best.is_none() && cfg.boundary_probe {
        best = ask(&Rational::one(), true)?;
    }
    let Some(w) = best else {
        return Err(SearchError::OverConstrained { calls: calls.len() });
    };
    let counterfactual = q.schema.decode(&w)?;
    let encoded = q
        .schema
        .encoded_vars()
        .into_iter()
        .map(|(v, _)| {
            let value = w[&v].clone();
            (v, value)
        })
        .collect();
    let distance = distance_value(q.distance, q.schema, &counterfactual, q.x_hat);
    Ok(SearchResult {
        counterfactual,
        encoded,
        distance,
        delta_min: lo,
        delta_max: hi,
        calls,
        certificate,
        wall: start.elapsed(),
    })
}

/// Results of the diverse loop; `stopped` says why it ended early.
#[derive(Debug, Clone)]
pub struct DiverseOutcome {
    pub results: Vec<SearchResult>,
    pub stopped: Option<SearchError>,
}

/// Up to `k` runs, each constrained by `hook` to differ from the earlier
/// counterfactuals.
pub fn diverse_counterfactuals(
    q: &Query,
    k: usize,
    hook: &DiversityHook,
    cfg: &SearchConfig,
) -> DiverseOutcome {
    let mut results: Vec<SearchResult> = Vec::new();
    for _ in 0..k {
        let previous: Vec<Vec<Rational>> = results.iter().map(|r| r.counterfactual.clone()).collect();
        let phi_v = hook(q.schema, &previous);
        let phi_g = match Formula::and([q.phi_g.clone(), phi_v]) {
            Ok(f) => f,
            Err(e) => {
                return DiverseOutcome {
                    results,
                    stopped: Some(e.into()),
                }
            }
        };
        let run = Query {
            phi_g: &phi_g,
            ..*q
        };
        match nearest_counterfactual(&run, cfg) {
            Ok(r) => results.push(r),
            Err(e) => {
                return DiverseOutcome {
                    results,
                    stopped: Some(e),
                }
            }
        }
    }
    DiverseOutcome {
        results,
        stopped: None,
    }
}

/// A model with its single-assignment program and characteristic formula,
/// shared read-only across searches.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub spec: ModelSpec,
    pub program: Program,
    /// `φ_f`, with the output variable free.
    pub formula: Formula,
}

impl CompiledModel {
    pub fn new(spec: ModelSpec) -> Result<Self, CompileError> {
        let (program, formula) = compile(&spec.build_program())?;
        Ok(CompiledModel {
            spec,
            program,
            formula,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.spec.schema
    }

    pub fn predict(&self, raw: &[Rational]) -> Result<u8, SchemaError> {
        Ok(self.spec.predict(&self.spec.schema.encode(raw)?))
    }
}

/// Model plus the knobs of a counterfactual question.
#[derive(Clone)]
pub struct Explainer<'m> {
    pub model: &'m CompiledModel,
    pub distance: DistanceConfig,
    pub constraints: ConstraintSpec,
    pub search: SearchConfig,
}

impl<'m> Explainer<'m> {
    pub fn new(model: &'m CompiledModel, distance: DistanceConfig) -> Self {
        Explainer {
            model,
            distance,
            constraints: ConstraintSpec::none(),
            search: SearchConfig::default(),
        }
    }

    fn prepare(&self, x_hat: &[Rational]) -> Result<(Formula, Formula), SearchError> {
        let schema = self.model.schema();
        self.constraints.validate(schema)?;
        let y_hat = self.model.predict(x_hat)?;
        let phi_cf = counterfactual_formula(&self.model.formula, y_hat);
        let phi_g = plausibility_formula(schema, x_hat, &self.constraints);
        Ok((phi_cf, phi_g))
    }

    fn check_flip(&self, x_hat: &[Rational], r: &SearchResult) -> Result<(), SearchError> {
        let before = self.model.predict(x_hat)?;
        if self.model.spec.predict(&r.encoded) == before {
            return Err(SearchError::NotFlipped);
        }
        Ok(())
    }

    pub fn nearest(&self, x_hat: &[Rational]) -> Result<SearchResult, SearchError> {
        let (phi_cf, phi_g) = self.prepare(x_hat)?;
        let q = Query {
            schema: self.model.schema(),
            x_hat,
            distance: &self.distance,
            phi_cf: &phi_cf,
            phi_g: &phi_g,
        };
        let r = nearest_counterfactual(&q, &self.search)?;
        self.check_flip(x_hat, &r)?;
        Ok(r)
    }

    /// `k` counterfactuals, each differing from the earlier ones in at
    /// least one raw feature (or per `hook` when given).
    pub fn diverse(&self, x_hat: &[Rational], k: usize, hook: Option<&DiversityHook>) -> DiverseOutcome {
        let (phi_cf, phi_g) = match self.prepare(x_hat) {
            Ok(p) => p,
            Err(e) => {
                return DiverseOutcome {
                    results: Vec::new(),
                    stopped: Some(e),
                }
            }
        };
        let q = Query {
            schema: self.model.schema(),
            x_hat,
            distance: &self.distance,
            phi_cf: &phi_cf,
            phi_g: &phi_g,
        };
        let default_hook: DiversityHook = std::sync::Arc::new(diversity_formula);
        let mut out = diverse_counterfactuals(&q, k, hook.unwrap_or(&default_hook), &self.search);
        if let Some(bad) = out.results.iter().position(|r| self.check_flip(x_hat, r).is_err()) {
            out.results.truncate(bad);
            out.stopped = Some(SearchError::NotFlipped);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::Rel;
    use crate::model::{leaf, split, ModelKind, Tree};
    use crate::rational::ratio;
    use crate::schema::{Actionability, FeatureSpec};

    fn fig2() -> CompiledModel {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::binary("x1"),
            FeatureSpec::binary("x2"),
            FeatureSpec::real("x3", int(-10), int(10)),
        ])
        .unwrap();
        let tree = Tree {
            nodes: vec![
                split("x1", Rel::Eq, int(1), 1, 2),
                split("x3", Rel::Gt, int(0), 3, 4),
                split("x2", Rel::Eq, int(1), 5, 6),
                leaf(0),
                leaf(1),
                leaf(0),
                leaf(1),
            ],
        };
        CompiledModel::new(ModelSpec::new(schema, ModelKind::DecisionTree(tree)).unwrap()).unwrap()
    }

    #[test]
    fn call_counts() {
        let steps = |e: Rational| SearchConfig::new(e).unwrap().bisection_steps();
        assert_eq!(steps(ratio(1, 10)), 4);
        assert_eq!(steps(ratio(1, 1000)), 10);
        assert_eq!(steps(ratio(1, 2)), 1);
        assert_eq!(steps(ratio(1, 1024)), 10);
        assert!(SearchConfig::new(int(1)).is_err());
        assert!(SearchConfig::new(int(0)).is_err());
    }

    #[test]
    fn fig2_l0() {
        let m = fig2();
        let x_hat = [int(1), int(0), ratio(1, 2)];
        assert_eq!(m.predict(&x_hat).unwrap(), 0);
        let mut e = Explainer::new(&m, DistanceConfig::l0());
        e.search = SearchConfig::new(ratio(1, 100)).unwrap();
        let r = e.nearest(&x_hat).unwrap();
        let third = ratio(1, 3);
        assert!(r.delta_min < third && third <= r.delta_max, "{} {}", r.delta_min, r.delta_max);
        assert!(&r.delta_max - &r.delta_min <= ratio(1, 100));
        assert_eq!(r.distance, third);
        assert_eq!(m.predict(&r.counterfactual).unwrap(), 1);
        assert_eq!(r.bisection_calls(), 7);
        r.certificate.as_ref().unwrap().replay().unwrap();
    }

    #[test]
    fn four_calls_at_a_tenth() {
        let m = fig2();
        let mut e = Explainer::new(&m, DistanceConfig::l1());
        e.search = SearchConfig::new(ratio(1, 10)).unwrap();
        let r = e.nearest(&[int(1), int(0), ratio(1, 2)]).unwrap();
        assert_eq!(r.calls.len(), 4);
    }

    #[test]
    fn all_immutable_is_over_constrained() {
        let m = fig2();
        let mut e = Explainer::new(&m, DistanceConfig::l1());
        e.constraints = ConstraintSpec::immutable(&["x1", "x2", "x3"]);
        assert_eq!(
            e.nearest(&[int(1), int(0), ratio(1, 2)]).unwrap_err(),
            SearchError::OverConstrained { calls: 11 }
        );
    }

    #[test]
    fn single_binary_feature_diversity() {
        let schema = FeatureSchema::new(vec![FeatureSpec::binary("b")]).unwrap();
        let tree = Tree {
            nodes: vec![split("b", Rel::Eq, int(1), 1, 2), leaf(1), leaf(0)],
        };
        let m = CompiledModel::new(ModelSpec::new(schema, ModelKind::DecisionTree(tree)).unwrap()).unwrap();
        let e = Explainer::new(&m, DistanceConfig::l0());
        let one = e.diverse(&[int(0)], 1, None);
        assert_eq!(one.results.len(), 1);
        assert_eq!(one.results[0].counterfactual, vec![int(1)]);
        assert!(one.results[0].probed());
        let two = e.diverse(&[int(0)], 2, None);
        assert_eq!(two.results.len(), 1);
        assert_eq!(two.stopped, Some(SearchError::OverConstrained { calls: 11 }));
    }

    #[test]
    fn diversity_yields_distinct_results() {
        let m = fig2();
        let mut e = Explainer::new(&m, DistanceConfig::l1());
        e.constraints.set_actionability("x3", Actionability::Free);
        let out = e.diverse(&[int(1), int(0), ratio(1, 2)], 3, None);
        assert_eq!(out.results.len(), 3, "{:?}", out.stopped);
        for i in 0..3 {
            for j in 0..i {
                assert_ne!(out.results[i].counterfactual, out.results[j].counterfactual);
            }
        }
    }

    #[test]
    fn compiled_distance_route_agrees() {
        let m = fig2();
        let x_hat = [int(1), int(0), ratio(1, 2)];
        let mut e = Explainer::new(&m, DistanceConfig::preset(crate::distance::NormPreset::Combined));
        e.search = SearchConfig::new(ratio(1, 100)).unwrap();
        let a = e.nearest(&x_hat).unwrap();
        e.search.route = DistanceRoute::Compiled;
        let b = e.nearest(&x_hat).unwrap();
        assert_eq!((a.delta_min, a.delta_max), (b.delta_min, b.delta_max));
    }
}
