//! Counterfactual explanations by satisfiability.
//!
//! Models (trees, forests, logistic regressions, ReLU networks) are lowered
//! into a small imperative language ([`program`]), compiled into linear
//! formulae ([`compile`]), and searched for nearby inputs with a flipped
//! prediction ([`search`]) by bisecting a distance threshold over a
//! satisfiability oracle ([`solver`]).

pub mod compile;
pub mod constraints;
pub mod distance;
pub mod formula;
pub mod harness;
pub mod model;
pub mod program;
pub mod rational;
pub mod schema;
pub mod search;
pub mod solver;

pub use formula::{Assignment, Formula, LinExpr, Rel, Sort, Term, Var};
pub use rational::Rational;
