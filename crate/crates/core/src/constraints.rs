//! Plausibility, actionability and diversity constraints.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::Zero;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::formula::{Formula, FormulaError, LinExpr, Rel, Sort, SortMap, Term, Var};
use crate::rational::{format_rational, int, Rational};
use crate::schema::{
    coordinate, json_number, Actionability, Encoding, FeatureKind, FeatureSchema, FeatureSpec,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("constraint refers to unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{feature}`: {reason}")]
    Invalid { feature: String, reason: String },
    #[error("malformed constraint document: {0}")]
    Document(String),
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureOverride {
    pub actionability: Option<Actionability>,
    pub lo: Option<Rational>,
    pub hi: Option<Rational>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DiversityMode {
    #[default]
    None,
    /// Each new counterfactual differs from every earlier one in at least
    /// one raw feature.
    L0AtLeastOne,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSpec {
    pub overrides: BTreeMap<String, FeatureOverride>,
    pub diversity: DiversityMode,
    /// Number of counterfactuals requested when diversity is on.
    pub count: usize,
}

impl ConstraintSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn immutable(features: &[&str]) -> Self {
        let mut spec = Self::default();
        for f in features {
            spec.set_actionability(f, Actionability::Immutable);
        }
        spec
    }

    pub fn set_actionability(&mut self, feature: &str, a: Actionability) {
        self.overrides.entry(feature.to_string()).or_default().actionability = Some(a);
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), ConstraintError> {
        for (name, o) in &self.overrides {
            let j = schema
                .index_of(name)
                .ok_or_else(|| ConstraintError::UnknownFeature(name.clone()))?;
            let f = schema.feature(j);
            let invalid = |reason: &str| ConstraintError::Invalid {
                feature: name.clone(),
                reason: reason.to_string(),
            };
            if o.actionability == Some(Actionability::NonDecreasing)
                && matches!(f.kind, FeatureKind::Categorical { .. })
            {
                return Err(invalid("categorical features cannot be non-decreasing"));
            }
            let (lo, hi) = self.range(j, schema);
            if lo > hi {
                return Err(invalid("range override has lo > hi"));
            }
        }
        Ok(())
    }

    pub fn actionability(&self, j: usize, schema: &FeatureSchema) -> Actionability {
        let f = schema.feature(j);
        if f.is_constant() {
            return Actionability::Immutable;
        }
        self.overrides
            .get(&f.name)
            .and_then(|o| o.actionability)
            .unwrap_or(f.actionability)
    }

    pub fn range(&self, j: usize, schema: &FeatureSchema) -> (Rational, Rational) {
        let f = schema.feature(j);
        let o = self.overrides.get(&f.name);
        (
            o.and_then(|o| o.lo.clone()).unwrap_or_else(|| f.lo.clone()),
            o.and_then(|o| o.hi.clone()).unwrap_or_else(|| f.hi.clone()),
        )
    }

    /// Parses the constraint file format: an object mapping feature names
    /// to `{actionability, lo, hi}`, plus an optional
    /// `"diversity": {"mode": "none" | "l0-at-least-1", "count": k}`.
    pub fn parse(text: &str, schema: &FeatureSchema) -> Result<Self, ConstraintError> {
        let doc: Value =
            serde_json::from_str(text).map_err(|e| ConstraintError::Document(e.to_string()))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| ConstraintError::Document("top level must be an object".into()))?;
        let mut spec = ConstraintSpec::default();
        for (key, value) in obj {
            if key == "diversity" {
                let mode = value.get("mode").and_then(Value::as_str).unwrap_or("none");
                spec.diversity = match mode {
                    "none" => DiversityMode::None,
                    "l0-at-least-1" => DiversityMode::L0AtLeastOne,
                    other => {
                        return Err(ConstraintError::Document(format!(
                            "unknown diversity mode `{other}`"
                        )))
                    }
                };
                spec.count = match value.get("count") {
                    None => 1,
                    Some(c) => c.as_u64().filter(|c| *c >= 1).ok_or_else(|| {
                        ConstraintError::Document("diversity count must be a positive integer".into())
                    })? as usize,
                };
                continue;
            }
            let entry = value.as_object().ok_or_else(|| {
                ConstraintError::Document(format!("entry for `{key}` must be an object"))
            })?;
            let mut o = FeatureOverride::default();
            for (field, v) in entry {
                let bad = |e: String| ConstraintError::Invalid {
                    feature: key.clone(),
                    reason: e,
                };
                match field.as_str() {
                    "actionability" => {
                        o.actionability = Some(
                            serde_json::from_value(v.clone())
                                .map_err(|_| bad(format!("unknown actionability {v}")))?,
                        )
                    }
                    "lo" => o.lo = Some(json_number(v).map_err(bad)?),
                    "hi" => o.hi = Some(json_number(v).map_err(bad)?),
                    other => return Err(bad(format!("unknown field `{other}`"))),
                }
            }
            spec.overrides.insert(key.clone(), o);
        }
        spec.validate(schema)?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        for (name, o) in &self.overrides {
            let mut e = Map::new();
            if let Some(a) = o.actionability {
                e.insert("actionability".into(), serde_json::to_value(a).unwrap());
            }
            if let Some(lo) = &o.lo {
                e.insert("lo".into(), Value::from(format_rational(lo)));
            }
            if let Some(hi) = &o.hi {
                e.insert("hi".into(), Value::from(format_rational(hi)));
            }
            obj.insert(name.clone(), Value::Object(e));
        }
        if self.diversity != DiversityMode::None {
            obj.insert(
                "diversity".into(),
                serde_json::json!({ "mode": "l0-at-least-1", "count": self.count }),
            );
        }
        Value::Object(obj)
    }
}

fn schema_sorts(schema: &FeatureSchema) -> SortMap {
    schema.encoded_vars().into_iter().collect()
}

fn konst(r: &Rational) -> LinExpr {
    LinExpr::constant(r.clone())
}

/// `raw_j = value`, stated on the encoding directly where that is simpler.
fn raw_equals(f: &FeatureSpec, value: &Rational) -> Term {
    match (&f.kind, f.encoding) {
        (FeatureKind::Categorical { .. }, Encoding::OneHot) => {
            let k: usize = value.to_integer().try_into().unwrap_or(0);
            Term::atom(LinExpr::var(coordinate(&f.name, k)), Rel::Eq, konst(&int(1)))
        }
        _ => Term::atom(f.raw_expr(), Rel::Eq, konst(value)),
    }
}

/// `raw_j ≠ value`, as an equality when the feature is 0/1-valued.
fn raw_differs(f: &FeatureSpec, value: &Rational) -> Term {
    match (&f.kind, f.encoding) {
        (FeatureKind::Categorical { .. }, Encoding::OneHot) => {
            let k: usize = value.to_integer().try_into().unwrap_or(0);
            Term::atom(LinExpr::var(coordinate(&f.name, k)), Rel::Eq, konst(&int(0)))
        }
        (FeatureKind::Binary, _) => Term::atom(f.raw_expr(), Rel::Eq, konst(&(int(1) - value))),
        _ => Term::atom(f.raw_expr(), Rel::Ne, konst(value)),
    }
}

/// Encoding validity, ranges and actionability relative to `x̂`. Integrality
/// and 0/1 domains are carried by the variable sorts.
pub fn plausibility_formula(
    schema: &FeatureSchema,
    x_hat: &[Rational],
    spec: &ConstraintSpec,
) -> Formula {
    let mut parts = Vec::new();
    for (j, (f, xh)) in schema.features().iter().zip(x_hat).enumerate() {
        match (&f.kind, f.encoding) {
            (FeatureKind::Categorical { .. } | FeatureKind::Ordinal { .. }, Encoding::OneHot) => {
                let mut sum = LinExpr::zero();
                for (v, _) in f.encoded_vars() {
                    sum.add_term(v, int(1));
                }
                parts.push(Term::atom(sum, Rel::Eq, konst(&int(1))));
            }
            (_, Encoding::Thermometer) => {
                let vars = f.encoded_vars();
                for w in vars.windows(2) {
                    parts.push(Term::atom(
                        LinExpr::var(w[1].0.clone()),
                        Rel::Le,
                        LinExpr::var(w[0].0.clone()),
                    ));
                }
            }
            _ => {}
        }
        let (lo, hi) = spec.range(j, schema);
        let ranged = match (&f.kind, f.encoding) {
            (FeatureKind::Binary, _) => false,
            (FeatureKind::Categorical { .. }, Encoding::OneHot) => false,
            _ => true,
        };
        if ranged {
            parts.push(Term::atom(f.raw_expr(), Rel::Ge, konst(&lo)));
            parts.push(Term::atom(f.raw_expr(), Rel::Le, konst(&hi)));
        }
        match spec.actionability(j, schema) {
            Actionability::Free => {}
            Actionability::Immutable => parts.push(raw_equals(f, xh)),
            Actionability::NonDecreasing => {
                parts.push(Term::atom(f.raw_expr(), Rel::Ge, konst(xh)))
            }
        }
    }
    Formula::new(Term::and(parts), schema_sorts(schema)).expect("schema variables are declared")
}

/// Checks a raw instance against the plausibility constraints directly.
pub fn is_plausible(
    schema: &FeatureSchema,
    x: &[Rational],
    x_hat: &[Rational],
    spec: &ConstraintSpec,
) -> bool {
    if schema.check_raw(x).is_err() {
        return false;
    }
    schema.features().iter().enumerate().all(|(j, f)| {
        let (lo, hi) = spec.range(j, schema);
        let in_range = matches!(f.kind, FeatureKind::Binary)
            || (matches!(f.kind, FeatureKind::Categorical { .. }) && f.encoding == Encoding::OneHot)
            || (x[j] >= lo && x[j] <= hi);
        let actionable = match spec.actionability(j, schema) {
            Actionability::Free => true,
            Actionability::Immutable => x[j] == x_hat[j],
            Actionability::NonDecreasing => x[j] >= x_hat[j],
        };
        in_range && actionable
    })
}

/// For every earlier counterfactual, at least one raw feature differs.
pub fn diversity_formula(schema: &FeatureSchema, previous: &[Vec<Rational>]) -> Formula {
    let clauses = previous.iter().map(|p| {
        Term::or(
            schema
                .features()
                .iter()
                .zip(p)
                .map(|(f, v)| raw_differs(f, v)),
        )
    });
    Formula::new(Term::and(clauses), schema_sorts(schema)).expect("schema variables are declared")
}

/// A user-supplied diversity rule: earlier counterfactuals in, extra
/// constraint out.
pub type DiversityHook = Arc<dyn Fn(&FeatureSchema, &[Vec<Rational>]) -> Formula + Send + Sync>;

pub fn l0_diversity_hook() -> DiversityHook {
    Arc::new(diversity_formula)
}

/// `φ_g`: the conjunction, with sorts merged.
pub fn combine_constraints(parts: Vec<Formula>) -> Result<Formula, ConstraintError> {
    Ok(Formula::and(parts)?)
}

/// Sort map of `schema`'s encoded variables, for callers building their own
/// constraint formulae.
pub fn encoded_sorts(schema: &FeatureSchema) -> BTreeMap<Var, Sort> {
    schema_sorts(schema)
}

/// Whether a raw value changed, by raw-feature semantics.
pub fn changed(x: &Rational, x_hat: &Rational) -> bool {
    !(x - x_hat).is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureSpec::integer("age", 17, 90),
            FeatureSpec::categorical("degree", &["none", "some", "graduate"], Encoding::OneHot),
            FeatureSpec::ordinal("level", 4, Encoding::Thermometer),
            FeatureSpec::binary("x2"),
        ])
        .unwrap()
    }

    fn render(f: &Formula) -> Vec<String> {
        f.term().conjuncts().iter().map(|t| format!("{t:?}")).collect()
    }

    #[test]
    fn one_hot_validity() {
        let s = schema();
        let x_hat = [int(35), int(1), int(2), int(0)];
        let f = plausibility_formula(&s, &x_hat, &ConstraintSpec::none());
        let shown = render(&f).join("\n");
        assert!(shown.contains("degree@0 + degree@1 + degree@2 = 1"), "{shown}");
        assert_eq!(f.sorts()[&Var::new("degree@1")], Sort::Bool);
        assert_eq!(f.sorts()[&Var::new("age")], Sort::Int);
    }

    #[test]
    fn immutable_and_non_decreasing_age() {
        let s = schema();
        let x_hat = [int(35), int(1), int(2), int(0)];
        let f = plausibility_formula(&s, &x_hat, &ConstraintSpec::immutable(&["age"]));
        assert!(render(&f).iter().any(|a| a.contains("age = 35")));
        let mut spec = ConstraintSpec::none();
        spec.set_actionability("age", Actionability::NonDecreasing);
        let f = plausibility_formula(&s, &x_hat, &spec);
        assert!(render(&f).iter().any(|a| a.contains("age ≥ 35")));
        let env = s.encode(&[int(40), int(1), int(2), int(0)]).unwrap();
        assert!(f.eval(&env).unwrap());
        let env = s.encode(&[int(30), int(1), int(2), int(0)]).unwrap();
        assert!(!f.eval(&env).unwrap());
    }

    #[test]
    fn diversity_clauses() {
        let s = FeatureSchema::new(vec![FeatureSpec::binary("x1"), FeatureSpec::binary("x2")]).unwrap();
        assert_eq!(diversity_formula(&s, &[]).term(), &Term::Const(true));
        let f = diversity_formula(&s, &[vec![int(1), int(0)]]);
        assert_eq!(format!("{:?}", f.term()), "Or([Atom(x1 = 0), Atom(x2 = 1)])");
    }

    #[test]
    fn combine() {
        let s = schema();
        let p = plausibility_formula(&s, &[int(35), int(1), int(2), int(0)], &ConstraintSpec::none());
        assert_eq!(combine_constraints(vec![p.clone()]).unwrap(), p);
        assert_eq!(combine_constraints(vec![]).unwrap().term(), &Term::Const(true));
        let mut clash = SortMap::new();
        clash.insert(Var::new("age"), Sort::Real);
        let other = Formula::new(Term::Const(true), clash).unwrap();
        assert!(combine_constraints(vec![p, other]).is_err());
    }

    #[test]
    fn constraint_file() {
        let s = schema();
        let text = r#"{"age": {"actionability": "immutable", "lo": "18", "hi": 80},
                       "diversity": {"mode": "l0-at-least-1", "count": 3}}"#;
        let spec = ConstraintSpec::parse(text, &s).unwrap();
        assert_eq!(spec.actionability(0, &s), Actionability::Immutable);
        assert_eq!(spec.range(0, &s), (int(18), int(80)));
        assert_eq!(spec.diversity, DiversityMode::L0AtLeastOne);
        assert_eq!(spec.count, 3);
        assert_eq!(ConstraintSpec::parse(&spec.to_json().to_string(), &s).unwrap(), spec);
        assert!(matches!(
            ConstraintSpec::parse(r#"{"height": {}}"#, &s),
            Err(ConstraintError::UnknownFeature(_))
        ));
        assert!(ConstraintSpec::parse(r#"{"degree": {"actionability": "non-decreasing"}}"#, &s).is_err());
        assert!(ConstraintSpec::parse(r#"{"age": {"lo": "50", "hi": "20"}}"#, &s).is_err());
    }

    #[test]
    fn direct_plausibility_check_matches_formula() {
        let s = schema();
        let x_hat = [int(35), int(1), int(2), int(0)];
        let spec = ConstraintSpec::immutable(&["x2"]);
        let f = plausibility_formula(&s, &x_hat, &spec);
        for x in [
            [int(35), int(0), int(4), int(0)],
            [int(16), int(0), int(4), int(0)],
            [int(35), int(2), int(1), int(1)],
        ] {
            let env = s.encode(&x).unwrap();
            assert_eq!(f.eval(&env).unwrap(), is_plausible(&s, &x, &x_hat, &spec));
        }
        assert!(!is_plausible(&s, &[ratio(71, 2), int(0), int(1), int(0)], &x_hat, &spec));
    }
}
