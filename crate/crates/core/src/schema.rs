//! Feature schemas: raw feature values, their encodings into solver
//! variables, and the way back.
//!
//! A raw value is always a [`Rational`]: numbers are themselves, binary
//! features are 0/1, categorical features are the 0-based category index and
//! ordinal features are the 1-based level.

use std::collections::{BTreeMap, HashSet};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::formula::{Assignment, LinExpr, Sort, Var};
use crate::rational::{format_rational, int, parse_rational, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema has no features")]
    Empty,
    #[error("duplicate feature name `{0}`")]
    Duplicate(String),
    #[error("feature name `{0}` must be a non-empty identifier without `#` or `@`")]
    BadName(String),
    #[error("feature `{feature}`: {reason}")]
    Invalid { feature: String, reason: String },
    #[error("feature `{feature}`: value `{value}` is not in the vocabulary")]
    OutOfVocabulary { feature: String, value: String },
    #[error("feature `{feature}`: value {value} is not valid: {reason}")]
    BadValue {
        feature: String,
        value: String,
        reason: &'static str,
    },
    #[error("expected {expected} raw values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("encoded variable `{0}` has no value")]
    MissingVar(String),
    #[error("feature `{feature}`: encoded block {block} is not a valid {encoding}")]
    BadBlock {
        feature: String,
        block: String,
        encoding: &'static str,
    },
    #[error("malformed schema document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureKind {
    Real,
    Integer,
    Binary,
    Categorical { categories: Vec<String> },
    /// Levels `1..=levels`.
    Ordinal {
        levels: usize,
        labels: Option<Vec<String>>,
    },
}

impl FeatureKind {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            FeatureKind::Real | FeatureKind::Integer | FeatureKind::Ordinal { .. }
        )
    }

    fn tag(&self) -> &'static str {
        match self {
            FeatureKind::Real => "real",
            FeatureKind::Integer => "integer",
            FeatureKind::Binary => "binary",
            FeatureKind::Categorical { .. } => "categorical",
            FeatureKind::Ordinal { .. } => "ordinal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    Direct,
    OneHot,
    Thermometer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Actionability {
    #[default]
    Free,
    Immutable,
    NonDecreasing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub lo: Rational,
    pub hi: Rational,
    pub actionability: Actionability,
    pub encoding: Encoding,
}

impl FeatureSpec {
    pub fn real(name: &str, lo: Rational, hi: Rational) -> Self {
        Self::new(name, FeatureKind::Real, lo, hi, Encoding::Direct)
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Self::new(name, FeatureKind::Integer, int(lo), int(hi), Encoding::Direct)
    }

    pub fn binary(name: &str) -> Self {
        Self::new(name, FeatureKind::Binary, int(0), int(1), Encoding::Direct)
    }

    pub fn categorical(name: &str, categories: &[&str], encoding: Encoding) -> Self {
        let k = categories.len() as i64;
        let kind = FeatureKind::Categorical {
            categories: categories.iter().map(|c| c.to_string()).collect(),
        };
        Self::new(name, kind, int(0), int(k - 1), encoding)
    }

    pub fn ordinal(name: &str, levels: usize, encoding: Encoding) -> Self {
        let kind = FeatureKind::Ordinal {
            levels,
            labels: None,
        };
        Self::new(name, kind, int(1), int(levels as i64), encoding)
    }

    pub fn new(
        name: &str,
        kind: FeatureKind,
        lo: Rational,
        hi: Rational,
        encoding: Encoding,
    ) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind,
            lo,
            hi,
            actionability: Actionability::Free,
            encoding,
        }
    }

    pub fn with_actionability(mut self, a: Actionability) -> Self {
        self.actionability = a;
        self
    }

    /// `R_j = hi − lo`.
    pub fn range(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn is_constant(&self) -> bool {
        self.lo == self.hi
    }

    /// Declared actionability, except that constant features are immutable.
    pub fn effective_actionability(&self) -> Actionability {
        if self.is_constant() {
            Actionability::Immutable
        } else {
            self.actionability
        }
    }

    /// Number of categories or levels of a discrete feature.
    pub fn arity(&self) -> Option<usize> {
        match &self.kind {
            FeatureKind::Categorical { categories } => Some(categories.len()),
            FeatureKind::Ordinal { levels, .. } => Some(*levels),
            FeatureKind::Binary => Some(2),
            _ => None,
        }
    }

    /// Solver variables carrying this feature, in encoding order.
    pub fn encoded_vars(&self) -> Vec<(Var, Sort)> {
        match (&self.kind, self.encoding) {
            (FeatureKind::Real, _) => vec![(Var::new(&self.name), Sort::Real)],
            (FeatureKind::Integer, _) => vec![(Var::new(&self.name), Sort::Int)],
            (FeatureKind::Binary, _) => vec![(Var::new(&self.name), Sort::Bool)],
            (FeatureKind::Categorical { .. } | FeatureKind::Ordinal { .. }, Encoding::Direct) => {
                vec![(Var::new(&self.name), Sort::Int)]
            }
            (_, _) => (0..self.arity().unwrap_or(0))
                .map(|i| (coordinate(&self.name, i), Sort::Bool))
                .collect(),
        }
    }

    /// The raw value as a linear function of the encoded variables. Exact on
    /// every valid encoding.
    pub fn raw_expr(&self) -> LinExpr {
        match (&self.kind, self.encoding) {
            (_, Encoding::Direct) => LinExpr::var(Var::new(&self.name)),
            (FeatureKind::Categorical { categories }, Encoding::OneHot) => {
                let mut e = LinExpr::zero();
                for i in 1..categories.len() {
                    e.add_term(coordinate(&self.name, i), int(i as i64));
                }
                e
            }
            (FeatureKind::Ordinal { levels, .. }, Encoding::OneHot) => {
                let mut e = LinExpr::zero();
                for i in 0..*levels {
                    e.add_term(coordinate(&self.name, i), int(i as i64 + 1));
                }
                e
            }
            (FeatureKind::Ordinal { levels, .. }, Encoding::Thermometer) => {
                let mut e = LinExpr::zero();
                for i in 0..*levels {
                    e.add_term(coordinate(&self.name, i), int(1));
                }
                e
            }
            _ => unreachable!("encoding combination rejected at validation"),
        }
    }

    /// Checks that `value` is a legal raw value of this feature's kind.
    /// Ranges are a plausibility matter and are not checked here.
    pub fn check_value(&self, value: &Rational) -> Result<(), SchemaError> {
        let bad = |reason| SchemaError::BadValue {
            feature: self.name.clone(),
            value: format_rational(value),
            reason,
        };
        match &self.kind {
            FeatureKind::Real => Ok(()),
            FeatureKind::Integer if !value.is_integer() => Err(bad("not an integer")),
            FeatureKind::Integer => Ok(()),
            FeatureKind::Binary if value.is_zero() || value.is_one() => Ok(()),
            FeatureKind::Binary => Err(bad("binary features are 0 or 1")),
            FeatureKind::Categorical { categories } => {
                if value.is_integer() && *value >= int(0) && *value < int(categories.len() as i64)
                {
                    Ok(())
                } else {
                    Err(SchemaError::OutOfVocabulary {
                        feature: self.name.clone(),
                        value: format_rational(value),
                    })
                }
            }
            FeatureKind::Ordinal { levels, .. } => {
                if value.is_integer() && *value >= int(1) && *value <= int(*levels as i64) {
                    Ok(())
                } else {
                    Err(bad("not a level of this ordinal feature"))
                }
            }
        }
    }

    /// Parses a data cell: category names for categorical features, labels
    /// (or level numbers) for ordinals, numbers otherwise.
    pub fn parse_value(&self, text: &str) -> Result<Rational, SchemaError> {
        let text = text.trim();
        let oov = || SchemaError::OutOfVocabulary {
            feature: self.name.clone(),
            value: text.to_string(),
        };
        let value = match &self.kind {
            FeatureKind::Categorical { categories } => {
                let idx = categories.iter().position(|c| c == text).ok_or_else(oov)?;
                int(idx as i64)
            }
            FeatureKind::Ordinal {
                labels: Some(labels),
                ..
            } if labels.iter().any(|l| l == text) => {
                int(labels.iter().position(|l| l == text).unwrap() as i64 + 1)
            }
            FeatureKind::Ordinal { .. } => parse_rational(text).map_err(|_| oov())?,
            _ => parse_rational(text).map_err(|_| SchemaError::BadValue {
                feature: self.name.clone(),
                value: text.to_string(),
                reason: "not a number",
            })?,
        };
        self.check_value(&value)?;
        Ok(value)
    }

    pub fn display_value(&self, value: &Rational) -> String {
        let idx = || value.to_integer().try_into().ok();
        match &self.kind {
            FeatureKind::Categorical { categories } => idx()
                .and_then(|i: usize| categories.get(i).cloned())
                .unwrap_or_else(|| format_rational(value)),
            FeatureKind::Ordinal {
                labels: Some(labels),
                ..
            } => idx()
                .and_then(|i: usize| i.checked_sub(1).and_then(|i| labels.get(i).cloned()))
                .unwrap_or_else(|| format_rational(value)),
            _ => format_rational(value),
        }
    }

    fn encode_into(&self, value: &Rational, out: &mut Assignment) -> Result<(), SchemaError> {
        self.check_value(value)?;
        let vars = self.encoded_vars();
        if self.encoding == Encoding::Direct || !self.arity().is_some() || vars.len() == 1
        {
            out.insert(vars[0].0.clone(), value.clone());
            return Ok(());
        }
        let v: usize = value.to_integer().try_into().unwrap_or(0);
        for (i, (var, _)) in vars.into_iter().enumerate() {
            let bit = match (&self.kind, self.encoding) {
                (FeatureKind::Categorical { .. }, _) => i == v,
                (_, Encoding::OneHot) => i + 1 == v,
                _ => i < v,
            };
            out.insert(var, int(bit as i64));
        }
        Ok(())
    }

    fn decode_from(&self, env: &Assignment) -> Result<Rational, SchemaError> {
        let vars = self.encoded_vars();
        let mut bits = Vec::with_capacity(vars.len());
        for (v, _) in &vars {
            let val = env
                .get(v)
                .ok_or_else(|| SchemaError::MissingVar(v.name().to_string()))?;
            bits.push(val.clone());
        }
        let block = || {
            bits.iter()
                .map(format_rational)
                .collect::<Vec<_>>()
                .join(",")
        };
        let value = match self.encoding {
            Encoding::Direct => bits[0].clone(),
            Encoding::OneHot => {
                let ones: Vec<usize> = (0..bits.len()).filter(|&i| bits[i].is_one()).collect();
                let valid = ones.len() == 1 && bits.iter().all(|b| b.is_zero() || b.is_one());
                if !valid {
                    return Err(SchemaError::BadBlock {
                        feature: self.name.clone(),
                        block: block(),
                        encoding: "one-hot block",
                    });
                }
                match self.kind {
                    FeatureKind::Categorical { .. } => int(ones[0] as i64),
                    _ => int(ones[0] as i64 + 1),
                }
            }
            Encoding::Thermometer => {
                let binary = bits.iter().all(|b| b.is_zero() || b.is_one());
                let monotone = bits.windows(2).all(|w| w[0] >= w[1]);
                if !binary || !monotone {
                    return Err(SchemaError::BadBlock {
                        feature: self.name.clone(),
                        block: block(),
                        encoding: "thermometer block",
                    });
                }
                int(bits.iter().filter(|b| b.is_one()).count() as i64)
            }
        };
        self.check_value(&value)?;
        Ok(value)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let invalid = |reason: &str| SchemaError::Invalid {
            feature: self.name.clone(),
            reason: reason.to_string(),
        };
        let name_ok = !self.name.is_empty()
            && !self.name.contains(['#', '@', '|', ' ', '(', ')'])
            && !self.name.chars().any(char::is_control);
        if !name_ok {
            return Err(SchemaError::BadName(self.name.clone()));
        }
        if self.lo > self.hi {
            return Err(invalid("lo exceeds hi"));
        }
        match (&self.kind, self.encoding) {
            (FeatureKind::Real | FeatureKind::Integer | FeatureKind::Binary, Encoding::Direct) => {}
            (FeatureKind::Real | FeatureKind::Integer | FeatureKind::Binary, _) => {
                return Err(invalid("only the direct encoding applies to this kind"))
            }
            (FeatureKind::Categorical { .. }, Encoding::Thermometer) => {
                return Err(invalid("categorical features cannot be thermometer encoded"))
            }
            _ => {}
        }
        match &self.kind {
            FeatureKind::Categorical { categories } => {
                if categories.len() < 2 {
                    return Err(invalid("categorical features need at least 2 categories"));
                }
                let distinct: HashSet<_> = categories.iter().collect();
                if distinct.len() != categories.len() {
                    return Err(invalid("repeated category"));
                }
            }
            FeatureKind::Ordinal { levels, labels } => {
                if *levels < 2 {
                    return Err(invalid("ordinal features need at least 2 levels"));
                }
                if labels.as_ref().is_some_and(|l| l.len() != *levels) {
                    return Err(invalid("label count differs from level count"));
                }
                if self.lo < int(1) || self.hi > int(*levels as i64) {
                    return Err(invalid("range exceeds the ordinal levels"));
                }
            }
            FeatureKind::Binary => {
                if self.lo < int(0) || self.hi > int(1) {
                    return Err(invalid("binary range must lie in [0, 1]"));
                }
            }
            FeatureKind::Integer => {
                if !self.lo.is_integer() || !self.hi.is_integer() {
                    return Err(invalid("integer range bounds must be integral"));
                }
            }
            FeatureKind::Real => {}
        }
        if self.actionability == Actionability::NonDecreasing
            && matches!(self.kind, FeatureKind::Categorical { .. })
        {
            return Err(invalid("categorical features have no order to be non-decreasing in"));
        }
        Ok(())
    }
}

/// `name@i`, the `i`-th (0-based) coordinate of an encoded block.
pub fn coordinate(name: &str, i: usize) -> Var {
    Var::new(format!("{name}@{i}"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    label: String,
    var_owner: BTreeMap<Var, usize>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self, SchemaError> {
        Self::with_label(features, "label")
    }

    pub fn with_label(features: Vec<FeatureSpec>, label: &str) -> Result<Self, SchemaError> {
        if features.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut names = HashSet::new();
        let mut var_owner = BTreeMap::new();
        for (j, f) in features.iter().enumerate() {
            f.validate()?;
            if !names.insert(f.name.clone()) {
                return Err(SchemaError::Duplicate(f.name.clone()));
            }
            for (v, _) in f.encoded_vars() {
                var_owner.insert(v, j);
            }
        }
        if names.contains(label) {
            return Err(SchemaError::Duplicate(label.to_string()));
        }
        Ok(FeatureSchema {
            features,
            label: label.to_string(),
            var_owner,
        })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, j: usize) -> &FeatureSpec {
        &self.features[j]
    }

    /// `J`, the number of raw features.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Raw feature owning an encoded variable.
    pub fn owner(&self, var: &Var) -> Option<usize> {
        self.var_owner.get(var).copied()
    }

    pub fn encoded_vars(&self) -> Vec<(Var, Sort)> {
        self.features.iter().flat_map(|f| f.encoded_vars()).collect()
    }

    pub fn check_raw(&self, raw: &[Rational]) -> Result<(), SchemaError> {
        if raw.len() != self.len() {
            return Err(SchemaError::Arity {
                expected: self.len(),
                got: raw.len(),
            });
        }
        for (f, v) in self.features.iter().zip(raw) {
            f.check_value(v)?;
        }
        Ok(())
    }

    pub fn encode(&self, raw: &[Rational]) -> Result<Assignment, SchemaError> {
        self.check_raw(raw)?;
        let mut out = Assignment::new();
        for (f, v) in self.features.iter().zip(raw) {
            f.encode_into(v, &mut out)?;
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode); fails on invalid blocks.
    pub fn decode(&self, env: &Assignment) -> Result<Vec<Rational>, SchemaError> {
        self.features.iter().map(|f| f.decode_from(env)).collect()
    }

    /// Replaces ranges (not categorical vocabularies) with new bounds.
    pub fn with_ranges(&self, ranges: &[(Rational, Rational)]) -> Result<Self, SchemaError> {
        let features = self
            .features
            .iter()
            .zip(ranges)
            .map(|(f, (lo, hi))| {
                let mut f = f.clone();
                if !matches!(f.kind, FeatureKind::Categorical { .. }) {
                    f.lo = lo.clone();
                    f.hi = hi.clone();
                }
                f
            })
            .collect();
        Self::with_label(features, &self.label)
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| SchemaError::Document(e.to_string()))?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Value) -> Result<Self, SchemaError> {
        let doc: SchemaDoc = serde_json::from_value(value.clone())
            .map_err(|e| SchemaError::Document(e.to_string()))?;
        doc.into_schema(false)
    }

    /// Like [`from_json`](Self::from_json) but numeric features may omit
    /// their range; missing bounds come back as `None` for the caller to
    /// fill in from data.
    pub fn from_json_partial(value: &Value) -> Result<(Self, Vec<bool>), SchemaError> {
        let doc: SchemaDoc = serde_json::from_value(value.clone())
            .map_err(|e| SchemaError::Document(e.to_string()))?;
        let declared = doc.features.iter().map(|f| f.range.is_some()).collect();
        Ok((doc.into_schema(true)?, declared))
    }

    pub fn to_json(&self) -> Value {
        let features: Vec<Value> = self.features.iter().map(feature_to_json).collect();
        serde_json::json!({ "features": features, "label": self.label })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    features: Vec<FeatureDoc>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureDoc {
    name: String,
    kind: String,
    #[serde(default)]
    range: Option<(Value, Value)>,
    #[serde(default)]
    categories: Option<Vec<String>>,
    #[serde(default)]
    levels: Option<usize>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    encoding: Option<Encoding>,
    #[serde(default)]
    actionability: Option<Actionability>,
}

pub(crate) fn json_number(value: &Value) -> Result<Rational, String> {
    match value {
        Value::String(s) => parse_rational(s).map_err(|e| e.to_string()),
        Value::Number(n) => parse_rational(&n.to_string()).map_err(|e| e.to_string()),
        other => Err(format!("expected a decimal string, found {other}")),
    }
}

impl SchemaDoc {
    fn into_schema(self, allow_missing_range: bool) -> Result<FeatureSchema, SchemaError> {
        let mut out = Vec::new();
        for f in self.features {
            let invalid = |reason: String| SchemaError::Invalid {
                feature: f.name.clone(),
                reason,
            };
            let kind = match f.kind.as_str() {
                "real" | "numerical-real" => FeatureKind::Real,
                "integer" | "numerical-integer" => FeatureKind::Integer,
                "binary" => FeatureKind::Binary,
                "categorical" => FeatureKind::Categorical {
                    categories: f
                        .categories
                        .clone()
                        .ok_or_else(|| invalid("categorical feature without categories".into()))?,
                },
                "ordinal" => {
                    let levels = match (f.levels, &f.labels) {
                        (Some(k), _) => k,
                        (None, Some(l)) => l.len(),
                        (None, None) => {
                            return Err(invalid("ordinal feature without levels".into()))
                        }
                    };
                    FeatureKind::Ordinal {
                        levels,
                        labels: f.labels.clone(),
                    }
                }
                other => return Err(invalid(format!("unknown kind `{other}`"))),
            };
            let default_range = match &kind {
                FeatureKind::Binary => Some((int(0), int(1))),
                FeatureKind::Categorical { categories } => {
                    Some((int(0), int(categories.len() as i64 - 1)))
                }
                FeatureKind::Ordinal { levels, .. } => Some((int(1), int(*levels as i64))),
                _ => None,
            };
            let (lo, hi) = match (&f.range, default_range) {
                (Some((lo, hi)), _) => (
                    json_number(lo).map_err(invalid)?,
                    json_number(hi).map_err(invalid)?,
                ),
                (None, Some(r)) => r,
                (None, None) if allow_missing_range => (int(0), int(0)),
                (None, None) => return Err(invalid("numeric feature without range".into())),
            };
            let encoding = f.encoding.unwrap_or(match kind {
                FeatureKind::Categorical { .. } => Encoding::OneHot,
                FeatureKind::Ordinal { .. } => Encoding::Thermometer,
                _ => Encoding::Direct,
            });
            out.push(FeatureSpec {
                name: f.name.clone(),
                kind,
                lo,
                hi,
                actionability: f.actionability.unwrap_or_default(),
                encoding,
            });
        }
        FeatureSchema::with_label(out, self.label.as_deref().unwrap_or("label"))
    }
}

fn feature_to_json(f: &FeatureSpec) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("name".into(), Value::from(f.name.clone()));
    obj.insert("kind".into(), Value::from(f.kind.tag()));
    match &f.kind {
        FeatureKind::Categorical { categories } => {
            obj.insert("categories".into(), Value::from(categories.clone()));
        }
        FeatureKind::Ordinal { levels, labels } => {
            obj.insert("levels".into(), Value::from(*levels));
            if let Some(l) = labels {
                obj.insert("labels".into(), Value::from(l.clone()));
            }
        }
        _ => {}
    }
    obj.insert(
        "range".into(),
        Value::from(vec![format_rational(&f.lo), format_rational(&f.hi)]),
    );
    obj.insert("encoding".into(), serde_json::to_value(f.encoding).unwrap());
    obj.insert(
        "actionability".into(),
        serde_json::to_value(f.actionability).unwrap(),
    );
    Value::Object(obj)
}
