//! Model specifications, the JSON interchange format, and lowering of models
//! into [`Program`]s.

use num_traits::{Signed, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::formula::{Assignment, Rel, Var};
use crate::program::{Command, Expr, Guard, Program, ProgramError};
use crate::rational::{format_rational, int, Rational};
use crate::schema::{json_number, FeatureSchema, SchemaError};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Malformed(String),
    #[error("unsupported document version {0}")]
    Version(u64),
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid tree: {0}")]
    Tree(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    /// Goes to `left` when `feature op threshold` holds, else to `right`.
    Split {
        feature: Var,
        op: Rel,
        threshold: Rational,
        left: usize,
        right: usize,
    },
    Leaf(u8),
}

/// Nodes in an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn predict(&self, input: &Assignment) -> u8 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(label) => return *label,
                Node::Split {
                    feature,
                    op,
                    threshold,
                    left,
                    right,
                } => {
                    i = if op.holds(&input[feature], threshold) {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    fn validate(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        if self.nodes.is_empty() {
            return Err(ModelError::Tree("no nodes".into()));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Leaf(l) if *l > 1 => {
                    return Err(ModelError::Tree(format!("node {i}: leaf label {l} not in {{0,1}}")))
                }
                Node::Leaf(_) => {}
                Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } => {
                    if schema.owner(feature).is_none() {
                        return Err(ModelError::Tree(format!(
                            "node {i}: `{feature}` is not an encoded feature variable"
                        )));
                    }
                    for &c in [left, right] {
                        if c == 0 || c >= self.nodes.len() {
                            return Err(ModelError::Tree(format!("node {i}: bad child index {c}")));
                        }
                        parents[c] += 1;
                    }
                }
            }
        }
        if let Some(i) = (1..self.nodes.len()).find(|&i| parents[i] != 1) {
            return Err(ModelError::Tree(format!(
                "node {i} has {} parents; nodes must form a single tree",
                parents[i]
            )));
        }
        // A node with one parent each and a root without one can still hide
        // a cycle unreachable from the root.
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            seen[i] = true;
            if let Node::Split { left, right, .. } = &self.nodes[i] {
                stack.extend([*left, *right]);
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::Tree(format!("node {i} is unreachable from the root")));
        }
        Ok(())
    }

    /// Program fragment for node `i`; `leaf` turns a label into a command.
    fn lower(&self, i: usize, leaf: &dyn Fn(u8) -> Command) -> Command {
        match &self.nodes[i] {
            Node::Leaf(l) => leaf(*l),
            Node::Split {
                feature,
                op,
                threshold,
                left,
                right,
            } => Command::ite(
                Guard::cmp(Expr::var(feature.clone()), *op, Expr::constant(threshold.clone())),
                self.lower(*left, leaf),
                self.lower(*right, leaf),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    /// Row-major: `weights[i][j]` feeds input `j` into unit `i`.
    pub weights: Vec<Vec<Rational>>,
    pub bias: Vec<Rational>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    DecisionTree(Tree),
    /// `y = 1` iff `2·votes ≥ T` when `tie == 1`, iff `2·votes > T` when
    /// `tie == 0`.
    RandomForest { trees: Vec<Tree>, tie: u8 },
    /// Weights follow the schema's encoded-variable order.
    LogisticRegression { weights: Vec<Rational>, bias: Rational },
    /// ReLU on every layer but the last, which has one unit thresholded at 0.
    MlpRelu { layers: Vec<Layer> },
}

impl ModelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::DecisionTree(_) => "decision-tree",
            ModelKind::RandomForest { .. } => "random-forest",
            ModelKind::LogisticRegression { .. } => "logistic-regression",
            ModelKind::MlpRelu { .. } => "mlp-relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub schema: FeatureSchema,
    pub kind: ModelKind,
}

/// Name of the forest vote counter in generated programs.
pub const VOTES: &str = "votes";

impl ModelSpec {
    pub fn new(schema: FeatureSchema, kind: ModelKind) -> Result<Self, ModelError> {
        let spec = ModelSpec { schema, kind };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n_in = self.schema.encoded_vars().len();
        match &self.kind {
            ModelKind::DecisionTree(t) => t.validate(&self.schema),
            ModelKind::RandomForest { trees, tie } => {
                if trees.is_empty() {
                    return Err(ModelError::Dimension("forest without trees".into()));
                }
                if *tie > 1 {
                    return Err(ModelError::Malformed(format!("tie label {tie} not in {{0,1}}")));
                }
                trees.iter().try_for_each(|t| t.validate(&self.schema))
            }
            ModelKind::LogisticRegression { weights, .. } => {
                if weights.len() != n_in {
                    return Err(ModelError::Dimension(format!(
                        "{} weights for {n_in} encoded inputs",
                        weights.len()
                    )));
                }
                Ok(())
            }
            ModelKind::MlpRelu { layers } => {
                if layers.is_empty() {
                    return Err(ModelError::Dimension("network without layers".into()));
                }
                let mut width = n_in;
                for (l, layer) in layers.iter().enumerate() {
                    if layer.weights.is_empty() {
                        return Err(ModelError::Dimension(format!("layer {l} has width 0")));
                    }
                    if layer.bias.len() != layer.weights.len() {
                        return Err(ModelError::Dimension(format!(
                            "layer {l}: {} biases for {} units",
                            layer.bias.len(),
                            layer.weights.len()
                        )));
                    }
                    if let Some(r) = layer.weights.iter().position(|row| row.len() != width) {
                        return Err(ModelError::Dimension(format!(
                            "layer {l}, unit {r}: {} weights for {width} inputs",
                            layer.weights[r].len()
                        )));
                    }
                    width = layer.weights.len();
                }
                if width != 1 {
                    return Err(ModelError::Dimension(format!(
                        "output layer has {width} units, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// The model's decision computed straight from its definition.
    pub fn predict(&self, input: &Assignment) -> u8 {
        match &self.kind {
            ModelKind::DecisionTree(t) => t.predict(input),
            ModelKind::RandomForest { trees, tie } => {
                let votes = trees.iter().filter(|t| t.predict(input) == 1).count();
                let (twice, total) = (2 * votes, trees.len());
                u8::from(twice > total || (twice == total && *tie == 1))
            }
            ModelKind::LogisticRegression { weights, bias } => {
                let mut acc = bias.clone();
                for ((v, _), w) in self.schema.encoded_vars().iter().zip(weights) {
                    acc += w * &input[v];
                }
                u8::from(!acc.is_negative())
            }
            ModelKind::MlpRelu { layers } => {
                let mut act: Vec<Rational> = self
                    .schema
                    .encoded_vars()
                    .iter()
                    .map(|(v, _)| input[v].clone())
                    .collect();
                for (l, layer) in layers.iter().enumerate() {
                    let last = l + 1 == layers.len();
                    act = layer
                        .weights
                        .iter()
                        .zip(&layer.bias)
                        .map(|(row, b)| {
                            let z = row.iter().zip(&act).fold(b.clone(), |s, (w, a)| s + w * a);
                            if last || !z.is_negative() {
                                z
                            } else {
                                Rational::zero()
                            }
                        })
                        .collect();
                }
                u8::from(!act[0].is_negative())
            }
        }
    }

    /// Lowers the model into the core language.
    pub fn build_program(&self) -> Program {
        let inputs = self.schema.encoded_vars();
        let ret = |l: u8| Command::ret(Expr::int(l as i64));
        let threshold = |e: Expr| {
            Command::ite(
                Guard::cmp(e, Rel::Ge, Expr::int(0)),
                Command::ret(Expr::int(1)),
                Command::ret(Expr::int(0)),
            )
        };
        let body = match &self.kind {
            ModelKind::DecisionTree(t) => t.lower(0, &ret),
            ModelKind::RandomForest { trees, tie } => {
                let vote = |l: u8| {
                    if l == 1 {
                        Command::assign(VOTES, Expr::add(Expr::var(VOTES), Expr::int(1)))
                    } else {
                        Command::Skip
                    }
                };
                let index = Var::new("t");
                let mut pick = Command::Skip;
                for (k, tree) in trees.iter().enumerate().rev() {
                    pick = Command::ite(
                        Guard::cmp(Expr::var(index.clone()), Rel::Eq, Expr::int(k as i64 + 1)),
                        tree.lower(0, &vote),
                        pick,
                    );
                }
                let rel = if *tie == 1 { Rel::Ge } else { Rel::Gt };
                Command::seq([
                    Command::assign(VOTES, Expr::int(0)),
                    Command::For {
                        var: index,
                        count: trees.len() as u32,
                        body: Box::new(pick),
                    },
                    Command::ite(
                        Guard::cmp(
                            Expr::mul(Expr::int(2), Expr::var(VOTES)),
                            rel,
                            Expr::int(trees.len() as i64),
                        ),
                        Command::ret(Expr::int(1)),
                        Command::ret(Expr::int(0)),
                    ),
                ])
            }
            ModelKind::LogisticRegression { weights, bias } => {
                let terms: Vec<(Var, Rational)> = inputs
                    .iter()
                    .map(|(v, _)| v.clone())
                    .zip(weights.iter().cloned())
                    .collect();
                threshold(Expr::linear(&terms, bias))
            }
            ModelKind::MlpRelu { layers } => {
                let mut cmds = Vec::new();
                let mut prev: Vec<Var> = inputs.iter().map(|(v, _)| v.clone()).collect();
                let mut unit = 0usize;
                for (l, layer) in layers.iter().enumerate() {
                    let last = l + 1 == layers.len();
                    let mut pre = Vec::new();
                    for (row, b) in layer.weights.iter().zip(&layer.bias) {
                        unit += 1;
                        let z = Var::new(format!("z{unit}"));
                        let terms: Vec<(Var, Rational)> =
                            prev.iter().cloned().zip(row.iter().cloned()).collect();
                        cmds.push(Command::assign(z.clone(), Expr::linear(&terms, b)));
                        pre.push((unit, z));
                    }
                    if last {
                        cmds.push(threshold(Expr::var(pre[0].1.clone())));
                        break;
                    }
                    prev = Vec::new();
                    for (k, z) in pre {
                        let zt = Var::new(format!("zt{k}"));
                        cmds.push(Command::ite(
                            Guard::cmp(Expr::var(z.clone()), Rel::Ge, Expr::int(0)),
                            Command::assign(zt.clone(), Expr::var(z)),
                            Command::assign(zt.clone(), Expr::int(0)),
                        ));
                        prev.push(zt);
                    }
                }
                Command::Seq(cmds)
            }
        };
        Program::new(inputs, body).expect("generated programs are well formed and linear")
    }

    pub fn to_json(&self) -> Value {
        let tree_json = |t: &Tree| {
            let nodes: Vec<Value> = t
                .nodes
                .iter()
                .map(|n| match n {
                    Node::Leaf(l) => json!({ "leaf": l }),
                    Node::Split {
                        feature,
                        op,
                        threshold,
                        left,
                        right,
                    } => json!({
                        "feature": feature.name(),
                        "op": serde_json::to_value(op).unwrap(),
                        "threshold": format_rational(threshold),
                        "left": left,
                        "right": right,
                    }),
                })
                .collect();
            json!({ "nodes": nodes })
        };
        let nums = |v: &[Rational]| -> Vec<String> { v.iter().map(format_rational).collect() };
        let model = match &self.kind {
            ModelKind::DecisionTree(t) => {
                let mut m = tree_json(t);
                m["kind"] = json!("decision-tree");
                m
            }
            ModelKind::RandomForest { trees, tie } => json!({
                "kind": "random-forest",
                "tie": tie,
                "trees": trees.iter().map(tree_json).collect::<Vec<_>>(),
            }),
            ModelKind::LogisticRegression { weights, bias } => json!({
                "kind": "logistic-regression",
                "weights": nums(weights),
                "bias": format_rational(bias),
            }),
            ModelKind::MlpRelu { layers } => json!({
                "kind": "mlp-relu",
                "layers": layers.iter().map(|l| json!({
                    "weights": l.weights.iter().map(|r| nums(r)).collect::<Vec<_>>(),
                    "bias": nums(&l.bias),
                })).collect::<Vec<_>>(),
            }),
        };
        json!({ "version": FORMAT_VERSION, "schema": self.schema.to_json(), "model": model })
    }
}

/// Parses an interchange document.
pub fn parse_model(document: &str) -> Result<ModelSpec, ModelError> {
    let doc: Value =
        serde_json::from_str(document).map_err(|e| ModelError::Malformed(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| ModelError::Malformed("top level must be an object".into()))?;
    let version = obj
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| ModelError::Malformed("missing integer `version`".into()))?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(version));
    }
    let schema = FeatureSchema::from_json(field(&doc, "schema")?)?;
    let model = field(&doc, "model")?;
    let kind_tag = field(model, "kind")?
        .as_str()
        .ok_or_else(|| ModelError::Malformed("`kind` must be a string".into()))?;
    let kind = match kind_tag {
        "decision-tree" => ModelKind::DecisionTree(parse_tree(model)?),
        "random-forest" => {
            let trees = array(field(model, "trees")?, "trees")?
                .iter()
                .map(parse_tree)
                .collect::<Result<Vec<_>, _>>()?;
            let tie = match model.get("tie") {
                None => 1,
                Some(v) => v
                    .as_u64()
                    .filter(|t| *t <= 1)
                    .ok_or_else(|| ModelError::Malformed("`tie` must be 0 or 1".into()))?
                    as u8,
            };
            ModelKind::RandomForest { trees, tie }
        }
        "logistic-regression" => ModelKind::LogisticRegression {
            weights: numbers(field(model, "weights")?, "weights")?,
            bias: number(field(model, "bias")?, "bias")?,
        },
        "mlp-relu" => {
            let layers = array(field(model, "layers")?, "layers")?
                .iter()
                .map(|l| {
                    let weights = array(field(l, "weights")?, "weights")?
                        .iter()
                        .map(|r| numbers(r, "weights"))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(Layer {
                        weights,
                        bias: numbers(field(l, "bias")?, "bias")?,
                    })
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            ModelKind::MlpRelu { layers }
        }
        other => return Err(ModelError::UnknownKind(other.to_string())),
    };
    ModelSpec::new(schema, kind)
}

/// Serializes to the interchange format; `parse_model` inverts it.
pub fn emit_model(spec: &ModelSpec) -> String {
    serde_json::to_string_pretty(&spec.to_json()).expect("json values always serialize")
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value, ModelError> {
    v.get(name)
        .ok_or_else(|| ModelError::Malformed(format!("missing field `{name}`")))
}

fn array<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>, ModelError> {
    v.as_array()
        .ok_or_else(|| ModelError::Malformed(format!("`{what}` must be an array")))
}

fn number(v: &Value, what: &str) -> Result<Rational, ModelError> {
    json_number(v).map_err(|e| ModelError::Malformed(format!("`{what}`: {e}")))
}

fn numbers(v: &Value, what: &str) -> Result<Vec<Rational>, ModelError> {
    array(v, what)?.iter().map(|x| number(x, what)).collect()
}

fn parse_tree(v: &Value) -> Result<Tree, ModelError> {
    let nodes = array(field(v, "nodes")?, "nodes")?
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if let Some(l) = n.get("leaf") {
                let label = l
                    .as_u64()
                    .ok_or_else(|| ModelError::Tree(format!("node {i}: leaf must be 0 or 1")))?;
                return u8::try_from(label)
                    .map(Node::Leaf)
                    .map_err(|_| ModelError::Tree(format!("node {i}: leaf must be 0 or 1")));
            }
            let index = |name: &str| -> Result<usize, ModelError> {
                field(n, name)?
                    .as_u64()
                    .map(|x| x as usize)
                    .ok_or_else(|| ModelError::Tree(format!("node {i}: `{name}` must be an index")))
            };
            let feature = field(n, "feature")?
                .as_str()
                .ok_or_else(|| ModelError::Tree(format!("node {i}: `feature` must be a string")))?;
            let op: Rel = serde_json::from_value(field(n, "op")?.clone())
                .map_err(|_| ModelError::Tree(format!("node {i}: unknown comparison")))?;
            Ok(Node::Split {
                feature: Var::new(feature),
                op,
                threshold: number(field(n, "threshold")?, "threshold")?,
                left: index("left")?,
                right: index("right")?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tree { nodes })
}

/// Leaf labels as a lookup for building trees in code: `split(f, op, t, l, r)`.
pub fn split(feature: &str, op: Rel, threshold: Rational, left: usize, right: usize) -> Node {
    Node::Split {
        feature: Var::new(feature),
        op,
        threshold,
        left,
        right,
    }
}

pub fn leaf(label: u8) -> Node {
    Node::Leaf(label)
}

/// Convenience for hand-written integer weights.
pub fn ints(values: &[i64]) -> Vec<Rational> {
    values.iter().map(|&v| int(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureSpec;

    pub(crate) fn fig2() -> ModelSpec {
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
        ModelSpec::new(schema, ModelKind::DecisionTree(tree)).unwrap()
    }

    fn fig3() -> ModelSpec {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::real("x1", int(-10), int(10)),
            FeatureSpec::real("x2", int(-10), int(10)),
            FeatureSpec::real("x3", int(-10), int(10)),
        ])
        .unwrap();
        let layers = vec![
            Layer {
                weights: vec![ints(&[1, -1, 0]), ints(&[2, 0, -1])],
                bias: ints(&[0, 0]),
            },
            Layer {
                weights: vec![ints(&[-1, 1])],
                bias: ints(&[0]),
            },
        ];
        ModelSpec::new(schema, ModelKind::MlpRelu { layers }).unwrap()
    }

    fn env(vals: &[(&str, i64)]) -> Assignment {
        vals.iter().map(|(k, v)| (Var::new(*k), int(*v))).collect()
    }

    #[test]
    fn fig2_parses_with_four_leaves() {
        let spec = parse_model(&emit_model(&fig2())).unwrap();
        let ModelKind::DecisionTree(t) = &spec.kind else { panic!() };
        assert_eq!(t.leaf_count(), 4);
        assert_eq!(spec, fig2());
    }

    #[test]
    fn fig2_program_matches_listing() {
        let p = fig2().build_program();
        let expected = "\
if x1 == 1:
    if x3 > 0:
        return 0
    else:
        return 1
else:
    if x2 == 1:
        return 0
    else:
        return 1
";
        assert_eq!(p.pretty(), expected);
        let x = env(&[("x1", 0), ("x2", 1), ("x3", 7)]);
        assert_eq!(p.evaluate(&x).unwrap(), int(0));
    }

    #[test]
    fn fig3_program_matches_listing() {
        let p = fig3().build_program();
        let expected = "\
z1 = x1 - x2
z2 = 2*x1 - x3
if z1 >= 0:
    zt1 = z1
else:
    zt1 = 0
if z2 >= 0:
    zt2 = z2
else:
    zt2 = 0
z3 = -zt1 + zt2
if z3 >= 0:
    return 1
else:
    return 0
";
        assert_eq!(p.pretty(), expected);
        let x = env(&[("x1", 1), ("x2", 0), ("x3", 0)]);
        assert_eq!(p.evaluate(&x).unwrap(), int(1));
        assert_eq!(fig3().predict(&x), 1);
    }

    #[test]
    fn forest_of_identical_trees_agrees_with_tree() {
        let tree = fig2();
        let ModelKind::DecisionTree(t) = tree.kind.clone() else { panic!() };
        let forest = ModelSpec::new(
            tree.schema.clone(),
            ModelKind::RandomForest {
                trees: vec![t.clone(), t],
                tie: 1,
            },
        )
        .unwrap();
        let p = forest.build_program();
        for (a, b, c) in [(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, -1)] {
            let x = env(&[("x1", a), ("x2", b), ("x3", c)]);
            assert_eq!(p.evaluate(&x).unwrap(), int(tree.predict(&x) as i64));
            assert_eq!(forest.predict(&x), tree.predict(&x));
        }
    }

    #[test]
    fn logistic_regression_is_a_threshold() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::real("a", int(0), int(1)),
            FeatureSpec::real("b", int(0), int(1)),
        ])
        .unwrap();
        let spec = ModelSpec::new(
            schema,
            ModelKind::LogisticRegression {
                weights: ints(&[2, -1]),
                bias: int(-1),
            },
        )
        .unwrap();
        let p = spec.build_program();
        assert_eq!(p.pretty(), "if 2*a - b - 1 >= 0:\n    return 1\nelse:\n    return 0\n");
    }

    #[test]
    fn zero_width_layer_is_a_dimension_error() {
        let mut doc = fig3().to_json();
        doc["model"]["layers"][0]["weights"] = json!([]);
        doc["model"]["layers"][0]["bias"] = json!([]);
        assert!(matches!(
            parse_model(&doc.to_string()),
            Err(ModelError::Dimension(_))
        ));
    }

    #[test]
    fn document_errors() {
        assert!(matches!(parse_model("{"), Err(ModelError::Malformed(_))));
        let mut doc = fig2().to_json();
        doc["model"]["kind"] = json!("svm");
        assert!(matches!(
            parse_model(&doc.to_string()),
            Err(ModelError::UnknownKind(_))
        ));
        let mut doc = fig2().to_json();
        doc["version"] = json!(2);
        assert!(matches!(parse_model(&doc.to_string()), Err(ModelError::Version(2))));
        let mut doc = fig2().to_json();
        doc["model"]["nodes"][1]["feature"] = json!("x9");
        assert!(matches!(parse_model(&doc.to_string()), Err(ModelError::Tree(_))));
        let mut doc = fig2().to_json();
        doc["model"]["nodes"][2]["left"] = json!(1);
        assert!(matches!(parse_model(&doc.to_string()), Err(ModelError::Tree(_))));
    }

    #[test]
    fn decimal_strings_are_exact() {
        let mut doc = fig2().to_json();
        doc["model"]["nodes"][1]["threshold"] = json!("0.1");
        let spec = parse_model(&doc.to_string()).unwrap();
        let ModelKind::DecisionTree(t) = &spec.kind else { panic!() };
        let Node::Split { threshold, .. } = &t.nodes[1] else { panic!() };
        assert_eq!(*threshold, crate::rational::ratio(1, 10));
    }
}
