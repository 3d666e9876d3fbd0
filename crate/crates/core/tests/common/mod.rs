//! Fixtures shared by the integration tests: the two worked example models,
//! random model generators and brute-force oracles.
#![allow(dead_code)]

use cfsat_core::formula::{Assignment, LinExpr, Rel, Sort, SortMap, Term, Var};
use cfsat_core::model::{ints, leaf, split, Layer, ModelKind, ModelSpec, Node, Tree};
use cfsat_core::rational::{int, ratio, Rational};
use cfsat_core::schema::{Encoding, FeatureKind, FeatureSchema, FeatureSpec};
use cfsat_core::Formula;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tree over two binary features and one real feature, four leaves.
pub fn fig2() -> ModelSpec {
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

/// One hidden ReLU layer of width two over three real inputs.
pub fn fig3() -> ModelSpec {
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

pub const KINDS: [&str; 4] = ["decision-tree", "random-forest", "logistic-regression", "mlp-relu"];

/// Every feature kind and encoding at least once.
pub fn mixed_schema() -> FeatureSchema {
    FeatureSchema::with_label(
        vec![
            FeatureSpec::real("income", int(0), int(100)),
            FeatureSpec::integer("age", 18, 78),
            FeatureSpec::binary("sex"),
            FeatureSpec::categorical("job", &["a", "b", "c"], Encoding::OneHot),
            FeatureSpec::ordinal("edu", 4, Encoding::Thermometer),
        ],
        "label",
    )
    .unwrap()
}

/// Two or three features: reals over integer ranges, small integers whose
/// range divides 1000, binaries. At most two reals, and then the third is binary.
pub fn grid_schema(rng: &mut ChaCha8Rng) -> FeatureSchema {
    let n = rng.gen_range(2..=3);
    let mut features = Vec::new();
    let mut reals = 0;
    for j in 0..n {
        let name = format!("f{j}");
        // Two reals already make a million grid points; only a binary fits next to them.
        let pick = if reals == 2 { 2 } else { rng.gen_range(0..3) };
        features.push(match pick {
            0 => {
                reals += 1;
                let lo = rng.gen_range(-5..5);
                let r = *[1, 2, 10, 20].choose(rng).unwrap();
                FeatureSpec::real(&name, int(lo), int(lo + r))
            }
            1 => {
                let lo = rng.gen_range(0..3);
                FeatureSpec::integer(&name, lo, lo + *[2, 4, 5, 10].choose(rng).unwrap())
            }
            _ => FeatureSpec::binary(&name),
        });
    }
    FeatureSchema::new(features).unwrap()
}

/// A split on one encoded variable with a threshold inside its domain.
fn random_split(rng: &mut ChaCha8Rng, schema: &FeatureSchema) -> (Var, Rel, Rational) {
    let vars = schema.encoded_vars();
    let (v, sort) = vars.choose(rng).unwrap().clone();
    let j = schema.owner(&v).unwrap();
    let f = schema.feature(j);
    match sort {
        Sort::Bool => (v, Rel::Eq, int(1)),
        _ if matches!(f.kind, FeatureKind::Real) => {
            // Multiples of range/20 keep every leaf region wide.
            let m = rng.gen_range(1..20);
            let t = &f.lo + f.range() * ratio(m, 20);
            let rel = *[Rel::Le, Rel::Lt, Rel::Gt, Rel::Ge].choose(rng).unwrap();
            (v, rel, t)
        }
        _ => {
            let lo: i64 = f.lo.to_integer().try_into().unwrap();
            let hi: i64 = f.hi.to_integer().try_into().unwrap();
            let t = rng.gen_range(lo..hi);
            let rel = *[Rel::Le, Rel::Gt].choose(rng).unwrap();
            (v, rel, int(t))
        }
    }
}

pub fn random_tree(rng: &mut ChaCha8Rng, schema: &FeatureSchema, depth: usize) -> Tree {
    fn grow(rng: &mut ChaCha8Rng, schema: &FeatureSchema, depth: usize, nodes: &mut Vec<Node>) -> usize {
        let me = nodes.len();
        if depth == 0 || (nodes.len() > 1 && rng.gen_bool(0.25)) {
            nodes.push(leaf(rng.gen_range(0..=1)));
            return me;
        }
        nodes.push(leaf(0));
        let (v, rel, t) = random_split(rng, schema);
        let left = grow(rng, schema, depth - 1, nodes);
        let right = grow(rng, schema, depth - 1, nodes);
        nodes[me] = split(v.name(), rel, t, left, right);
        me
    }
    let mut nodes = Vec::new();
    grow(rng, schema, depth.max(1), &mut nodes);
    let leaves: Vec<usize> = (0..nodes.len()).filter(|&i| matches!(nodes[i], Node::Leaf(_))).collect();
    if leaves.iter().all(|&i| nodes[i] == nodes[leaves[0]]) {
        let flip = match nodes[leaves[0]] {
            Node::Leaf(l) => 1 - l,
            _ => unreachable!(),
        };
        nodes[*leaves.last().unwrap()] = leaf(flip);
    }
    Tree { nodes }
}

fn small(rng: &mut ChaCha8Rng, span: i64) -> Rational {
    ratio(rng.gen_range(-span..=span), 2)
}

/// Raw midpoint of every feature, as encoded values.
fn midpoint(schema: &FeatureSchema) -> Assignment {
    let raw: Vec<Rational> = schema
        .features()
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Real => (&f.lo + &f.hi) / int(2),
            _ => f.lo.clone(),
        })
        .collect();
    schema.encode(&raw).unwrap()
}

pub fn random_kind(rng: &mut ChaCha8Rng, schema: &FeatureSchema, kind: &str) -> ModelKind {
    let vars = schema.encoded_vars();
    match kind {
        "decision-tree" => {
            let depth = rng.gen_range(1..=3);
            ModelKind::DecisionTree(random_tree(rng, schema, depth))
        }
        "random-forest" => ModelKind::RandomForest {
            trees: (0..rng.gen_range(2..=4)).map(|_| random_tree(rng, schema, 2)).collect(),
            tie: rng.gen_range(0..=1),
        },
        "logistic-regression" => {
            let weights: Vec<Rational> = vars.iter().map(|_| small(rng, 6)).collect();
            // Put the boundary near the middle of the domain.
            let mid = midpoint(schema);
            let at_mid: Rational = vars.iter().zip(&weights).map(|((v, _), w)| w * &mid[v]).sum();
            let bias = -at_mid + small(rng, 2);
            ModelKind::LogisticRegression { weights, bias }
        }
        "mlp-relu" => {
            let widths = [vars.len(), rng.gen_range(2..=3), rng.gen_range(1..=3)];
            let mut layers = Vec::new();
            for w in widths.windows(2) {
                layers.push(Layer {
                    weights: (0..w[1]).map(|_| (0..w[0]).map(|_| small(rng, 4)).collect()).collect(),
                    bias: (0..w[1]).map(|_| small(rng, 4)).collect(),
                });
            }
            layers.push(Layer {
                weights: vec![(0..widths[2]).map(|_| small(rng, 4)).collect()],
                bias: vec![small(rng, 2)],
            });
            ModelKind::MlpRelu { layers }
        }
        other => panic!("unknown kind {other}"),
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, schema: &FeatureSchema, kind: &str) -> ModelSpec {
    ModelSpec::new(schema.clone(), random_kind(rng, schema, kind)).unwrap()
}

/// A schema-valid raw instance; reals on a 1/1000 grid of their range.
pub fn random_raw(rng: &mut ChaCha8Rng, schema: &FeatureSchema) -> Vec<Rational> {
    schema
        .features()
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Real => &f.lo + f.range() * ratio(rng.gen_range(0..=1000), 1000),
            FeatureKind::Integer => {
                let lo: i64 = f.lo.to_integer().try_into().unwrap();
                let hi: i64 = f.hi.to_integer().try_into().unwrap();
                int(rng.gen_range(lo..=hi))
            }
            FeatureKind::Binary => int(rng.gen_range(0..=1)),
            FeatureKind::Categorical { categories } => int(rng.gen_range(0..categories.len() as i64)),
            FeatureKind::Ordinal { levels, .. } => int(rng.gen_range(1..=*levels as i64)),
        })
        .collect()
}

/// Every encoded input fixed to its value in `x`.
pub fn inputs(schema: &FeatureSchema, raw: &[Rational]) -> Assignment {
    schema.encode(raw).unwrap()
}

/// Grid values of feature `j`: 1001 points for reals, every value otherwise,
/// each paired with its offset from `lo` in thousandths of the range.
pub fn grid_axis(f: &FeatureSpec) -> Vec<(Rational, i64)> {
    match f.kind {
        FeatureKind::Real => (0..=1000).map(|k| (&f.lo + f.range() * ratio(k, 1000), k)).collect(),
        FeatureKind::Integer => {
            let lo: i64 = f.lo.to_integer().try_into().unwrap();
            let hi: i64 = f.hi.to_integer().try_into().unwrap();
            let r = hi - lo;
            (lo..=hi).map(|v| (int(v), (v - lo) * 1000 / r)).collect()
        }
        FeatureKind::Binary => vec![(int(0), 0), (int(1), 1000)],
        _ => panic!("grid schemas have no categorical features"),
    }
}

/// Every grid point with its prediction and per-axis offsets.
pub struct Grid {
    pub points: Vec<Vec<i64>>,
    pub predictions: Vec<u8>,
    pub binary: Vec<bool>,
}

pub fn grid(model: &ModelSpec) -> Grid {
    use rayon::prelude::*;
    let axes: Vec<Vec<(Rational, i64)>> = model.schema.features().iter().map(grid_axis).collect();
    let mut index: Vec<Vec<usize>> = vec![vec![]];
    for axis in &axes {
        index = index
            .into_iter()
            .flat_map(|p| (0..axis.len()).map(move |i| [p.clone(), vec![i]].concat()))
            .collect();
    }
    let predictions: Vec<u8> = index
        .par_iter()
        .map(|idx| {
            let raw: Vec<Rational> = idx.iter().zip(&axes).map(|(&i, a)| a[i].0.clone()).collect();
            model.predict(&model.schema.encode(&raw).unwrap())
        })
        .collect();
    let points = index
        .iter()
        .map(|idx| idx.iter().zip(&axes).map(|(&i, a)| a[i].1).collect())
        .collect();
    let binary = model
        .schema
        .features()
        .iter()
        .map(|f| matches!(f.kind, FeatureKind::Binary))
        .collect();
    Grid { points, predictions, binary }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L0,
    L1,
    Linf,
}

/// Exact distance between two grid points.
pub fn grid_distance(norm: Norm, a: &[i64], b: &[i64]) -> Rational {
    let j = a.len() as i64;
    let units = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    match norm {
        Norm::L0 => ratio(units.filter(|&u| u != 0).count() as i64, j),
        Norm::L1 => ratio(units.sum(), 1000 * j),
        Norm::Linf => ratio(units.max().unwrap_or(0), 1000),
    }
}

/// Smallest grid distance from `x_hat` to a point predicted `target`.
/// Numerators share a denominator per norm, so the scan stays in integers.
pub fn grid_nearest(g: &Grid, x_hat: &[i64], target: u8, norm: Norm) -> Option<Rational> {
    let j = x_hat.len() as i64;
    let numerator = |p: &[i64]| -> i64 {
        let units = p.iter().zip(x_hat).map(|(x, y)| (x - y).abs());
        match norm {
            Norm::L0 => units.filter(|&u| u != 0).count() as i64,
            Norm::L1 => units.sum(),
            Norm::Linf => units.max().unwrap_or(0),
        }
    };
    let best = g
        .points
        .iter()
        .zip(&g.predictions)
        .filter(|(_, &p)| p == target)
        .map(|(p, _)| numerator(p))
        .min()?;
    Some(match norm {
        Norm::L0 => ratio(best, j),
        Norm::L1 => ratio(best, 1000 * j),
        Norm::Linf => ratio(best, 1000),
    })
}

/// Offsets of a raw grid instance.
pub fn grid_offsets(schema: &FeatureSchema, raw: &[Rational]) -> Vec<i64> {
    schema
        .features()
        .iter()
        .zip(raw)
        .map(|(f, v)| {
            let k = (v - &f.lo) * int(1000) / f.range();
            assert!(k.is_integer(), "{v} is off the grid of {}", f.name);
            k.to_integer().try_into().unwrap()
        })
        .collect()
}

/// Random bounded formulae over at most three variables. Int and Bool
/// variables only when `integral`, so grid enumeration decides them.
pub fn random_formula(rng: &mut ChaCha8Rng, integral: bool) -> Formula {
    let n = rng.gen_range(1..=3);
    let mut sorts = SortMap::new();
    let mut bounds = Vec::new();
    for i in 0..n {
        let v = Var::new(format!("v{i}"));
        let sort = match rng.gen_range(0..if integral { 2 } else { 3 }) {
            0 => Sort::Int,
            1 => Sort::Bool,
            _ => Sort::Real,
        };
        sorts.insert(v.clone(), sort);
        if sort != Sort::Bool {
            bounds.push(Term::atom(LinExpr::var(v.clone()), Rel::Ge, LinExpr::constant(int(-4))));
            bounds.push(Term::atom(LinExpr::var(v.clone()), Rel::Le, LinExpr::constant(int(4))));
        }
    }
    let vars: Vec<Var> = sorts.keys().cloned().collect();
    let atom = |rng: &mut ChaCha8Rng| {
        let mut e = LinExpr::zero();
        for v in &vars {
            if rng.gen_bool(0.7) {
                e.add_term(v.clone(), int(rng.gen_range(-3..=3)));
            }
        }
        let rel = *[Rel::Le, Rel::Lt, Rel::Ge, Rel::Gt, Rel::Eq, Rel::Ne].choose(rng).unwrap();
        Term::atom(e, rel, LinExpr::constant(ratio(rng.gen_range(-8..=8), rng.gen_range(1..=2))))
    };
    let clause = |rng: &mut ChaCha8Rng| {
        let k = rng.gen_range(1..=3);
        let lits: Vec<Term> = (0..k)
            .map(|_| {
                let a = atom(rng);
                if rng.gen_bool(0.2) {
                    Term::not(a)
                } else {
                    a
                }
            })
            .collect();
        Term::or(lits)
    };
    let clauses: Vec<Term> = (0..rng.gen_range(1..=4)).map(|_| clause(rng)).collect();
    let body = Term::and(bounds.into_iter().chain(clauses));
    Formula::new(body, sorts).unwrap()
}

/// Exhaustive check over the integer box `[-4, 4]`.
pub fn grid_sat(f: &Formula) -> Option<Assignment> {
    let vars: Vec<(Var, Sort)> = f.sorts().iter().map(|(v, s)| (v.clone(), *s)).collect();
    let mut env = Assignment::new();
    fn go(f: &Formula, vars: &[(Var, Sort)], i: usize, env: &mut Assignment) -> bool {
        if i == vars.len() {
            return f.eval(env).unwrap();
        }
        let (v, s) = &vars[i];
        let range = if *s == Sort::Bool { 0..=1 } else { -4..=4 };
        for x in range {
            env.insert(v.clone(), int(x));
            if go(f, vars, i + 1, env) {
                return true;
            }
        }
        false
    }
    go(f, &vars, 0, &mut env).then_some(env)
}
