//! Batch experiments: one nearest-counterfactual search per factual sample,
//! norm and accuracy, with the Minimum Observable alongside.

use std::io::Write;
use std::time::Instant;

use num_traits::Zero;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use super::baseline::{minimum_observable, MoResult};
use super::dataset::Dataset;
use crate::constraints::{is_plausible, ConstraintError, ConstraintSpec};
use crate::distance::{distance_vector, DistanceConfig};
use crate::rational::{format_rational, to_f64, Rational};
use crate::schema::FeatureSchema;
use crate::search::{CompiledModel, Explainer, SearchConfig, SearchError};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("requested {requested} factual samples but only {available} rows are predicted negative")]
    TooManySamples { requested: usize, available: usize },
    #[error("dataset columns {data:?} do not match the model features {model:?}")]
    Features { data: Vec<String>, model: Vec<String> },
    #[error("no norms or no accuracies given")]
    NothingToRun,
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("dataset row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write report: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub norms: Vec<DistanceConfig>,
    pub epsilons: Vec<Rational>,
    pub constraints: ConstraintSpec,
    pub n_samples: usize,
    /// Template for every search; its accuracy is replaced per run.
    pub search: SearchConfig,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    OverConstrained,
    Budget,
    Error,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::OverConstrained => "over-constrained",
            Status::Budget => "budget",
            Status::Error => "error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    /// Position among the factual samples.
    pub sample: usize,
    /// Dataset row of the factual instance.
    pub row: usize,
    pub norm: String,
    pub epsilon: Rational,
    pub status: Status,
    pub error: Option<String>,
    pub factual: Vec<Rational>,
    pub counterfactual: Option<Vec<Rational>>,
    /// `δ_j` per raw feature.
    pub deltas: Option<Vec<Rational>>,
    pub distance: Option<Rational>,
    pub delta_min: Option<Rational>,
    pub delta_max: Option<Rational>,
    pub oracle_calls: usize,
    pub probed: bool,
    pub wall_ms: f64,
    pub mo: Option<MoResult>,
}

impl SampleRecord {
    /// Covered: a plausible, schema-valid counterfactual came back.
    pub fn covered(&self) -> bool {
        self.status == Status::Ok && self.counterfactual.is_some()
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> Value {
        let show = |xs: &[Rational]| -> Value {
            schema
                .features()
                .iter()
                .zip(xs)
                .map(|(f, v)| (f.name.clone(), Value::String(f.display_value(v))))
                .collect::<serde_json::Map<_, _>>()
                .into()
        };
        let exact = |v: &Option<Rational>| v.as_ref().map(format_rational);
        json!({
            "sample": self.sample,
            "row": self.row,
            "norm": self.norm,
            "epsilon": format_rational(&self.epsilon),
            "status": self.status.as_str(),
            "error": self.error,
            "factual": show(&self.factual),
            "counterfactual": self.counterfactual.as_deref().map(show),
            "deltas": self.deltas.as_ref().map(|d| {
                schema.features().iter().zip(d)
                    .map(|(f, v)| (f.name.clone(), Value::String(format_rational(v))))
                    .collect::<serde_json::Map<_, _>>()
            }),
            "distance": exact(&self.distance),
            "delta_min": exact(&self.delta_min),
            "delta_max": exact(&self.delta_max),
            "oracle_calls": self.oracle_calls,
            "boundary_probe": self.probed,
            "mo": self.mo.as_ref().map(|m| json!({
                "row": m.row,
                "counterfactual": show(&m.counterfactual),
                "distance": format_rational(&m.distance),
            })),
            "wall_ms": self.wall_ms,
        })
    }
}

/// Aggregates for one (norm, accuracy) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub norm: String,
    pub epsilon: Rational,
    pub samples: usize,
    /// Percentages in `[0, 100]`.
    pub coverage_mace: f64,
    pub coverage_mo: f64,
    pub mean_mace: Option<f64>,
    pub median_mace: Option<f64>,
    pub mean_mo: Option<f64>,
    pub median_mo: Option<f64>,
    /// `100·mean(1 − d_MACE/d_MO)` over samples both methods cover.
    pub improvement: Option<f64>,
    pub mean_calls: f64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub records: Vec<SampleRecord>,
    pub metrics: Vec<MetricsRow>,
}

/// First `n` rows (in stored order) the model predicts as 0.
pub fn factual_samples(predictions: &[u8], n: usize) -> Result<Vec<usize>, BatchError> {
    let negatives: Vec<usize> = (0..predictions.len()).filter(|&i| predictions[i] == 0).collect();
    if n > negatives.len() {
        return Err(BatchError::TooManySamples {
            requested: n,
            available: negatives.len(),
        });
    }
    Ok(negatives[..n].to_vec())
}

pub fn predict_all(model: &CompiledModel, data: &Dataset) -> Result<Vec<u8>, BatchError> {
    data.rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            model.predict(r).map_err(|e| BatchError::Row {
                row: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Checks everything a batch needs before any search runs.
pub fn validate(model: &CompiledModel, data: &Dataset, cfg: &BatchConfig) -> Result<Vec<u8>, BatchError> {
    let names = |s: &FeatureSchema| s.features().iter().map(|f| f.name.clone()).collect::<Vec<_>>();
    if names(model.schema()) != names(&data.schema) {
        return Err(BatchError::Features {
            data: names(&data.schema),
            model: names(model.schema()),
        });
    }
    if cfg.norms.is_empty() || cfg.epsilons.is_empty() {
        return Err(BatchError::NothingToRun);
    }
    for e in &cfg.epsilons {
        cfg.search.clone().with_epsilon(e.clone())?;
    }
    cfg.constraints.validate(model.schema())?;
    let predictions = predict_all(model, data)?;
    factual_samples(&predictions, cfg.n_samples)?;
    Ok(predictions)
}

pub fn run_batch(model: &CompiledModel, data: &Dataset, cfg: &BatchConfig) -> Result<BatchReport, BatchError> {
    let predictions = validate(model, data, cfg)?;
    let samples = factual_samples(&predictions, cfg.n_samples)?;
    let mut tasks = Vec::new();
    for norm in &cfg.norms {
        for eps in &cfg.epsilons {
            for (k, &row) in samples.iter().enumerate() {
                tasks.push((norm, eps, k, row));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| BatchError::Pool(e.to_string()))?;
    let records: Vec<SampleRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(norm, eps, k, row)| run_sample(model, data, &predictions, cfg, norm, eps, k, row))
            .collect()
    });
    let mut metrics = Vec::new();
    for norm in &cfg.norms {
        for eps in &cfg.epsilons {
            let name = norm.name();
            let group: Vec<&SampleRecord> = records
                .iter()
                .filter(|r| r.norm == name && &r.epsilon == eps)
                .collect();
            metrics.push(metrics_row(&name, eps, &group));
        }
    }
    Ok(BatchReport { records, metrics })
}

#[allow(clippy::too_many_arguments)]
fn run_sample(
    model: &CompiledModel,
    data: &Dataset,
    predictions: &[u8],
    cfg: &BatchConfig,
    norm: &DistanceConfig,
    eps: &Rational,
    sample: usize,
    row: usize,
) -> SampleRecord {
    let schema = model.schema();
    let x_hat = &data.rows[row];
    let y_hat = predictions[row];
    let start = Instant::now();
    let mut explainer = Explainer::new(model, norm.clone());
    explainer.constraints = cfg.constraints.clone();
    // Accuracies were validated up front.
    explainer.search = cfg.search.clone().with_epsilon(eps.clone()).expect("validated accuracy");
    let outcome = explainer.nearest(x_hat);
    let wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    let mo = minimum_observable(schema, &data.rows, predictions, x_hat, y_hat, norm, &cfg.constraints);
    let mut rec = SampleRecord {
        sample,
        row: row + 1,
        norm: norm.name(),
        epsilon: eps.clone(),
        status: Status::Ok,
        error: None,
        factual: x_hat.clone(),
        counterfactual: None,
        deltas: None,
        distance: None,
        delta_min: None,
        delta_max: None,
        oracle_calls: 0,
        probed: false,
        wall_ms,
        mo,
    };
    match outcome {
        Ok(r) => {
            rec.oracle_calls = r.calls.len();
            rec.probed = r.probed();
            rec.delta_min = Some(r.delta_min.clone());
            rec.delta_max = Some(r.delta_max.clone());
            let valid = schema.check_raw(&r.counterfactual).is_ok()
                && is_plausible(schema, &r.counterfactual, x_hat, &cfg.constraints);
            if valid {
                rec.deltas = Some(distance_vector(schema, &r.counterfactual, x_hat));
                rec.distance = Some(r.distance);
                rec.counterfactual = Some(r.counterfactual);
            } else {
                rec.status = Status::Error;
                rec.error = Some("returned counterfactual is not plausible".into());
            }
        }
        Err(e) => {
            rec.status = match e {
                SearchError::OverConstrained { .. } => Status::OverConstrained,
                ref b if b.is_budget() => Status::Budget,
                _ => Status::Error,
            };
            rec.error = Some(e.to_string());
        }
    }
    rec
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// `100·mean(1 − a_i/b_i)`, skipping pairs with `b_i = 0`.
pub fn improvement(pairs: &[(Rational, Rational)]) -> Option<f64> {
    let ratios: Vec<f64> = pairs
        .iter()
        .filter(|(_, b)| !b.is_zero())
        .map(|(a, b)| to_f64(&(Rational::from_integer(1.into()) - a / b)))
        .collect();
    mean(&ratios).map(|m| 100.0 * m)
}

pub fn metrics_row(norm: &str, eps: &Rational, group: &[&SampleRecord]) -> MetricsRow {
    let n = group.len();
    let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let mace: Vec<f64> = group.iter().filter_map(|r| r.distance.as_ref()).map(to_f64).collect();
    let mo: Vec<f64> = group.iter().filter_map(|r| r.mo.as_ref()).map(|m| to_f64(&m.distance)).collect();
    let both: Vec<(Rational, Rational)> = group
        .iter()
        .filter_map(|r| Some((r.distance.clone()?, r.mo.as_ref()?.distance.clone())))
        .collect();
    let calls: Vec<f64> = group.iter().map(|r| r.oracle_calls as f64).collect();
    let walls: Vec<f64> = group.iter().map(|r| r.wall_ms).collect();
    MetricsRow {
        norm: norm.to_string(),
        epsilon: eps.clone(),
        samples: n,
        coverage_mace: pct(group.iter().filter(|r| r.covered()).count()),
        coverage_mo: pct(group.iter().filter(|r| r.mo.is_some()).count()),
        mean_mace: mean(&mace),
        median_mace: median(&mace),
        mean_mo: mean(&mo),
        median_mo: median(&mo),
        improvement: improvement(&both),
        mean_calls: mean(&calls).unwrap_or(0.0),
        mean_wall_ms: mean(&walls).unwrap_or(0.0),
    }
}

/// Effect of a restriction (typically an immutable feature) on samples
/// whose unrestricted counterfactual changed that feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionReport {
    pub feature: String,
    pub samples: usize,
    /// Share of covered samples whose unrestricted answer changes the feature.
    pub changed_pct: f64,
    /// `100·E[d_restr/d_unrestr − 1]` over changed samples covered in both runs.
    pub relative_increase: Option<f64>,
}

pub fn restriction_study(
    schema: &FeatureSchema,
    feature: &str,
    unrestricted: &[SampleRecord],
    restricted: &[SampleRecord],
) -> Option<RestrictionReport> {
    let j = schema.index_of(feature)?;
    let covered: Vec<&SampleRecord> = unrestricted.iter().filter(|r| r.covered()).collect();
    let changing: Vec<&SampleRecord> = covered
        .iter()
        .copied()
        .filter(|r| r.deltas.as_ref().is_some_and(|d| !d[j].is_zero()))
        .collect();
    let mut ratios = Vec::new();
    for u in &changing {
        let twin = restricted
            .iter()
            .find(|r| r.row == u.row && r.norm == u.norm && r.epsilon == u.epsilon);
        if let (Some(du), Some(dr)) = (u.distance.as_ref(), twin.and_then(|t| t.distance.as_ref())) {
            if !du.is_zero() {
                ratios.push(to_f64(&(dr / du)) - 1.0);
            }
        }
    }
    Some(RestrictionReport {
        feature: feature.to_string(),
        samples: changing.len(),
        changed_pct: if covered.is_empty() {
            0.0
        } else {
            100.0 * changing.len() as f64 / covered.len() as f64
        },
        relative_increase: mean(&ratios).map(|m| 100.0 * m),
    })
}

pub fn write_jsonl(records: &[SampleRecord], schema: &FeatureSchema, mut out: impl Write) -> Result<(), BatchError> {
    for r in records {
        serde_json::to_writer(&mut out, &r.to_json(schema)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Aggregate table; wall-clock columns are left out so reruns compare equal.
pub fn write_csv(metrics: &[MetricsRow], out: impl Write) -> Result<(), BatchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "norm",
        "epsilon",
        "samples",
        "coverage_mace",
        "coverage_mo",
        "mean_distance_mace",
        "median_distance_mace",
        "mean_distance_mo",
        "median_distance_mo",
        "improvement_pct",
        "mean_oracle_calls",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for m in metrics {
        w.write_record([
            m.norm.clone(),
            format_rational(&m.epsilon),
            m.samples.to_string(),
            format!("{:.2}", m.coverage_mace),
            format!("{:.2}", m.coverage_mo),
            opt(m.mean_mace),
            opt(m.median_mace),
            opt(m.mean_mo),
            opt(m.median_mo),
            opt(m.improvement),
            format!("{:.3}", m.mean_calls),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{leaf, split, ModelKind, ModelSpec, Tree};
    use crate::formula::Rel;
    use crate::rational::{int, ratio};
    use crate::schema::FeatureSpec;

    fn toy() -> (CompiledModel, Dataset) {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::integer("age", 0, 100),
            FeatureSpec::real("income", int(0), int(10)),
        ])
        .unwrap();
        // Approve when income > 5 and age >= 30.
        let tree = Tree {
            nodes: vec![
                split("income", Rel::Le, int(5), 1, 2),
                leaf(0),
                split("age", Rel::Lt, int(30), 3, 4),
                leaf(0),
                leaf(1),
            ],
        };
        let spec = ModelSpec::new(schema.clone(), ModelKind::DecisionTree(tree)).unwrap();
        let model = CompiledModel::new(spec).unwrap();
        let rows: Vec<Vec<Rational>> = (0..12)
            .map(|i| vec![int(20 + 5 * i), ratio(i * 7 % 11, 1)])
            .collect();
        let labels = rows.iter().map(|r| model.predict(r).unwrap()).collect();
        (model, Dataset { schema, rows, labels, dropped: 0 })
    }

    fn config(n: usize) -> BatchConfig {
        BatchConfig {
            norms: vec![DistanceConfig::l0(), DistanceConfig::l1(), DistanceConfig::linf()],
            epsilons: vec![ratio(1, 10), ratio(1, 1000)],
            constraints: ConstraintSpec::none(),
            n_samples: n,
            search: SearchConfig::default(),
            jobs: 2,
        }
    }

    #[test]
    fn improvement_formula() {
        let pairs = [(ratio(1, 10), ratio(2, 10)), (ratio(2, 10), ratio(4, 10))];
        assert_eq!(improvement(&pairs), Some(50.0));
        assert_eq!(improvement(&[]), None);
    }

    #[test]
    fn sample_selection() {
        assert_eq!(factual_samples(&[1, 0, 0, 1, 0], 2).unwrap(), vec![1, 2]);
        assert!(matches!(
            factual_samples(&[1, 0], 2),
            Err(BatchError::TooManySamples { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn toy_batch_covers_and_dominates() {
        let (model, data) = toy();
        let report = run_batch(&model, &data, &config(4)).unwrap();
        assert_eq!(report.records.len(), 3 * 2 * 4);
        assert_eq!(report.metrics.len(), 6);
        for m in &report.metrics {
            assert_eq!(m.coverage_mace, 100.0, "{m:?}");
        }
        for r in &report.records {
            assert!(r.covered());
            assert!(r.delta_max.as_ref().unwrap() - r.delta_min.as_ref().unwrap() <= r.epsilon);
            if let Some(mo) = &r.mo {
                assert!(r.distance.as_ref().unwrap() <= &(&mo.distance + &r.epsilon));
            }
        }
        let mut csv_a = Vec::new();
        write_csv(&report.metrics, &mut csv_a).unwrap();
        let again = run_batch(&model, &data, &config(4)).unwrap();
        let mut csv_b = Vec::new();
        write_csv(&again.metrics, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        let mut jsonl = Vec::new();
        write_jsonl(&report.records, model.schema(), &mut jsonl).unwrap();
        assert_eq!(String::from_utf8(jsonl).unwrap().lines().count(), 24);
    }

    #[test]
    fn restriction_never_helps() {
        let (model, data) = toy();
        let mut cfg = config(4);
        cfg.norms = vec![DistanceConfig::l1()];
        cfg.epsilons = vec![ratio(1, 1000)];
        let free = run_batch(&model, &data, &cfg).unwrap();
        cfg.constraints = ConstraintSpec::immutable(&["age"]);
        let fixed = run_batch(&model, &data, &cfg).unwrap();
        for r in &fixed.records {
            if let Some(cf) = &r.counterfactual {
                assert_eq!(cf[0], r.factual[0]);
            }
        }
        let study = restriction_study(model.schema(), "age", &free.records, &fixed.records).unwrap();
        assert!(study.changed_pct >= 0.0 && study.changed_pct <= 100.0);
        if let Some(inc) = study.relative_increase {
            assert!(inc >= -0.2, "{study:?}");
        }
    }
}
