//! `cfsat`: compile models to formulae, explain single predictions, run
//! batch experiments.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use thiserror::Error;

use cfsat_core::compile::path_count;
use cfsat_core::constraints::ConstraintSpec;
use cfsat_core::distance::{distance_vector, DistanceConfig, NormPreset};
use cfsat_core::harness::{self, Dataset};
use cfsat_core::model::parse_model;
use cfsat_core::rational::{format_rational, int, parse_rational, Rational};
use cfsat_core::schema::FeatureSchema;
use cfsat_core::search::{CompiledModel, Explainer, SearchConfig, SearchError, SearchResult};
use cfsat_core::solver::external::SOLVER_ENV;
use cfsat_core::solver::{emit_smtlib, Backend, ExternalBackend, SolveError};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    OverConstrained(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::OverConstrained(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Io(_) => 5,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::OverConstrained { .. } => CliError::OverConstrained(e.to_string()),
            SearchError::Budget(_) => CliError::Budget(e.to_string()),
            SearchError::Oracle(SolveError::BackendMissing(_)) => CliError::Config(e.to_string()),
            SearchError::Oracle(_) | SearchError::NotFlipped => CliError::Failed(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "cfsat", version, about = "Nearest counterfactual explanations by satisfiability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the model's formula as an SMT-LIB2 script.
    Compile {
        #[arg(long)]
        model: PathBuf,
        /// Output script; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Counterfactuals for one factual instance, as JSON lines.
    Explain(ExplainArgs),
    /// Counterfactuals for the first N negatively predicted dataset rows.
    Batch(BatchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Internal,
    External,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: PathBuf,
    /// Norm preset(s), comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["alpha", "beta", "gamma"])]
    norm: Vec<NormPreset>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Accuracy of the bisection, in (0, 1).
    #[arg(long, value_delimiter = ',', default_value = "1e-3")]
    epsilon: Vec<String>,
    /// JSON file with per-feature actionability and ranges.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "internal")]
    backend: BackendKind,
    /// Wall-clock budget per search, in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    /// Factual instance as `name=value` pairs, comma separated.
    #[arg(long, required_unless_present = "row", conflicts_with = "row")]
    factual: Option<String>,
    /// 1-based dataset row to explain instead of `--factual`.
    #[arg(long, requires = "data")]
    row: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Number of diverse counterfactuals.
    #[arg(long)]
    diverse: Option<usize>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Schema with the label column; defaults to the model's own schema.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    n_samples: usize,
    /// Output directory for `records.jsonl` and `report.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Also rerun with this feature immutable and report the change.
    #[arg(long)]
    restrict: Option<String>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<CompiledModel, CliError> {
    let spec = parse_model(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    CompiledModel::new(spec).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn rational(flag: &str, text: &str) -> Result<Rational, CliError> {
    parse_rational(text).map_err(|e| CliError::Config(format!("--{flag}: {e}")))
}

fn norms(c: &Common) -> Result<Vec<DistanceConfig>, CliError> {
    if c.alpha.is_some() || c.beta.is_some() || c.gamma.is_some() {
        let w = |flag, v: &Option<String>| v.as_deref().map_or(Ok(int(0)), |t| rational(flag, t));
        let cfg = DistanceConfig::new(w("alpha", &c.alpha)?, w("beta", &c.beta)?, w("gamma", &c.gamma)?)
            .map_err(|e| CliError::Config(e.to_string()))?;
        return Ok(vec![cfg]);
    }
    Ok(c.norm.iter().map(|&p| DistanceConfig::preset(p)).collect())
}

fn epsilons(c: &Common) -> Result<Vec<Rational>, CliError> {
    c.epsilon
        .iter()
        .map(|t| {
            let e = rational("epsilon", t)?;
            SearchConfig::new(e.clone()).map_err(|err| CliError::Config(format!("--epsilon {t}: {err}")))?;
            Ok(e)
        })
        .collect()
}

fn backend(kind: BackendKind) -> Result<Backend, CliError> {
    match kind {
        BackendKind::Internal => Ok(Backend::default()),
        BackendKind::External => {
            let b = ExternalBackend::from_env().ok_or_else(|| {
                CliError::Config(format!("--backend external needs {SOLVER_ENV} set to a solver command line"))
            })?;
            if !b.available() {
                return Err(CliError::Config(format!(
                    "solver `{}` from {SOLVER_ENV} cannot be started",
                    b.describe()
                )));
            }
            Ok(Backend::External(b))
        }
    }
}

fn search_config(c: &Common, epsilon: Rational) -> Result<SearchConfig, CliError> {
    let mut cfg = SearchConfig::new(epsilon)
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_backend(backend(c.backend)?);
    if let Some(t) = c.time_budget {
        let t = Duration::try_from_secs_f64(t).map_err(|e| CliError::Config(format!("--time-budget: {e}")))?;
        cfg.time_budget = Some(t);
    }
    Ok(cfg)
}

fn constraints(c: &Common, schema: &FeatureSchema) -> Result<ConstraintSpec, CliError> {
    let Some(path) = &c.constraints else {
        return Ok(ConstraintSpec::none());
    };
    let spec = ConstraintSpec::parse(&read(path)?, schema)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    spec.validate(schema).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

fn dataset(data: &Path, schema: Option<&Path>, model: &CompiledModel) -> Result<Dataset, CliError> {
    let loaded = match schema {
        Some(s) => harness::load_dataset(data, s),
        None => {
            let file = fs::File::open(data).map_err(|e| CliError::Io(format!("cannot read {}: {e}", data.display())))?;
            let declared = vec![true; model.schema().len()];
            harness::parse_dataset(file, model.schema(), &declared)
        }
    };
    loaded.map_err(|e| match e {
        harness::DatasetError::Io { .. } => CliError::Io(e.to_string()),
        _ => CliError::Config(format!("{}: {e}", data.display())),
    })
}

fn parse_factual(text: &str, schema: &FeatureSchema) -> Result<Vec<Rational>, CliError> {
    let mut values: Vec<Option<Rational>> = vec![None; schema.len()];
    for pair in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--factual: expected name=value, got `{pair}`")))?;
        let j = schema
            .index_of(name.trim())
            .ok_or_else(|| CliError::Config(format!("--factual: unknown feature `{}`", name.trim())))?;
        let v = schema.feature(j).parse_value(value).map_err(|e| CliError::Config(format!("--factual: {e}")))?;
        values[j] = Some(v);
    }
    values
        .into_iter()
        .enumerate()
        .map(|(j, v)| v.ok_or_else(|| CliError::Config(format!("--factual: missing `{}`", schema.feature(j).name))))
        .collect()
}

fn named(schema: &FeatureSchema, xs: &[Rational], show: impl Fn(usize, &Rational) -> String) -> Value {
    xs.iter()
        .enumerate()
        .map(|(j, v)| (schema.feature(j).name.clone(), Value::String(show(j, v))))
        .collect::<Map<_, _>>()
        .into()
}

fn record(model: &CompiledModel, x_hat: &[Rational], index: usize, r: &SearchResult) -> Value {
    let schema = model.schema();
    json!({
        "index": index,
        "prediction": model.spec.predict(&r.encoded),
        "counterfactual": named(schema, &r.counterfactual, |j, v| schema.feature(j).display_value(v)),
        "deltas": named(schema, &distance_vector(schema, &r.counterfactual, x_hat), |_, v| format_rational(v)),
        "distance": format_rational(&r.distance),
        "delta_min": format_rational(&r.delta_min),
        "delta_max": format_rational(&r.delta_max),
        "oracle_calls": r.calls.len(),
    })
}

fn cmd_compile(model: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let m = load_model(model)?;
    let script = emit_smtlib(&m.formula);
    match out {
        Some(p) => write(p, script.as_bytes())?,
        None => print!("{script}"),
    }
    eprintln!(
        "paths: {}, variables: {}",
        path_count(m.program.body()),
        m.formula.sorts().len()
    );
    Ok(())
}

fn cmd_explain(a: &ExplainArgs) -> Result<(), CliError> {
    let model = load_model(&a.common.model)?;
    let schema = model.schema();
    let mut norms = norms(&a.common)?;
    let epsilons = epsilons(&a.common)?;
    if norms.len() > 1 || epsilons.len() > 1 {
        return Err(CliError::Config("explain takes a single norm and accuracy".into()));
    }
    let distance = norms.pop().unwrap_or_else(|| DistanceConfig::preset(NormPreset::L1));
    let spec = constraints(&a.common, schema)?;
    let x_hat = match (&a.factual, a.row) {
        (Some(text), _) => parse_factual(text, schema)?,
        (None, Some(row)) => {
            let data = dataset(a.data.as_deref().unwrap(), a.schema.as_deref(), &model)?;
            let i = row.checked_sub(1).filter(|&i| i < data.len()).ok_or_else(|| {
                CliError::Config(format!("--row {row} is outside 1..={}", data.len()))
            })?;
            data.rows[i].clone()
        }
        (None, None) => unreachable!("clap requires one of --factual and --row"),
    };
    let k = a.diverse.unwrap_or(if spec.count > 0 { spec.count } else { 1 });
    if k == 0 {
        return Err(CliError::Config("--diverse must be at least 1".into()));
    }
    let mut explainer = Explainer::new(&model, distance);
    explainer.constraints = spec;
    explainer.search = search_config(&a.common, epsilons[0].clone())?;

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let emit = |out: &mut io::StdoutLock, i, r: &SearchResult| -> Result<(), CliError> {
        writeln!(out, "{}", record(&model, &x_hat, i, r)).map_err(|e| CliError::Io(e.to_string()))
    };
    if k == 1 {
        let r = explainer.nearest(&x_hat)?;
        return emit(&mut out, 0, &r);
    }
    let outcome = explainer.diverse(&x_hat, k, None);
    for (i, r) in outcome.results.iter().enumerate() {
        emit(&mut out, i, r)?;
    }
    match outcome.stopped {
        Some(e) if outcome.results.is_empty() => Err(e.into()),
        Some(e) => {
            eprintln!("stopped after {} of {k}: {e}", outcome.results.len());
            Ok(())
        }
        None => Ok(()),
    }
}

fn cmd_batch(a: &BatchArgs) -> Result<(), CliError> {
    let model = load_model(&a.common.model)?;
    let mut norms = norms(&a.common)?;
    if norms.is_empty() {
        norms = [NormPreset::L0, NormPreset::L1, NormPreset::Linf]
            .into_iter()
            .map(DistanceConfig::preset)
            .collect();
    }
    let epsilons = epsilons(&a.common)?;
    let spec = constraints(&a.common, model.schema())?;
    let data = dataset(&a.data, a.schema.as_deref(), &model)?;
    let cfg = harness::BatchConfig {
        norms,
        epsilons: epsilons.clone(),
        constraints: spec,
        n_samples: a.n_samples,
        search: search_config(&a.common, epsilons[0].clone())?,
        jobs: a.jobs,
    };
    let bad = |e: harness::BatchError| CliError::Config(e.to_string());
    harness::validate(&model, &data, &cfg).map_err(bad)?;
    let restricted_cfg = match &a.restrict {
        Some(f) => {
            if model.schema().index_of(f).is_none() {
                return Err(CliError::Config(format!("--restrict: unknown feature `{f}`")));
            }
            let mut c = cfg.clone();
            c.constraints.set_actionability(f, cfsat_core::schema::Actionability::Immutable);
            harness::validate(&model, &data, &c).map_err(bad)?;
            Some(c)
        }
        None => None,
    };
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", a.out.display())))?;

    let report = harness::run_batch(&model, &data, &cfg).map_err(bad)?;
    let mut jsonl = Vec::new();
    harness::write_jsonl(&report.records, model.schema(), &mut jsonl).map_err(|e| CliError::Io(e.to_string()))?;
    write(&a.out.join("records.jsonl"), &jsonl)?;
    let mut csv = Vec::new();
    harness::write_csv(&report.metrics, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    write(&a.out.join("report.csv"), &csv)?;

    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for m in &report.metrics {
        println!(
            "{} eps={}: coverage {:.1}% (MO {:.1}%), mean distance {} (MO {}), improvement {}%, {:.1} ms/sample",
            m.norm,
            format_rational(&m.epsilon),
            m.coverage_mace,
            m.coverage_mo,
            opt(m.mean_mace),
            opt(m.mean_mo),
            opt(m.improvement),
            m.mean_wall_ms
        );
    }
    if let (Some(c), Some(f)) = (restricted_cfg, &a.restrict) {
        let restricted = harness::run_batch(&model, &data, &c).map_err(bad)?;
        let mut jsonl = Vec::new();
        harness::write_jsonl(&restricted.records, model.schema(), &mut jsonl).map_err(|e| CliError::Io(e.to_string()))?;
        write(&a.out.join("records_restricted.jsonl"), &jsonl)?;
        for norm in &cfg.norms {
            for eps in &cfg.epsilons {
                let pick = |rs: &[harness::SampleRecord]| -> Vec<harness::SampleRecord> {
                    rs.iter()
                        .filter(|r| r.norm == norm.name() && &r.epsilon == eps)
                        .cloned()
                        .collect()
                };
                if let Some(s) = harness::restriction_study(
                    model.schema(),
                    f,
                    &pick(&report.records),
                    &pick(&restricted.records),
                ) {
                    println!(
                        "{} eps={}: {:.1}% change `{f}`; fixing it costs {}% more distance",
                        norm.name(),
                        format_rational(eps),
                        s.changed_pct,
                        opt(s.relative_increase)
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compile { model, out } => cmd_compile(model, out.as_deref()),
        Command::Explain(a) => cmd_explain(a),
        Command::Batch(a) => cmd_batch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
