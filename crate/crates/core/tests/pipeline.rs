//! End-to-end checks across modules: golden SMT-LIB output, interchange
//! round trips, the two theory engines against each other, file-based
//! batches.

mod common;

use std::fs;
use std::path::PathBuf;

use cfsat_core::compile::path_count;
use cfsat_core::harness::{load_dataset, run_batch, write_csv, write_jsonl, BatchConfig};
use cfsat_core::model::{emit_model, parse_model};
use cfsat_core::constraints::ConstraintSpec;
use cfsat_core::distance::DistanceConfig;
use cfsat_core::rational::ratio;
use cfsat_core::search::{CompiledModel, SearchConfig};
use cfsat_core::solver::{check_sat, check_sat_with, emit_smtlib, SolverConfig, Verdict};
use cfsat_core::Term;

use common::*;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

/// Compares against a checked-in file; `CFSAT_BLESS=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = data_dir().join(name);
    if std::env::var_os("CFSAT_BLESS").is_some() {
        fs::create_dir_all(data_dir()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

#[test]
fn tree_script_is_golden() {
    let m = CompiledModel::new(fig2()).unwrap();
    let script = emit_smtlib(&m.formula);
    golden("fig2.smt2", &script);
    assert_eq!(m.formula.term().disjuncts().len(), 4);
    assert_eq!(path_count(m.program.body()), 4);
}

#[test]
fn network_script_is_golden() {
    let m = CompiledModel::new(fig3()).unwrap();
    golden("fig3.smt2", &emit_smtlib(&m.formula));
    let Term::And(parts) = m.formula.term() else { panic!("expected a conjunction") };
    assert_eq!(parts.len(), 6);
}

#[test]
fn model_documents_are_golden() {
    golden("fig2.json", &emit_model(&fig2()));
    golden("fig3.json", &emit_model(&fig3()));
}

#[test]
fn interchange_round_trip() {
    let schema = mixed_schema();
    let mut r = rng(5);
    for kind in KINDS {
        for _ in 0..10 {
            let spec = random_model(&mut r, &schema, kind);
            let back = parse_model(&emit_model(&spec)).unwrap();
            assert_eq!(back, spec);
        }
    }
}

#[test]
fn simplex_and_elimination_agree() {
    let mut r = rng(41);
    let fm = SolverConfig::fourier_motzkin();
    for i in 0..300 {
        let f = random_formula(&mut r, i % 3 == 0);
        let a = check_sat(&f).unwrap();
        let b = check_sat_with(&f, &fm).unwrap();
        assert_eq!(a.is_sat(), b.is_sat(), "formula {i}");
        for out in [&a, &b] {
            match &out.verdict {
                Verdict::Sat(w) => assert!(f.eval(w).unwrap(), "formula {i}"),
                Verdict::Unsat(cert) => {
                    if !cert.is_external() {
                        cert.replay().unwrap_or_else(|e| panic!("formula {i}: {e}"));
                    }
                }
            }
        }
    }
}

#[test]
fn batch_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let schema = mixed_schema();
    let mut r = rng(9);
    let spec = random_model(&mut r, &schema, "decision-tree");
    let mut csv = String::from("income,age,sex,job,edu,label\n");
    let mut negatives = 0;
    for i in 0..60 {
        let x = random_raw(&mut r, &schema);
        let y = spec.predict(&inputs(&schema, &x));
        negatives += usize::from(y == 0);
        let cells: Vec<String> = schema
            .features()
            .iter()
            .zip(&x)
            .map(|(f, v)| f.display_value(v))
            .collect();
        // One row with a missing cell, dropped on load.
        let income = if i == 7 { "?".to_string() } else { cells[0].clone() };
        csv.push_str(&format!("{income},{},{},{},{},{y}\n", cells[1], cells[2], cells[3], cells[4]));
    }
    fs::write(dir.path().join("data.csv"), &csv).unwrap();
    fs::write(dir.path().join("schema.json"), schema.to_json().to_string()).unwrap();
    let data = load_dataset(&dir.path().join("data.csv"), &dir.path().join("schema.json")).unwrap();
    assert_eq!((data.len(), data.dropped), (59, 1));

    let model = CompiledModel::new(spec).unwrap();
    let cfg = BatchConfig {
        norms: vec![DistanceConfig::l0(), DistanceConfig::l1(), DistanceConfig::linf()],
        epsilons: vec![ratio(1, 100)],
        constraints: ConstraintSpec::none(),
        n_samples: negatives.min(5),
        search: SearchConfig::default(),
        jobs: 1,
    };
    let report = run_batch(&model, &data, &cfg).unwrap();
    assert_eq!(report.metrics.len(), 3);
    let mut out = Vec::new();
    write_csv(&report.metrics, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(!text.contains("wall"));
    let mut jsonl = Vec::new();
    write_jsonl(&report.records, model.schema(), &mut jsonl).unwrap();
    for line in String::from_utf8(jsonl).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["factual", "counterfactual", "deltas", "delta_min", "delta_max", "oracle_calls", "wall_ms", "status"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
