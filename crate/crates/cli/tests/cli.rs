use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

fn cfsat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfsat"))
        .args(args)
        .env_remove("CFSAT_SMT_SOLVER")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// 100 rows over the tree's inputs, labelled by the tree itself.
fn toy_csv(dir: &Path) -> PathBuf {
    let mut csv = String::from("x1,x2,x3,label\n");
    for i in 0..100i64 {
        let (x1, x2) = (i % 2, (i / 2) % 2);
        let x3 = (i * 37 % 201 - 100) as f64 / 10.0;
        let y = if x1 == 1 { u8::from(x3 <= 0.0) } else { u8::from(x2 == 0) };
        csv.push_str(&format!("{x1},{x2},{x3},{y}\n"));
    }
    let path = dir.join("toy.csv");
    fs::write(&path, csv).unwrap();
    path
}

#[test]
fn compile_prints_counts_and_script() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig2.smt2");
    let o = cfsat(&["compile", "--model", data("fig2.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("paths: 4, variables: 4"));
    let script = fs::read_to_string(out).unwrap();
    assert_eq!(script.matches("(and (= x1").count(), 4);

    let o = cfsat(&["compile", "--model", data("fig3.json").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(text(&o.stdout).starts_with("(set-logic QF_LIRA)"));
    assert!(text(&o.stderr).contains("paths: 8"));
}

#[test]
fn compile_unreadable_model_is_io_error() {
    let o = cfsat(&["compile", "--model", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(text(&o.stderr).contains("/nonexistent/model.json"));
}

#[test]
fn explain_single_record() {
    let model = data("fig2.json");
    let o = cfsat(&[
        "explain", "--model", model.to_str().unwrap(), "--factual", "x1=1,x2=0,x3=1/2", "--norm", "l1",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["prediction"], 1);
    let num = |k: &str| v[k].as_str().unwrap().parse::<f64>().unwrap_or_else(|_| {
        let (p, q) = v[k].as_str().unwrap().split_once('/').unwrap();
        p.parse::<f64>().unwrap() / q.parse::<f64>().unwrap()
    });
    assert!(num("delta_max") - num("delta_min") <= 1e-3);
}

#[test]
fn explain_diverse_and_over_constrained() {
    let dir = tempfile::tempdir().unwrap();
    let model = data("fig2.json");
    let o = cfsat(&[
        "explain", "--model", model.to_str().unwrap(), "--factual", "x1=1,x2=0,x3=5", "--diverse", "3",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    let records: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            assert_ne!(a["counterfactual"], b["counterfactual"]);
        }
    }

    let c = dir.path().join("frozen.json");
    fs::write(
        &c,
        r#"{"x1": {"actionability": "immutable"}, "x2": {"actionability": "immutable"}, "x3": {"actionability": "immutable"}}"#,
    )
    .unwrap();
    let o = cfsat(&[
        "explain", "--model", model.to_str().unwrap(), "--factual", "x1=1,x2=0,x3=5",
        "--constraints", c.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o.stderr));
    assert!(o.stdout.is_empty());
}

#[test]
fn batch_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path());
    let run = |out: &Path| {
        cfsat(&[
            "batch", "--model", data("fig2.json").to_str().unwrap(), "--data", csv.to_str().unwrap(),
            "--n-samples", "10", "--epsilon", "1e-2", "--jobs", "2", "--out", out.to_str().unwrap(),
        ])
    };
    let a = dir.path().join("a");
    let o = run(&a);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert_eq!(stdout.matches("coverage 100.0%").count(), 3, "{stdout}");
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    assert_eq!(fs::read_to_string(a.join("records.jsonl")).unwrap().lines().count(), 30);

    let b = dir.path().join("b");
    assert!(run(&b).status.success());
    assert_eq!(report, fs::read_to_string(b.join("report.csv")).unwrap());
    let strip = |p: PathBuf| -> Vec<serde_json::Value> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect()
    };
    assert_eq!(strip(a.join("records.jsonl")), strip(b.join("records.jsonl")));
}

#[test]
fn batch_rejects_bad_configuration_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path());
    let out = dir.path().join("out");
    let model = data("fig2.json");
    let o = cfsat(&[
        "batch", "--model", model.to_str().unwrap(), "--data", csv.to_str().unwrap(),
        "--n-samples", "1000", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("predicted negative"));
    assert!(!out.exists());

    let o = cfsat(&[
        "batch", "--model", model.to_str().unwrap(), "--data", csv.to_str().unwrap(),
        "--backend", "external", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("CFSAT_SMT_SOLVER"));
    assert!(!out.exists());

    let o = cfsat(&["explain", "--model", model.to_str().unwrap(), "--factual", "x1=1,x2=0,x3=5", "--epsilon", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cfsat(&["explain", "--model", model.to_str().unwrap(), "--factual", "x1=1,x2=0,x3=5", "--alpha", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}
