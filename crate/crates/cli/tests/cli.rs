//! End-to-end tests of the `groupseq` binary: exit codes, output files,
//! determinism, and report self-consistency.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groupseq"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

const BASE_CONFIG: &str = r#"{
  "method": "cs-g-omp",
  "lambda": 0.05,
  "alpha": 0.97,
  "seed": 21,
  "synth": {
    "n": 120,
    "group_sizes": [2, 1, 3],
    "costs": [1.0, 0.4, 2.5],
    "sparsity": 2,
    "noise_sd": 0.3,
    "correlation": 0.4,
    "n_test": 80
  }
}"#;

fn run_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    for sub in ["a", "b"] {
        let out = bin()
            .args(["synth", "--config"])
            .arg(&config)
            .arg("--output-dir")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        run_ok(&out);
    }
    let da = fs::read(dir.path().join("a/data.csv")).unwrap();
    let db = fs::read(dir.path().join("b/data.csv")).unwrap();
    assert_eq!(da, db, "synthetic CSV differs between runs");
    let sa = fs::read(dir.path().join("a/groups.json")).unwrap();
    let sb = fs::read(dir.path().join("b/groups.json")).unwrap();
    assert_eq!(sa, sb);

    // The files round-trip through the sequencing pipeline.
    let out = bin()
        .args(["sequence", "--config"])
        .arg(&config)
        .arg("--train-csv")
        .arg(dir.path().join("a/data.csv"))
        .arg("--group-spec")
        .arg(dir.path().join("a/groups.json"))
        .arg("--output-dir")
        .arg(dir.path().join("seq"))
        .output()
        .unwrap();
    run_ok(&out);
}

#[test]
fn synth_rejects_invalid_sparsity() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"seed": 3, "synth": {"n": 50, "group_sizes": [1, 1], "costs": [1.0, 1.0], "sparsity": 9}}"#,
    );
    let out = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sequence_writes_the_four_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    for sub in ["r1", "r2"] {
        let out = bin()
            .args(["sequence", "--config"])
            .arg(&config)
            .arg("--output-dir")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        run_ok(&out);
    }
    for f in [
        "order.json",
        "curve_train.csv",
        "curve_test.csv",
        "report.json",
    ] {
        let p = dir.path().join("r1").join(f);
        assert!(p.exists(), "{f} missing");
        let a = fs::read(&p).unwrap();
        let b = fs::read(dir.path().join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
}

#[test]
fn report_timeliness_recomputes_from_emitted_curves() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["sequence", "--config"])
        .arg(&config)
        .arg("--output-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let train = groupseq::metrics::read_curve_csv(std::io::BufReader::new(
        fs::File::open(out_dir.join("curve_train.csv")).unwrap(),
    ))
    .unwrap();
    let test = groupseq::metrics::read_curve_csv(std::io::BufReader::new(
        fs::File::open(out_dir.join("curve_test.csv")).unwrap(),
    ))
    .unwrap();
    let alpha = report["alpha"].as_f64().unwrap();
    let stop = groupseq::metrics::alpha_stopping_cost(&train, alpha).unwrap();
    assert_eq!(stop, report["stop_cost"].as_f64().unwrap());
    let t = groupseq::metrics::timeliness(&test, stop, train.final_value()).unwrap();
    assert_eq!(t, report["timeliness"].as_f64().unwrap());
    assert_eq!(
        train.final_value(),
        report["final_objective"].as_f64().unwrap()
    );
}

#[test]
fn sequence_missing_dataset_exits_one_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out = bin()
        .args(["sequence", "--config"])
        .arg(&config)
        .args(["--train-csv", "/definitely/not/here.csv"])
        .arg("--group-spec")
        .arg(dir.path().join("nope.json"))
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("/definitely/not/here.csv"),
        "stderr does not name the path: {stderr}"
    );
}

#[test]
fn sparse_method_emits_lasso_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out_dir = dir.path().join("sparse");
    let out = bin()
        .args(["sequence", "--config"])
        .arg(&config)
        .args(["--method", "sparse"])
        .arg("--output-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    assert!(out_dir.join("lasso_path.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["lasso_path"].as_str().unwrap(), "lasso_path.json");
}

#[test]
fn verify_bound_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);

    let out = bin()
        .args(["verify-bound", "--config"])
        .arg(&config)
        .arg("--output-dir")
        .arg(dir.path().join("ok"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ok/bound_report.json")).unwrap())
            .unwrap();
    assert!(report["satisfied"].as_bool().unwrap());
    assert!(report["gamma"].as_f64().unwrap() > 0.0);

    // Negative control: corrupted selection must violate the bound.
    let out = bin()
        .args(["verify-bound", "--config"])
        .arg(&config)
        .arg("--output-dir")
        .arg(dir.path().join("bad"))
        .arg("--corrupt-selection")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // Enumeration guard: too many groups is a configuration error.
    let many = write_config(
        dir.path(),
        r#"{"seed": 5, "lambda": 0.1, "synth": {"n": 60, "group_sizes": [1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1], "costs": [1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1], "sparsity": 3, "noise_sd": 0.2}}"#,
    );
    let out = bin()
        .args(["verify-bound", "--config"])
        .arg(&many)
        .arg("--output-dir")
        .arg(dir.path().join("many"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("too many groups"), "stderr: {stderr}");
}

#[test]
fn evaluate_reproduces_training_curve_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    // Materialize the dataset, sequence from the files, then evaluate the
    // stored order against the same files.
    let out = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--output-dir")
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    run_ok(&out);
    let out = bin()
        .args(["sequence", "--config"])
        .arg(&config)
        .arg("--train-csv")
        .arg(dir.path().join("data/data.csv"))
        .arg("--group-spec")
        .arg(dir.path().join("data/groups.json"))
        .arg("--output-dir")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    run_ok(&out);
    let out = bin()
        .arg("evaluate")
        .arg("--order")
        .arg(dir.path().join("run/order.json"))
        .arg("--data")
        .arg(dir.path().join("data/data.csv"))
        .arg("--spec")
        .arg(dir.path().join("data/groups.json"))
        .arg("--output-dir")
        .arg(dir.path().join("eval"))
        .arg("--reference-curve")
        .arg(dir.path().join("run/curve_train.csv"))
        .output()
        .unwrap();
    run_ok(&out);
    let train = fs::read(dir.path().join("run/curve_train.csv")).unwrap();
    let eval = fs::read(dir.path().join("eval/curve_eval.csv")).unwrap();
    assert_eq!(
        train, eval,
        "evaluation on the training data must reproduce its curve"
    );
}

#[test]
fn glm_softmax_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    // Two-class one-hot responses; f0 carries the class signal, f1 is noise.
    let mut csv = String::from("f0,f1,y0,y1\n");
    for i in 0..40 {
        let class = i % 2;
        let f0 = if class == 0 {
            1.0 + 0.01 * i as f64
        } else {
            -1.0 - 0.01 * i as f64
        };
        let f1 = ((i * 7 % 11) as f64 - 5.0) / 5.0;
        let (y0, y1) = if class == 0 { (1, 0) } else { (0, 1) };
        csv.push_str(&format!("{f0},{f1},{y0},{y1}\n"));
    }
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    fs::write(
        dir.path().join("groups.json"),
        r#"{"response_columns":["y0","y1"],"groups":[{"name":"signal","columns":["f0"],"cost":1.0},{"name":"noise","columns":["f1"],"cost":2.0}]}"#,
    )
    .unwrap();
    let config = write_config(
        dir.path(),
        r#"{"method": "glm-omp", "alpha": 0.97, "glm": {"p": 2, "mean_fn": "softmax", "lambda": 0.1}}"#,
    );
    let out = bin()
        .args(["sequence", "--config"])
        .arg(&config)
        .arg("--train-csv")
        .arg(dir.path().join("data.csv"))
        .arg("--group-spec")
        .arg(dir.path().join("groups.json"))
        .arg("--output-dir")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    run_ok(&out);
    let order: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/order.json")).unwrap())
            .unwrap();
    assert_eq!(order["order"][0].as_str().unwrap(), "signal");
    assert_eq!(order["glm"]["mean_fn"].as_str().unwrap(), "softmax");

    // Evaluating the stored multi-class models on the training file
    // reproduces the training curve.
    let out = bin()
        .arg("evaluate")
        .arg("--order")
        .arg(dir.path().join("run/order.json"))
        .arg("--data")
        .arg(dir.path().join("data.csv"))
        .arg("--spec")
        .arg(dir.path().join("groups.json"))
        .arg("--output-dir")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    run_ok(&out);
    let train = fs::read(dir.path().join("run/curve_train.csv")).unwrap();
    let eval = fs::read(dir.path().join("eval/curve_eval.csv")).unwrap();
    assert_eq!(train, eval);
}

#[test]
fn glm_identity_matches_linear_order() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
  "lambda": 0.05,
  "seed": 33,
  "synth": {"n": 100, "group_sizes": [2, 1, 2], "costs": [1.0, 0.5, 2.0], "sparsity": 2, "noise_sd": 0.3, "correlation": 0.3},
  "glm": {"p": 1, "mean_fn": "identity"}
}"#,
    );
    for (method, sub) in [("cs-g-omp", "lin"), ("glm-omp", "glm")] {
        let out = bin()
            .args(["sequence", "--config"])
            .arg(&config)
            .args(["--method", method])
            .arg("--output-dir")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        run_ok(&out);
    }
    let lin: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("lin/order.json")).unwrap())
            .unwrap();
    let glm: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("glm/order.json")).unwrap())
            .unwrap();
    assert_eq!(lin["order"], glm["order"]);
}
