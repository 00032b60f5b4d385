use std::path::Path;
use std::process::{Command, Output};

use causal_score::rng::seeded;
use causal_score::scm::{sample, Mechanism, MechanismForm};
use causal_score::{Dag, Dataset, Matrix, Scm};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_causal-score"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Chain `x1 -> x2 -> x3` written to `dir` as `scm.json` and `data.csv`.
fn write_chain(dir: &Path, n: usize) {
    let sine = |p: usize, w: f64, a: f64| Mechanism {
        parents: vec![p],
        weights: vec![w],
        amplitude: a,
        form: MechanismForm::Sine,
    };
    let dag = Dag::new(3, vec![(0, 1), (1, 2)]).unwrap();
    let scm = Scm::new(
        dag,
        vec![Mechanism::root(), sine(0, 1.3, 0.8), sine(1, -0.7, 1.6)],
        vec![0.9, 1.1, 0.6],
        0.0,
    )
    .unwrap();
    scm.save(&dir.join("scm.json")).unwrap();
    sample(&scm, n, &mut seeded(1)).unwrap().save(&dir.join("data.csv")).unwrap();
}

#[test]
fn generate_writes_model_and_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["generate", "--d", "3", "--edge-prob", "1.0", "--cm", "4", "--n", "100", "--seed", "1", "--out", path(out)]);
    let data = Dataset::load(&out.join("data.csv")).unwrap();
    assert_eq!((data.n(), data.d()), (100, 3));
    let scm = Scm::load(&out.join("scm.json")).unwrap();
    assert_eq!(scm.d(), 3);
    assert_eq!(scm.dag().n_edges(), 3);
}

#[test]
fn generate_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        ok(&["generate", "--d", "4", "--n", "50", "--seed", "7", "--out", path(dir)]);
    }
    for file in ["scm.json", "data.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn invalid_dimension_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--d", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--d"));
    assert!(!dir.path().join("scm.json").exists());
}

#[test]
fn other_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    for args in [
        vec!["generate", "--d", "3", "--edge-prob", "0", "--out", d],
        vec!["generate", "--d", "3", "--sigma-lo", "2", "--sigma-hi", "1", "--out", d],
        vec!["sweep", "--axis", "n", "--grid", "10,5", "--out", d],
        vec!["sweep", "--axis", "d", "--grid", "2.5", "--out", d],
        vec!["order", "--data", "x.csv", "--backend", "oracle", "--out", d],
        vec!["sgm-sample", "--net", "x.json", "--t0", "1", "--t-max", "0.5", "--out", d],
        vec!["no-such-command"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_input_is_a_runtime_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = run(&["order", "--data", path(&missing), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn oracle_order_of_a_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_chain(d, 1000);
    let scm = d.join("scm.json");
    let data = d.join("data.csv");
    ok(&["order", "--data", path(&data), "--backend", "oracle", "--scm", path(&scm), "--out", path(d)]);
    let doc = read_json(&d.join("order.json"));
    assert_eq!(doc["pi"], serde_json::json!([1, 2, 3]));
    assert_eq!(doc["backend"], "oracle");
    assert_eq!(doc["v_trace"].as_array().unwrap().len(), 3);
}

#[test]
fn oracle_prune_of_a_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_chain(d, 1000);
    let scm = d.join("scm.json");
    let data = d.join("data.csv");
    ok(&["prune", "--data", path(&data), "--backend", "oracle", "--scm", path(&scm), "--out", path(d)]);
    let edges = std::fs::read_to_string(d.join("edges.csv")).unwrap();
    assert_eq!(edges, "src,dst\n1,2\n2,3\n");
}

#[test]
fn generated_complete_graph_is_ordered_by_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "--d", "4", "--edge-prob", "1", "--n", "500", "--seed", "3", "--out", path(d)]);
    let scm = d.join("scm.json");
    let data = d.join("data.csv");
    ok(&["order", "--data", path(&data), "--backend", "oracle", "--scm", path(&scm), "--out", path(d)]);
    let pi: Vec<usize> = serde_json::from_value(read_json(&d.join("order.json"))["pi"].clone()).unwrap();
    // a complete DAG has exactly one topological order
    let truth = Scm::load(&scm).unwrap();
    let topo: Vec<usize> = truth.dag().topo().iter().map(|v| v + 1).collect();
    assert_eq!(pi, topo);
}

#[test]
fn train_score_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_chain(d, 100);
    let scm = d.join("scm.json");
    let data = d.join("data.csv");
    ok(&[
        "train-score", "--data", path(&data), "--scm", path(&scm), "--width", "16", "--epochs", "4",
        "--eval-every", "2", "--out", path(d),
    ]);
    let net = causal_score::nn::MlpParams::load(&d.join("score_net.json")).unwrap();
    assert_eq!(net.dims().d_in, 3);
    let log = std::fs::read_to_string(d.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,dsm_loss,esm_error");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].ends_with(','), "esm blank when not evaluated: {}", lines[1]);
    assert!(!lines[2].ends_with(','));
}

#[test]
fn sweep_over_the_sample_size_grid_writes_one_summary_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "sweep", "--axis", "n", "--grid", "5,10,20,40,80,100,160", "--d", "10", "--cm", "1", "--runs", "1",
        "--backend", "trained-net", "--width", "16", "--epochs", "3", "--out", path(d),
    ]);
    let summary = std::fs::read_to_string(d.join("sweep_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "axis,value,shd_mean,shd_std,runs_ok,runs_failed");
    assert_eq!(lines.len(), 8);
    let runs = std::fs::read_to_string(d.join("sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 8);
}

#[test]
fn sweep_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        ok(&[
            "sweep", "--axis", "cm", "--grid", "1,16", "--d", "6", "--n", "50", "--runs", "2", "--backend",
            "noisy-oracle", "--seed", "5", "--out", path(dir),
        ]);
    }
    for file in ["sweep_runs.csv", "sweep_summary.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn sgm_train_then_sample_gives_finite_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = seeded(2);
    let values = Matrix::from_fn(100, 2, |_, _| {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        0.5 * z
    });
    Dataset::from_matrix(values).unwrap().save(&d.join("gauss.csv")).unwrap();
    ok(&[
        "sgm-train", "--data", path(&d.join("gauss.csv")), "--width", "16", "--epochs", "3", "--clip", "1.0",
        "--out", path(d),
    ]);
    assert!(d.join("sgm_log.csv").exists());
    ok(&[
        "sgm-sample", "--net", path(&d.join("sgm_net.json")), "--n-steps", "50", "--n-samples", "20", "--out",
        path(d),
    ]);
    let samples = Dataset::load(&d.join("samples.csv")).unwrap();
    assert_eq!((samples.n(), samples.d()), (20, 2));
    assert!(samples.values().is_finite());
    let meta = read_json(&d.join("samples.json"));
    assert_eq!(meta["n_steps"], 50);
    assert_eq!(meta["T"], 5.0);
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("config.json");
    std::fs::write(&config, r#"{"d": 4, "n": 30, "edge_prob": 0.5}"#).unwrap();
    ok(&["generate", "--config", path(&config), "--n", "12", "--out", path(d)]);
    let data = Dataset::load(&d.join("data.csv")).unwrap();
    assert_eq!((data.n(), data.d()), (12, 4));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, "[1, 2]").unwrap();
    let out = run(&["generate", "--d", "3", "--config", path(&config), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verbose_echoes_the_effective_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["generate", "--d", "2", "--n", "5", "--verbose", "--out", path(dir.path())]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("edge_prob"), "{stderr}");
}

#[test]
fn help_lists_flags_with_defaults() {
    let cases: [(&str, &[&str]); 7] = [
        ("generate", &["--d", "--n", "--edge-prob", "--cm", "--sigma-lo", "--sigma-hi", "--seed", "--out", "--config"]),
        ("train-score", &["--data", "--scm", "--width", "--depth", "--sigma", "--eta", "--epochs", "--batch-size", "--fixed-noise"]),
        ("order", &["--data", "--backend", "--scm", "--noise-var", "--dsm-sigma", "--warm-start"]),
        ("prune", &["--data", "--backend", "--tau-rel"]),
        ("sweep", &["--axis", "--grid", "--runs", "--backend", "--tau-rel", "--timing"]),
        ("sgm-train", &["--data", "--t0", "--t-max", "--k-times", "--clip"]),
        ("sgm-sample", &["--net", "--n-steps", "--n-samples"]),
    ];
    for (cmd, flags) in cases {
        let out = ok(&[cmd, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
        assert!(text.contains("[default:"), "{cmd} --help shows no defaults");
    }
    let out = ok(&["prune", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("[default: 0.001]"));
}
