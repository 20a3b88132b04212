use std::path::Path;
use std::process::{Command, Output};

use gcd_lab::dataset::{generate, GenConfig};
use gcd_lab::evaluation::EvalOptions;
use gcd_lab::experiment::{cmd_eval, ExperimentConfig, SUMMARY_HEADER};
use gcd_lab::model::Model;
use gcd_lab::trainer::TrainConfig;

fn gcd_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcd-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gcd_lab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 6] = [
    "--set",
    "samples_per_class=40",
    "--set",
    "epochs=2",
    "--set",
    "batch_size=32",
];

#[test]
fn train_twice_is_byte_identical_and_config_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds.bin");
    ok(&[&["gen", "--out", s(&ds)][..], &SMALL].concat());
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&[&["train", "--data", s(&ds), "--out", s(&out)][..], &SMALL].concat());
    }
    // rerun from the resolved config written by the first run
    let cfg = dir.path().join("a").join("config.txt");
    let c = dir.path().join("c");
    ok(&["train", "--config", s(&cfg), "--data", s(&ds), "--out", s(&c)]);
    for file in ["metrics.jsonl", "model.ckpt", "report.json", "histogram.csv", "config.txt"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        for other in ["b", "c"] {
            let b = std::fs::read(dir.path().join(other).join(file)).unwrap();
            assert!(a == b, "{file} differs between a and {other}");
        }
    }
    let metrics = std::fs::read_to_string(dir.path().join("a/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in ["epoch", "lr", "tau_t", "losses", "acc_all", "acc_old", "acc_new", "taxonomy", "active_prototypes"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn eval_kmeans_and_diagnose_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let ds = p.join("ds.bin");
    ok(&[&["gen", "--out", s(&ds)][..], &SMALL].concat());
    ok(&[&["train", "--data", s(&ds), "--out", s(&p.join("run"))][..], &SMALL].concat());
    ok(&["eval", "--model", s(&p.join("run/model.ckpt")), "--data", s(&ds), "--out", s(&p.join("ev"))]);
    ok(&["kmeans", "--data", s(&ds), "--mode", "semi", "--out", s(&p.join("semi"))]);
    ok(&[
        "kmeans",
        "--data",
        s(&ds),
        "--mode",
        "plain",
        "--k",
        "12",
        "--model",
        s(&p.join("run/model.ckpt")),
        "--out",
        s(&p.join("plain")),
    ]);
    assert!(p.join("plain/kmeans.json").exists());
    let reports: Vec<String> = ["ev", "semi", "plain"]
        .iter()
        .map(|d| p.join(d).join("report.json").display().to_string())
        .collect();
    let diag = p.join("diag");
    let mut args = vec!["diagnose", "--out", s(&diag)];
    args.extend(reports.iter().map(String::as_str));
    ok(&args);
    let tax = std::fs::read_to_string(p.join("diag/taxonomy.csv")).unwrap();
    assert_eq!(tax.lines().count(), 4);
    let hist = std::fs::read_to_string(p.join("ev/histogram.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("class_id,predicted_count,true_count"));
}

#[test]
fn sweep_over_two_epsilons_makes_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&[&["sweep", "--epsilon", "0,1", "--seeds", "3", "--out", s(&out)][..], &SMALL].concat());
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,3,") && lines[2].starts_with("1,3,"));
    for run in ["run_000", "run_001"] {
        for file in ["config.txt", "metrics.jsonl", "model.ckpt", "report.json"] {
            assert!(out.join(run).join(file).exists(), "{run}/{file}");
        }
    }
    let cfg = ExperimentConfig::load(out.join("run_001/config.txt")).unwrap();
    assert_eq!(cfg.train.epsilon, 1.0);
}

#[test]
fn k_sweep_accepts_multiples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    ok(&[
        &["sweep", "--k", "1x,2x", "--out", s(&out), "--set", "num_classes=4"][..],
        &SMALL,
    ]
    .concat());
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let values: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["4", "8"]);
}

#[test]
fn errors_map_to_exit_codes() {
    let bad_key = gcd_lab(&["train", "--set", "no_such_key=1", "--out", "unused"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad_key.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error[config]"), "{err}");

    let missing = gcd_lab(&["eval", "--model", "/nonexistent/m.ckpt", "--data", "/nonexistent/d.bin"]);
    assert_eq!(missing.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a dataset").unwrap();
    let malformed = gcd_lab(&["kmeans", "--data", s(&junk)]);
    assert_eq!(malformed.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&malformed.stderr).starts_with("error[malformed_file]"));

    let diverge = gcd_lab(
        &[
            &["train", "--out", s(&dir.path().join("nan")), "--set", "lr=1e300"][..],
            &SMALL,
        ]
        .concat(),
    );
    assert_eq!(diverge.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverge.stderr));
}

#[test]
fn defaults_document_every_key() {
    let out = ok(&["defaults"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
    for (key, _) in gcd_lab::experiment::CONFIG_KEYS {
        assert!(text.contains(&format!("\n{key} = ")) || text.starts_with(&format!("{key} = ")), "{key}");
    }
}

#[test]
fn untrained_model_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("ds.bin");
    generate(&GenConfig::default()).unwrap().save(&ds_path).unwrap();
    let ds = gcd_lab::dataset::GcdDataset::load(&ds_path).unwrap();
    let mut accs = Vec::new();
    for seed in 0..20 {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let ckpt = dir.path().join(format!("m{seed}.ckpt"));
        Model::init(&cfg.model_config(&ds)).unwrap().save(&ckpt).unwrap();
        let r = cmd_eval(&ckpt, &ds_path, &EvalOptions::default(), None).unwrap();
        accs.push(r.acc.acc_all);
    }
    let outside: Vec<String> = accs
        .iter()
        .enumerate()
        .filter(|(_, a)| !(0.02..=0.35).contains(*a))
        .map(|(seed, a)| format!("seed {seed}: {a:.3}"))
        .collect();
    assert!(outside.is_empty(), "untrained acc_all outside [0.02, 0.35]: {}", outside.join(", "));
}
