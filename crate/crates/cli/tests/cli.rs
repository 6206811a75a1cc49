//! Drives the `uap` binary through its subcommands on a tiny dataset.

use std::path::Path;
use std::process::{Command, Output};

fn uap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = uap(args);
    assert!(
        out.status.success(),
        "uap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Dataset plus trained victim in `dir`.
fn prepare(dir: &Path) {
    let data = dir.join("data");
    let victim = dir.join("victim");
    ok(&[
        "gen-data",
        "--out",
        s(&data),
        "--per-class",
        "30",
        "--dim",
        "1024",
        "--seed",
        "1",
    ]);
    let text = ok(&[
        "train-victim",
        "--arch",
        "rand-cnn",
        "--data",
        s(&data),
        "--out",
        s(&victim),
        "--epochs",
        "8",
    ]);
    assert!(text.contains("test accuracy"));
}

#[test]
fn craft_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    assert!(d.join("data/labels.csv").exists());
    assert!(d.join("victim.run.json").exists());

    let pert = d.join("uap.json");
    ok(&[
        "craft",
        "--method",
        "penalty",
        "--model",
        s(&d.join("victim")),
        "--data",
        s(&d.join("data")),
        "--out",
        s(&pert),
        "--c",
        "50",
        "--kappa",
        "5",
        "--mode",
        "targeted",
        "--target",
        "2",
    ]);
    assert!(d.join("uap.bin").exists());

    let report = d.join("report.csv");
    let text = ok(&[
        "evaluate",
        "--model",
        s(&d.join("victim")),
        "--data",
        s(&d.join("data")),
        "--pert",
        s(&pert),
        "--report",
        s(&report),
    ]);
    assert!(text.contains("ASR"));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("sample_id,clean_pred,perturbed_pred,success,snr_db,l_db")
    );
    assert_eq!(lines.count(), 30);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.csv.run.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["results"]["rows"], 30);
}

#[test]
fn sweeps_write_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let (victim, data) = (d.join("victim"), d.join("data"));
    let conf = d.join("conf.csv");
    ok(&[
        "sweep",
        "confidence",
        "--model",
        s(&victim),
        "--data",
        s(&data),
        "--out",
        s(&conf),
        "--kappas",
        "0,10",
        "--c",
        "50",
        "--iters",
        "5",
    ]);
    assert_eq!(std::fs::read_to_string(&conf).unwrap().lines().count(), 3);

    let counts = d.join("counts.csv");
    ok(&[
        "sweep",
        "datacount",
        "--model",
        s(&victim),
        "--data",
        s(&data),
        "--out",
        s(&counts),
        "--ms",
        "1,5",
        "--iters",
        "3",
    ]);
    let text = std::fs::read_to_string(&counts).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.starts_with("greedy,") || l.starts_with("penalty,")));
}

#[test]
fn ztest_reports_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z.json");
    let text = ok(&[
        "ztest",
        "--pl",
        "0.412",
        "--ph",
        "0.876",
        "--m",
        "874",
        "--out",
        s(&out),
    ]);
    assert!(text.contains("-20.25"), "{text}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["reject"], true);
}

#[test]
fn invalid_invocations_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = uap(&["ztest", "--pl", "0.9", "--ph", "0.1", "--m", "10"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let out = uap(&[
        "craft",
        "--method",
        "greedy",
        "--model",
        s(&missing),
        "--data",
        s(&missing),
        "--out",
        s(&dir.path().join("x.json")),
        "--mode",
        "targeted",
    ]);
    assert!(!out.status.success());

    let out = uap(&[
        "train-victim",
        "--arch",
        "resnet",
        "--data",
        s(&missing),
        "--out",
        s(&missing),
    ]);
    assert!(!out.status.success());
}
