use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use branchstance::attribution::AttributionReport;
use branchstance::ingest::load_dataset;
use branchstance::train::EvalReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_branchstance"));
    c.env_remove("BRANCHSTANCE_TOKEN").arg("--log-level").arg("warn");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest_and_split(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let ds = dir.join("ds.jsonl");
    let out = run(&[
        "ingest",
        "--in",
        s(&data("sample_raw.jsonl")),
        "--keywords",
        s(&data("sample_keywords.txt")),
        "--out",
        s(&ds),
    ]);
    assert!(out.status.success());
    let out = run(&["split", "--in", s(&ds), "--ratio", "0.8", "--granularity", "thread", "--seed", "1"]);
    assert!(out.status.success());
    (ds.clone(), dir.join("ds.train.jsonl"), dir.join("ds.test.jsonl"))
}

#[test]
fn pipeline_on_bundled_sample() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, train, test) = ingest_and_split(dir.path());
    assert_eq!(load_dataset(&ds).unwrap().threads.len(), 5);
    assert_eq!(load_dataset(&train).unwrap().threads.len(), 4);
    assert_eq!(load_dataset(&test).unwrap().threads.len(), 1);

    let ckpt = dir.path().join("m.ckpt");
    let log = dir.path().join("train.log");
    let out = run(&[
        "train",
        "--model",
        "branch",
        "--train",
        s(&train),
        "--out",
        s(&ckpt),
        "--seed",
        "3",
        "--max-batches",
        "10",
        "--log",
        s(&log),
    ]);
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("m.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"]["train"], 3);
    assert_eq!(manifest["config"]["train"]["max_batches"], 10);
    assert!(manifest["overrides"].as_array().unwrap().iter().any(|o| o == "train.seed=3"));

    let report = dir.path().join("report.json");
    let out = run(&["eval", "--ckpt", s(&ckpt), "--test", s(&test), "--report", s(&report)]);
    assert!(out.status.success());
    let rep: EvalReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!((0.0..=1.0).contains(&rep.macro_f1_overall.mean));
    assert_eq!(rep.repetitions, 1);

    let t = load_dataset(&test).unwrap();
    let thread = &t.threads[0];
    let target = thread.preorder().last().unwrap().instance_id.clone();
    let attr = dir.path().join("attr.json");
    let out = run(&[
        "attribute",
        "--ckpt",
        s(&ckpt),
        "--dataset",
        s(&test),
        "--thread",
        thread.thread_id(),
        "--target",
        &target,
        "--out",
        s(&attr),
        "--workers",
        "2",
        "--table",
    ]);
    assert!(out.status.success());
    let rep: AttributionReport = serde_json::from_slice(&std::fs::read(&attr).unwrap()).unwrap();
    assert_eq!(rep.target_id, target);
    assert!(String::from_utf8_lossy(&out.stdout).contains("predicted"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (_, train, _) = ingest_and_split(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nseed = 11\nmax_batches = 4\n\n[svm]\ncs = [1.0]\n").unwrap();
    let ckpt = dir.path().join("svm.ckpt");
    let out = run(&[
        "train",
        "--model",
        "svm",
        "--train",
        s(&train),
        "--out",
        s(&ckpt),
        "--config",
        s(&cfg),
        "--max-batches",
        "2",
    ]);
    assert!(out.status.success());
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("svm.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["train"]["seed"], 11);
    assert_eq!(m["config"]["train"]["max_batches"], 2);
    assert_eq!(m["overrides"], serde_json::json!(["train.max_batches=2"]));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["split", "--in"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    let out = dir.path().join("o.jsonl");
    let kw = data("sample_keywords.txt");
    assert_eq!(run(&["ingest", "--in", s(&bad), "--keywords", s(&kw), "--out", s(&out)]).status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nseed = \"x\"\n").unwrap();
    let code =
        run(&["train", "--model", "branch", "--train", s(&bad), "--out", s(&out), "--config", s(&cfg)]).status.code();
    assert_eq!(code, Some(1));

    let (_, train, _) = ingest_and_split(dir.path());
    let svm = dir.path().join("svm.ckpt");
    assert!(run(&["train", "--model", "svm", "--train", s(&train), "--out", s(&svm)]).status.success());
    let code = run(&[
        "attribute",
        "--ckpt",
        s(&svm),
        "--dataset",
        s(&train),
        "--thread",
        "t1",
        "--target",
        "t1-p",
        "--out",
        s(&out),
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
}
