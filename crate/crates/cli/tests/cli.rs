use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const SPEC: &str = "objects=6,views=3,t=16,n=60,rank=3,sigma=0.03,seed=4";

fn facret(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facret")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn generate_then_evaluate_directory() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = facret(&["generate", "--spec", SPEC, "--out", corpus.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(&corpus).unwrap().count(), 18);

    let report = dir.path().join("report.jsonl");
    let out = facret(&[
        "evaluate",
        "--corpus",
        corpus.to_str().unwrap(),
        "--eta",
        "4",
        "--alpha",
        "1",
        "--top",
        "3",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("combined"));

    let lines = json_lines(&report);
    assert_eq!(lines[0]["type"], "header");
    assert_eq!(lines[0]["queries"], 6);
    let records: Vec<_> = lines[1..].iter().filter(|l| l["type"] == "record").collect();
    assert_eq!(records.len(), lines.len() - 1);
    for r in &records {
        let acc = r["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let combined_top3 = records
        .iter()
        .find(|r| r["pipeline"] == "combined" && r["top_n"] == 3)
        .expect("combined top-3 record");
    assert_eq!(combined_top3["accuracy"], 1.0);
}

#[test]
fn sweeps_run_on_synthetic_corpus() {
    let corpus = format!("synthetic:{SPEC}");
    let dir = tempfile::tempdir().unwrap();
    for (cmd, extra) in [
        ("sweep-alpha", vec!["--alphas", "0,1,4"]),
        ("sweep-bits", vec!["--bit-grid", "3,5"]),
        ("sweep-rank", vec!["--ranks", "1,3"]),
    ] {
        let report = dir.path().join(format!("{cmd}.jsonl"));
        let mut args = vec![cmd, "--corpus", &corpus, "--eta", "4", "--top", "3", "--out", report.to_str().unwrap()];
        args.extend(extra);
        let out = facret(&args);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(json_lines(&report).len() > 1);
    }
}

#[test]
fn build_index_serve_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert!(facret(&["generate", "--spec", SPEC, "--out", corpus.to_str().unwrap()]).status.success());
    let index = dir.path().join("db.oix");
    let out = facret(&["build-index", "--corpus", corpus.to_str().unwrap(), "--out", index.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("indexed 18 images of 6 objects"));

    let mut server = Command::new(env!("CARGO_BIN_EXE_facret"))
        .args(["serve", "--index", index.to_str().unwrap(), "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on ").expect(&banner).to_string();

    let query = std::fs::read_dir(&corpus)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("obj0002"))
        .unwrap();
    let out = facret(&["query", "--server", &addr, "--descriptors", query.to_str().unwrap(), "--eta", "3"]);
    let _ = server.kill();
    let _ = server.wait();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("1\tobj0002\t"), "{text}");
    assert!(text.lines().count() <= 3);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = facret(&["evaluate", "--corpus", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = facret(&["evaluate", "--corpus", "synthetic:objects=2,views=1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = facret(&["evaluate", "--bits", "17"]);
    assert!(!out.status.success());

    let out = facret(&["evaluate", "--corpus", &format!("synthetic:{SPEC}"), "--eta", "3", "--alpha", "5"]);
    assert_eq!(out.status.code(), Some(1));
}
