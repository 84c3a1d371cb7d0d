use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn regopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regopt")).args(args).output().expect("spawn regopt")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(regopt(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(regopt(&["rank"]).status.code(), Some(2));
    assert_eq!(regopt(&["--threads", "many", "metrics"]).status.code(), Some(2));
    assert_eq!(regopt(&[]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = regopt(&["rank", "--input", &s(&dir.path().join("missing.jsonl")), "--out", &s(&dir.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.jsonl"), "{}", stderr(&out));

    let plan = regopt(&[
        "generate",
        "--input", &s(&fixture("archive.jsonl")),
        "--models", &s(&fixture("models.json")),
        "--goal", "runs=0",
        "--out", &s(&dir.path().join("p.json")),
    ]);
    assert_eq!(plan.status.code(), Some(1), "{}", stderr(&plan));
}

fn corrupt_archive(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(fixture("archive.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"test\": \"smoke\", \"seed\": ";
    let path = dir.join("bad.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn malformed_records_name_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = corrupt_archive(dir.path());
    let out_path = dir.path().join("out.jsonl");
    let out = regopt(&["ingest", "--input", &s(&bad), "--out", &s(&out_path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 7"), "{}", stderr(&out));
    assert!(!out_path.exists());

    let out = regopt(&["--quiet", "ingest", "--input", &s(&bad), "--out", &s(&out_path), "--skip-invalid"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let original = std::fs::read_to_string(fixture("archive.jsonl")).unwrap().lines().count();
    let kept = std::fs::read_to_string(&out_path).unwrap().lines().count();
    assert_eq!(kept, original - 1);
}

#[test]
fn quiet_silences_and_json_logs_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let archive = s(&fixture("archive.jsonl"));
    let out = regopt(&["--quiet", "rank", "--input", &archive, "--out", &s(&dir.path().join("a.jsonl")), "--csv", &s(&dir.path().join("a.csv"))]);
    assert!(out.status.success());
    assert!(out.stderr.is_empty());

    let out = regopt(&["--json-logs", "rank", "--input", &archive, "--out", &s(&dir.path().join("b.jsonl")), "--csv", &s(&dir.path().join("b.csv"))]);
    assert!(out.status.success());
    for line in stderr(&out).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert!(v.get("level").is_some() && v.get("message").is_some(), "{line}");
    }
}

#[test]
fn rank_writes_csv_to_stdout_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = regopt(&["--quiet", "rank", "--input", &s(&fixture("archive.jsonl")), "--objective", "top_k=2", "--out", &s(&dir.path().join("r.jsonl"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 2, "{text}");
}
