use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sdoh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdoh")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sdoh(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    sdoh(dir, args).status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn corpus_generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["corpus", "gen", "--seed", "3", "--incidents", "25", "--out", "a.jsonl"]);
    ok(d, &["corpus", "gen", "--seed", "3", "--incidents", "25", "--out", "b.jsonl"]);
    ok(d, &["corpus", "gen", "--seed", "4", "--incidents", "25", "--out", "c.jsonl"]);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.gold.jsonl"), read("b.gold.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
    assert_eq!(String::from_utf8(read("a.jsonl")).unwrap().lines().count(), 25);
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["corpus", "gen", "--incidents", "0", "--out", "x.jsonl"]), 2);
    assert_eq!(code(d, &["corpus", "gen", "--incidents", "5", "--factors", "nope", "--out", "x.jsonl"]), 2);
    ok(d, &["corpus", "gen", "--incidents", "5", "--out", "c.jsonl"]);
    assert_eq!(code(d, &["extract", "--corpus", "c.jsonl", "--mode", "psychic"]), 2);
    assert_eq!(code(d, &["extract", "--corpus", "c.jsonl", "--backend", "oracle"]), 2);
    assert_eq!(code(d, &["extract", "--corpus", "missing.jsonl"]), 2);
    assert_eq!(code(d, &["eval", "kappa", "missing-a", "missing-b"]), 2);
    assert_eq!(code(d, &["no-such-command"]), 2);
}

#[test]
fn extract_then_evaluate_with_the_rule_mock() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["corpus", "gen", "--seed", "7", "--incidents", "40", "--out", "corpus.jsonl"]);
    ok(d, &["extract", "--corpus", "corpus.jsonl", "--traces", "t.jsonl", "--verdicts", "v.jsonl"]);
    let text = ok(d, &["eval", "extraction", "--corpus", "corpus.jsonl", "--traces", "t.jsonl", "--json-out", "r.json"]);
    assert!(text.contains("multistage"));
    let report = json(&d.join("r.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert_eq!(row["f1"], 1.0, "{row}");
        assert_eq!(row["failed"], 0);
    }
    assert!(report["metadata"]["corpus_hash"].as_str().unwrap().len() == 64);

    ok(d, &["eval", "extraction", "--corpus", "corpus.jsonl", "--verdicts", "v.jsonl", "--json-out", "rv.json"]);
    assert_eq!(json(&d.join("rv.json"))["rows"], report["rows"]);

    let kappa = ok(d, &["eval", "kappa", "v.jsonl", "v.jsonl"]);
    assert!(kappa.starts_with("kappa 1.0000 over 240"), "{kappa}");
}

#[test]
fn noisy_retrieval_is_repaired_by_verification() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["corpus", "gen", "--seed", "7", "--incidents", "60", "--out", "corpus.jsonl"]);
    ok(d, &["extract", "--corpus", "corpus.jsonl", "--retriever", "noisy-mock", "--traces", "t.jsonl"]);
    ok(d, &["eval", "retrieval", "--traces", "t.jsonl", "--gold", "corpus.gold.jsonl", "--json-out", "r.json"]);
    let report = json(&d.join("r.json"));
    for f in report["factors"].as_array().unwrap() {
        assert!(f["stage2_accuracy"].as_f64() >= f["stage1_accuracy"].as_f64(), "{f}");
    }
    assert!(report["mean_improvement"].as_f64().unwrap() > 0.1);
}

#[test]
fn unreachable_backend_fails_tasks_not_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["corpus", "gen", "--incidents", "2", "--out", "corpus.jsonl"]);
    let args = ["extract", "--corpus", "corpus.jsonl", "--factors", "job_problem", "--backend", "remote", "--mode", "end2end"];
    let unset = Command::new(env!("CARGO_BIN_EXE_sdoh"))
        .current_dir(d)
        .args(args)
        .env_remove("MODEL_API_BASE")
        .output()
        .unwrap();
    assert_eq!(unset.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_sdoh"))
        .current_dir(d)
        .args(args)
        .env("MODEL_API_BASE", "http://127.0.0.1:9/v1")
        .env("MODEL_NAME", "test")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let traces = std::fs::read_to_string(d.join("traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 2);
    assert!(traces.lines().all(|l| serde_json::from_str::<Value>(l).unwrap()["error"]["kind"] == "transport"));
}

#[test]
fn prompt_and_segment_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = ok(d, &["prompt", "--kind", "verification", "--factor", "job_problem", "--input", "He was fired."]);
    assert!(text.contains("[SENTENCE]He was fired.[/SENTENCE]\n[Job Problem]"));
    std::fs::write(d.join("r.txt"), "Dr. Smith arrived at 3 p.m. on Monday. The V was found.").unwrap();
    let seg = ok(d, &["segment", "r.txt"]);
    assert_eq!(seg.lines().count(), 2, "{seg}");
}
