use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const RELEASE_LINE: &str = r#"{"doc_id":"r1","words":["We","use","BiDAF","on","SQuAD","for","QA","with","EM","."],"sentences":[[0,10]],"sections":[[0,10]],"ner":[[2,3,"Method"],[4,5,"Material"],[6,7,"Task"],[8,9,"Metric"]],"coref":{"BiDAF":[[2,3]],"SQuAD":[[4,5]],"QA":[[6,7]],"EM":[[8,9]]},"n_ary_relations":[{"Material":"SQuAD","Method":"BiDAF","Metric":"EM","Task":"QA","score":"77.3"}],"method_subrelations":{}}"#;

fn docie(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docie"))
        .args(args)
        .current_dir(dir)
        .env_remove("DOCIE_CACHE")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn value(report: &Value, table: &str, row: &str, col: &str) -> f64 {
    report[table]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == row)
        .unwrap_or_else(|| panic!("no row {row} in {report}"))[col]
        .as_f64()
        .unwrap()
}

#[test]
fn stats_on_release_schema() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("release.jsonl"), format!("{RELEASE_LINE}\n")).unwrap();
    let o = docie(dir.path(), &["stats", "--corpus", "release.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    assert_eq!(value(&r, "corpus", "documents", "value"), 1.0);
    assert_eq!(value(&r, "corpus", "words", "value"), 10.0);
    assert_eq!(value(&r, "corpus", "mentions", "value"), 4.0);
    assert_eq!(value(&r, "corpus", "binary_relations", "value"), 6.0);
    assert_eq!(value(&r, "corpus", "nary_relations", "value"), 1.0);

    let md = docie(dir.path(), &["stats", "--corpus", "release.jsonl", "--format", "markdown"]);
    assert_eq!(md.status.code(), Some(0));
    assert!(stdout(&md).contains("| words | 10.000 |"), "{}", stdout(&md));
}

#[test]
fn missing_prediction_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.jsonl"), format!("{RELEASE_LINE}\n")).unwrap();
    let o = docie(dir.path(), &["evaluate", "--gold", "g.jsonl", "--pred", "missing.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.jsonl"), "{}", stderr(&o));
}

#[test]
fn unknown_command_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = docie(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = docie(dir.path(), &["stats", "--corpus", "x.jsonl", "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = docie(dir.path(), &["stats"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--corpus"));
}

#[test]
fn help_for_every_command() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["ingest", "stats", "synth", "train", "predict", "evaluate", "diagnose", "align"] {
        let o = docie(dir.path(), &[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
}

#[test]
fn invalid_document_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = RELEASE_LINE.replace(r#"[8,9,"Metric"]"#, r#"[8,12,"Metric"]"#);
    fs::write(dir.path().join("bad.jsonl"), format!("{bad}\n")).unwrap();
    let o = docie(dir.path(), &["stats", "--corpus", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn ingest_writes_native_schema() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("release.jsonl"), format!("{RELEASE_LINE}\n")).unwrap();
    let o = docie(dir.path(), &["ingest", "--input", "release.jsonl", "--output", "out/native.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = fs::read_to_string(dir.path().join("out/native.jsonl")).unwrap();
    let doc: Value = serde_json::from_str(line.trim()).unwrap();
    assert!(doc.get("ner").is_none());
    assert_eq!(doc["relations"][0]["Dataset"], "SQuAD");
    let again = docie(dir.path(), &["stats", "--corpus", "out/native.jsonl"]);
    assert_eq!(again.status.code(), Some(0));
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let o = docie(dir.path(), &["synth", "--output", name, "--documents", "6", "--seed", "11"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let c = docie(dir.path(), &["synth", "--output", "c.jsonl", "--documents", "6", "--seed", "12"]);
    assert_eq!(c.status.code(), Some(0));
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

const TRAIN_CONFIG: &str = r#"
preset = "desk"
jobs = 2

[synth]
documents = 8

[training]
epochs = 2

[model.encoder]
embedding_dim = 8
section_hidden = 8
doc_hidden = 8

[paths]
corpus = "corpus.jsonl"
"#;

#[test]
fn train_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), TRAIN_CONFIG).unwrap();
    let o = docie(dir.path(), &["synth", "--config", "c.toml", "--output", "corpus.jsonl", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for out in ["ck1", "ck2"] {
        let o = docie(dir.path(), &["train", "--config", "c.toml", "--seed", "7", "--output", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert_eq!(value(&json(&o), "training", "epochs_run", "value"), 2.0);
    }
    let o = docie(dir.path(), &["train", "--config", "c.toml", "--seed", "8", "--output", "ck3"]);
    assert_eq!(o.status.code(), Some(0));
    for file in ["config.json", "params.json", "best_metric.json", "train_log.jsonl"] {
        let a = fs::read(dir.path().join("ck1").join(file)).unwrap();
        let b = fs::read(dir.path().join("ck2").join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
    let p1 = fs::read(dir.path().join("ck1/params.json")).unwrap();
    let p3 = fs::read(dir.path().join("ck3/params.json")).unwrap();
    assert_ne!(p1, p3);
    let cfg: Value = serde_json::from_slice(&fs::read(dir.path().join("ck1/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["model"]["encoder"]["doc_hidden"], 8);
}

#[test]
fn predict_evaluate_diagnose_align() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), TRAIN_CONFIG).unwrap();
    let p = dir.path();
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o
    };
    ok(docie(p, &["synth", "--config", "c.toml", "--output", "corpus.jsonl", "--split-dir", "split"]));
    ok(docie(p, &["train", "--config", "c.toml", "--train", "split/train.jsonl", "--output", "ck", "--epochs", "1"]));
    ok(docie(p, &["predict", "--model", "ck", "--corpus", "split/test.jsonl", "--output", "pred.jsonl"]));
    let r = json(&ok(docie(p, &["evaluate", "--gold", "split/test.jsonl", "--pred", "pred.jsonl"])));
    for row in ["Mention", "Clusters", "Binary", "4-ary"] {
        let f = value(&r, "end-to-end", row, "F1");
        assert!((0.0..=1.0).contains(&f));
    }
    // Gold scored against itself is perfect.
    let r = json(&ok(docie(p, &["evaluate", "--gold", "split/test.jsonl", "--pred", "split/test.jsonl"])));
    for row in ["Mention", "Clusters", "Binary", "4-ary"] {
        assert_eq!(value(&r, "end-to-end", row, "F1"), 1.0, "{row}");
    }
    let md = stdout(&ok(docie(
        p,
        &["diagnose", "--model", "ck", "--corpus", "split/test.jsonl", "--mode", "component-gold", "--format", "md"],
    )));
    for row in ["Mention", "Coref", "Salient", "Clusters", "Binary", "4-ary"] {
        assert!(md.contains(&format!("| {row} |")), "{md}");
    }

    let corpus = fs::read_to_string(p.join("corpus.jsonl")).unwrap();
    let first: Value = serde_json::from_str(corpus.lines().next().unwrap()).unwrap();
    let rel = &first["relations"][0];
    let kb = serde_json::json!({
        "dataset": rel["Dataset"], "method": rel["Method"], "metric": rel["Metric"], "task": rel["Task"], "score": "1"
    });
    fs::write(p.join("kb.jsonl"), format!("{kb}\n")).unwrap();
    fs::write(p.join("one.jsonl"), format!("{first}\n")).unwrap();
    let r = json(&ok(docie(
        p,
        &["align", "--corpus", "one.jsonl", "--kb", "kb.jsonl", "--epsilon", "1.0", "--output", "links.jsonl"],
    )));
    let table = "alignment (lowercase alphanumeric word tokens)";
    assert_eq!(value(&r, table, "epsilon", "value"), 1.0);
    let links = fs::read_to_string(p.join("links.jsonl")).unwrap();
    assert_eq!(links.lines().count() as f64, value(&r, table, "mentions", "value"));
    // Every relation entity has at least one mention named exactly as its id.
    assert!(value(&r, table, "linked", "value") >= 4.0);
    let r = json(&ok(docie(p, &["align", "--corpus", "one.jsonl", "--kb", "kb.jsonl", "--corrected", "one.jsonl"])));
    assert_eq!(value(&r, "correction_sums", "diagonal_sum", "percent"), 100.0);
}

#[test]
fn missing_config_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = docie(dir.path(), &["stats", "--config", "nope.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"));
}
