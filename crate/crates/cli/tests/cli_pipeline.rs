use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_titlebias"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "titlebias {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Exit code and parsed error object of a failing invocation.
fn fails(dir: &Path, args: &[&str]) -> (i32, Value) {
    let out = run(dir, args);
    assert!(!out.status.success(), "titlebias {args:?} succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let err: Value = serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("{e}: {stderr}"));
    (out.status.code().unwrap(), err["error"].clone())
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

const CONFIG: &str = r#"
[fixture]
n_titles = 2000

[terms]
lambda = 0.002
"#;

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("titlebias.toml"), CONFIG).unwrap();
    let fixture = ok(dir, &["fixture", "generate"]);
    assert_eq!(fixture["n_titles"], 2000);

    let ingested = ok(dir, &["ingest", "fixture/corpus.jsonl"]);
    assert_eq!(ingested["accepted"], 2000);
    assert_eq!(ingested["rejected"], 0);
    let again = ok(dir, &["ingest", "fixture/corpus.jsonl"]);
    assert_eq!(again["records"], 2000, "re-ingesting must not duplicate titles");

    let prep = ok(dir, &["prep"]);
    assert_eq!(prep["titles"], 2000);

    let trained = ok(dir, &["train", "--labels", "fixture/labels.jsonl"]);
    assert_eq!(trained["kind"], "logreg");
    assert_eq!(trained["n_examples"], 2000);
    let scored = ok(dir, &["score"]);
    assert_eq!(scored["n_titles"], 2000);
    let eval = ok(dir, &["evaluate", "--labels", "fixture/labels.jsonl"]);
    assert!(eval["metrics"]["accuracy"].as_f64().unwrap() > 0.9, "{eval}");
    assert_eq!(eval["missing_predictions"], 0);

    let terms = ok(dir, &["analyze", "terms", "--by-group", "--labels", "fixture/labels.jsonl"]);
    assert!(!terms["cells"].as_array().unwrap().is_empty());
    ok(dir, &["analyze", "topics"]);
    ok(dir, &["analyze", "lang"]);
    let trends = ok(dir, &["report", "trends"]);
    assert_eq!(trends["uncovered_titles"], 0);
    assert_eq!(trends["manifest"]["scorer_id"], "logreg-bow");
}

#[test]
fn identical_configuration_reproduces_every_artifact() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    let first = files_under(&a.path().join("out"));
    let second = files_under(&b.path().join("out"));
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (path, bytes) in &first {
        assert!(&second[path] == bytes, "{} differs between runs", path.display());
    }
    for expected in [
        "prep/tokens.jsonl",
        "model/scorer.json",
        "predictions.jsonl",
        "predictions.manifest.json",
        "terms/terms-all-by-group.md",
        "topics/topics.csv",
        "lang/distances.csv",
        "trends/fig2a.csv",
        "trends/manifest.json",
        "trends/summary.json",
    ] {
        assert!(first.contains_key(Path::new(expected)), "{expected} missing");
    }

    // manifests name the inputs and the digest of every file they list
    let manifest: Value = serde_json::from_slice(&first[Path::new("topics/topics.manifest.json")]).unwrap();
    assert_eq!(manifest["command"], "topics");
    assert!(manifest["inputs"]["corpus"].is_string());
    for f in manifest["files"].as_array().unwrap() {
        let name = f["file"].as_str().unwrap();
        assert!(first.contains_key(&Path::new("topics").join(name)), "{name}");
    }
}

#[test]
fn scorer_override_and_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("titlebias.toml"), CONFIG).unwrap();
    ok(d, &["fixture", "generate"]);
    ok(d, &["ingest", "fixture/corpus.jsonl"]);
    let trained = ok(d, &["train", "--labels", "fixture/labels.jsonl", "--scorer", "gbt", "--out", "gbt.json"]);
    assert_eq!(trained["kind"], "gbt");
    let scored = ok(d, &["score", "--model", "gbt.json", "--out", "gbt/predictions.jsonl"]);
    assert_eq!(scored["scorer_id"], "gbt-bow");
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(d.join("gbt/predictions.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scorer_id"], "gbt-bow");

    // nothing is labelled in the store yet, so the labelled partition is empty
    let (code, err) = fails(d, &["score", "--model", "gbt.json", "--partition", "labeled"]);
    assert_eq!(code, 1);
    assert!(err["message"].as_str().unwrap().contains("partition"), "{err}");
}

#[test]
fn offline_active_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("titlebias.toml"),
        "[fixture]\nn_titles = 1500\n\n[service]\nannotators = [{ id = \"a1\", token = \"t1\" }]\n",
    )
    .unwrap();
    ok(d, &["fixture", "generate"]);
    ok(d, &["ingest", "fixture/corpus.jsonl"]);
    let status = ok(d, &["active", "status"]);
    assert_eq!(status["progress"]["iteration"], 0);
    assert_eq!(status["progress"]["batch_size"], 400);

    let (code, err) = fails(d, &["active", "iterate"]);
    assert_eq!(code, 1);
    assert_eq!(err["kind"], "incomplete");
    assert!(err["message"].as_str().unwrap().contains("a1"));
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let (code, err) = fails(d, &["no-such-command"]);
    assert_eq!((code, err["kind"].as_str()), (2, Some("usage")));
    let (code, err) = fails(d, &["train", "--scorer", "bert"]);
    assert_eq!((code, err["kind"].as_str()), (2, Some("usage")));

    let (code, err) = fails(d, &["ingest", "missing.jsonl"]);
    assert_eq!(code, 1);
    assert_eq!(err["kind"], "io");

    let (_, err) = fails(d, &["score"]);
    assert!(err["message"].as_str().unwrap().contains("ingest"), "{err}");

    std::fs::write(d.join("titlebias.toml"), "unknown_key = 1\n").unwrap();
    let (code, err) = fails(d, &["prep"]);
    assert_eq!((code, err["kind"].as_str()), (1, Some("config")));

    std::fs::write(d.join("titlebias.toml"), "smoothing_window = 4\n").unwrap();
    let (_, err) = fails(d, &["prep"]);
    assert!(err["message"].as_str().unwrap().contains("window"), "{err}");

    std::fs::remove_file(d.join("titlebias.toml")).unwrap();
    std::fs::write(d.join("bad.jsonl"), "{\"id\": \"x\"}\nnot json\n").unwrap();
    let ingested = ok(d, &["ingest", "bad.jsonl"]);
    assert_eq!(ingested["accepted"], 0);
    assert_eq!(ingested["rejected"], 2);
}
