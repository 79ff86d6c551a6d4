use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn sde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn generate(dir: &Path, dialogs: usize) {
    let o = sde(&[
        "generate-synthetic",
        "--out",
        dir.to_str().unwrap(),
        "--dialogs",
        &dialogs.to_string(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
}

fn tiny_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "epochs": 2,
        "learning_rate": 3e-3,
        "model_config": {
            "encoder": { "dim": 16, "layers": 1, "heads": 2, "ffn_dim": 32, "max_positions": 48, "max_vocab": 800 },
            "context_window": 32,
            "mixture_weight": 0.5
        }
    });
    let path = dir.join("train.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generated_schemas_validate() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 1);
    let schemas: Vec<String> = fs::read_dir(dir.path().join("schemas"))
        .unwrap()
        .map(|e| e.unwrap().path().to_str().unwrap().to_string())
        .collect();
    assert_eq!(schemas.len(), 6);
    let args: Vec<&str> = std::iter::once("validate-schema")
        .chain(schemas.iter().map(String::as_str))
        .collect();
    let o = sde(&args);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).matches(": ok").count(),
        6
    );
}

#[test]
fn broken_schema_is_reported_with_rule() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 1);
    let path = dir.path().join("schemas/bank_balance.json");
    let mut graph: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    graph["edges"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!(["hello", "no_such_node"]));
    fs::write(&path, graph.to_string()).unwrap();

    let o = sde(&["validate-schema", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("invalid"), "{out}");
    assert!(out.contains("no_such_node"), "{out}");
    assert!(out.contains('['), "diagnostics carry a rule id: {out}");
}

#[test]
fn unreadable_schema_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.json");
    fs::write(&path, "{ not json").unwrap();
    let o = sde(&["validate-schema", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sde(&["train"]).status.code(), Some(2));
    assert_eq!(sde(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        sde(&["transfer", "--holdout-kind", "galaxy"]).status.code(),
        Some(2)
    );
    assert_eq!(
        sde(&["train", "--out", "x", "--flags", "7"]).status.code(),
        Some(2)
    );
}

#[test]
fn train_eval_and_chat() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&data, 4);
    let corpus = data.join("corpus.json");
    let schemas = data.join("schemas");
    let model = dir.path().join("model");
    let cfg = tiny_config(dir.path());
    let o = sde(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--schemas",
        schemas.to_str().unwrap(),
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(model.join("model.json").is_file());
    assert!(model.join("run").is_dir());

    let bundle: Value =
        serde_json::from_str(&fs::read_to_string(model.join("model.json")).unwrap()).unwrap();
    assert_eq!(bundle["metadata"]["model_id"], "sam-seed5");

    let o = sde(&[
        "eval",
        "--corpus",
        corpus.to_str().unwrap(),
        "--schemas",
        schemas.to_str().unwrap(),
        "--model-dir",
        model.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let metrics: Value = serde_json::from_slice(&o.stdout).unwrap();
    let f1 = metrics["weighted_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert!(metrics["n"].as_u64().unwrap() > 0);

    let mut child = Command::new(env!("CARGO_BIN_EXE_sde"))
        .args([
            "chat",
            "--task",
            "bank_balance",
            "--model-dir",
            model.to_str().unwrap(),
        ])
        .args(["--schema-dir", schemas.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"I would like to check my bank balance.\n/quit\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(
        out.starts_with("SYSTEM: Hello, how can I help you?"),
        "{out}"
    );
    assert_eq!(out.matches("SYSTEM:").count(), 2, "{out}");
    assert!(out.contains("actions:"), "{out}");

    let o = sde(&[
        "chat",
        "--task",
        "pizza_order",
        "--model-dir",
        model.to_str().unwrap(),
        "--schema-dir",
        schemas.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn transfer_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&data, 3);
    let report = dir.path().join("report.json");
    let cfg = tiny_config(dir.path());
    let o = sde(&[
        "transfer",
        "--holdout-kind",
        "task",
        "--corpus",
        data.join("corpus.json").to_str().unwrap(),
        "--schemas",
        data.join("schemas").to_str().unwrap(),
        "--holdouts",
        "bank_balance",
        "--models",
        "sam,baseline",
        "--seeds",
        "1,2",
        "--epochs",
        "1",
        "--config",
        &cfg,
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(
        table.contains("sam") && table.contains("baseline"),
        "{table}"
    );
    let report: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let runs = report["runs"].as_array().expect("runs array");
    assert_eq!(runs.len(), 4);
}
