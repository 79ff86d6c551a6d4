use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use sde_core::corpus::{generate_synthetic, make_examples, SyntheticConfig, Turn};
use sde_core::encoder::EncoderConfig;
use sde_core::model::{ModelBundle, ModelConfig};
use sde_core::schema::{save_schema, ActionId, SchemaRegistry};
use sde_core::train::{TrainConfig, Trainer};
use sde_service::{contracts, router, AppState, Engine, Journal, Session, MODEL_FILE};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    bundle: ModelBundle,
    registry: SchemaRegistry,
}

/// SAM trained on the bank balance dialogs until it reproduces them; the
/// registry holds all six synthetic tasks.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let (corpus, graphs) = generate_synthetic(&SyntheticConfig::default(), 0).unwrap();
        let registry = SchemaRegistry::from_graphs(graphs).unwrap();
        let examples: Vec<_> = make_examples(&corpus)
            .into_iter()
            .filter(|e| e.task == "bank_balance")
            .collect();
        let config = TrainConfig {
            model_config: ModelConfig {
                encoder: EncoderConfig {
                    dim: 32,
                    layers: 1,
                    heads: 2,
                    ffn_dim: 64,
                    max_positions: 64,
                    max_vocab: 1000,
                },
                context_window: 48,
                mixture_weight: 0.5,
            },
            epochs: 8,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let outcome = Trainer::new(config, &examples, &registry, None)
            .unwrap()
            .run()
            .unwrap();
        Fixture {
            bundle: outcome.best,
            registry,
        }
    })
}

fn app() -> Router {
    let f = fixture();
    router(AppState::new(
        Engine::new(f.bundle.clone(), f.registry.clone()).unwrap(),
    ))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn validator(contract: &str) -> jsonschema::Validator {
    let mut opts = jsonschema::options();
    for (name, src) in contracts::ALL {
        let resource =
            jsonschema::Resource::from_contents(serde_json::from_str(src).unwrap()).unwrap();
        opts = opts.with_resource(format!("json-schema:///{name}"), resource);
    }
    opts.build(&serde_json::from_str(contract).unwrap())
        .unwrap()
}

fn assert_contract(contract: &str, v: &Value) {
    let errors: Vec<String> = validator(contract)
        .iter_errors(v)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{errors:?}\n{v:#}");
}

async fn new_session(app: &Router, task: &str) -> Value {
    let (status, v) = call(
        app,
        Method::POST,
        "/api/session",
        Some(json!({ "task": task })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

async fn say(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    call(
        app,
        Method::POST,
        &format!("/api/session/{id}/utterance"),
        Some(json!({ "text": text })),
    )
    .await
}

#[test]
fn contracts_are_valid_json_schemas() {
    for (name, src) in contracts::ALL {
        let v: Value = serde_json::from_str(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(jsonschema::meta::is_valid(&v), "{name}");
    }
}

#[tokio::test]
async fn health_tasks_and_schema() {
    let app = app();
    let (s, v) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_contract(contracts::HEALTH, &v);
    assert_eq!(v["tasks"], 6);

    let (s, v) = call(&app, Method::GET, "/api/tasks", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_contract(contracts::TASKS, &v);
    let domains: std::collections::BTreeSet<&str> = v["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["domain"].as_str().unwrap())
        .collect();
    assert_eq!(domains.len(), 2);

    let (s, v) = call(&app, Method::GET, "/api/schema/bank_balance", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_contract(contracts::SCHEMA_GRAPH, &v);
    assert_eq!(v["start"], "hello");

    let (s, v) = call(&app, Method::GET, "/api/schema/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_contract(contracts::ERROR, &v);
    assert_eq!(v["error"]["code"], "unknown_task");
    assert!(v["error"]["message"]
        .as_str()
        .unwrap()
        .contains("bank_balance"));
}

#[tokio::test]
async fn sessions_open_with_the_greeting_and_get_distinct_ids() {
    let app = app();
    let a = new_session(&app, "bank_balance").await;
    let b = new_session(&app, "bank_balance").await;
    assert_contract(contracts::SESSION, &a);
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(a["history"].as_array().unwrap().len(), 1);
    assert_eq!(a["history"][0]["speaker"], "system");
    assert_eq!(a["history"][0]["action"], "hello");

    let (s, v) = call(
        &app,
        Method::POST,
        "/api/session",
        Some(json!({ "task": "bank_loans" })),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "unknown_task");
    let (s, v) = call(&app, Method::GET, "/api/session/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "unknown_session");
    let (s, v) = call(
        &app,
        Method::POST,
        "/api/session",
        Some(json!({ "tsk": 1 })),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_contract(contracts::ERROR, &v);
}

#[tokio::test]
async fn forgotten_account_number_leads_to_the_backup_question() {
    let app = app();
    let session = new_session(&app, "bank_balance").await;
    let id = session["session_id"].as_str().unwrap();

    let (s, v) = say(&app, id, "I would like to check my bank balance.").await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_contract(contracts::UTTERANCE_RESPONSE, &v);
    assert_eq!(v["ranked"][0]["action"], "bank_balance_ask_account_number");

    let (s, v) = say(&app, id, "I don't remember my account number.").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["ranked"][0]["action"], "bank_balance_ask_date_of_birth");
    assert_eq!(
        v["reply"]["text"],
        "Could you provide your date of birth, please?"
    );
    assert_eq!(v["alignments"][0]["node_id"], "u_forgot_account_number");
    let total: f64 = v["ranked"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["probability"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
    let probs: Vec<f64> = v["ranked"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["probability"].as_f64().unwrap())
        .collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(v["history_length"], 5);
}

#[tokio::test]
async fn query_turns_carry_the_database_row() {
    let app = app();
    let id = new_session(&app, "bank_balance").await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    let said = [
        "I would like to check my bank balance.",
        "My account number is 4821.",
        "My full name is Ada Lovelace.",
        "My pin is 1234.",
        "My home branch is in Boston.",
    ];
    let mut last = Value::Null;
    for text in said {
        last = say(&app, &id, text).await.1;
    }
    assert_eq!(last["reply"]["action"], "query");
    assert_eq!(last["reply"]["db_result"], "RESULT: balance [AMOUNT]");
    let (_, v) = say(&app, &id, "ok").await;
    assert_eq!(v["reply"]["action"], "bank_balance_inform_result");
    assert_eq!(v["reply"]["text"], "Your balance is {balance}.");
    let (_, session) = call(&app, Method::GET, &format!("/api/session/{id}"), None).await;
    assert_contract(contracts::SESSION, &session);
    assert_eq!(
        session["history"].as_array().unwrap().len(),
        1 + 2 * (said.len() + 1)
    );
}

#[tokio::test]
async fn empty_text_is_rejected_and_leaves_the_session_alone() {
    let app = app();
    let id = new_session(&app, "bank_balance").await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    for text in ["", "   "] {
        let (s, v) = say(&app, &id, text).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(v["error"]["code"], "validation");
        assert_contract(contracts::ERROR, &v);
    }
    let (s, v) = call(
        &app,
        Method::POST,
        &format!("/api/session/{id}/utterance"),
        Some(json!({})),
    )
    .await;
    assert!(s.is_client_error());
    assert_contract(contracts::ERROR, &v);
    let (_, session) = call(&app, Method::GET, &format!("/api/session/{id}"), None).await;
    assert_eq!(session["history"].as_array().unwrap().len(), 1);
    let (s, v) = say(&app, "missing", "hello").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "unknown_session");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_are_serialized_per_session() {
    let app = app();
    let id = new_session(&app, "bank_balance").await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    let posts = 12;
    let handles: Vec<_> = (0..posts)
        .map(|i| {
            let (app, id) = (app.clone(), id.clone());
            tokio::spawn(async move { say(&app, &id, &format!("message number {i}")).await })
        })
        .collect();
    let mut lengths = Vec::new();
    for h in handles {
        let (s, v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        lengths.push(v["history_length"].as_u64().unwrap());
    }
    lengths.sort();
    assert_eq!(
        lengths,
        (1..=posts).map(|k| 1 + 2 * k).collect::<Vec<u64>>()
    );
    let (_, v) = call(&app, Method::GET, &format!("/api/session/{id}"), None).await;
    let session: Session = serde_json::from_value(v).unwrap();
    assert_eq!(session.history.len() as u64, 1 + 2 * posts);
    assert!(sde_service::alternates(&session.history));
    for pair in session.history[1..].chunks(2) {
        assert_eq!(pair[0].turn.speaker, sde_core::corpus::Speaker::User);
        assert_eq!(pair[1].turn.speaker, sde_core::corpus::Speaker::System);
    }
}

#[tokio::test]
async fn stateless_predict_is_repeatable() {
    let app = app();
    let history = vec![
        Turn::system("Hello! How can I help you today?", ActionId::new("hello")),
        Turn::user("I would like to check my bank balance."),
    ];
    let req = json!({ "task": "bank_balance", "history": history });
    let (s, a) = call(&app, Method::POST, "/api/predict", Some(req.clone())).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    assert_contract(contracts::PREDICT_RESPONSE, &a);
    let (_, b) = call(&app, Method::POST, "/api/predict", Some(req)).await;
    assert_eq!(a["ranked"], b["ranked"]);
    assert_eq!(a["alignments"], b["alignments"]);

    let (s, v) = call(
        &app,
        Method::POST,
        "/api/predict",
        Some(json!({ "task": "x", "history": [] })),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "unknown_task");
    let (s, _) = call(
        &app,
        Method::POST,
        "/api/predict",
        Some(json!({ "task": "bank_balance", "history": [{ "speaker": "robot", "text": "x" }] })),
    )
    .await;
    assert!(s.is_client_error());
}

#[tokio::test]
async fn cors_headers_are_present() {
    let app = app();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/tasks")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "GET")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[tokio::test]
async fn loads_from_directories_and_replays_the_journal() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (model_dir, schema_dir) = (dir.path().join("model"), dir.path().join("schemas"));
    std::fs::create_dir_all(&model_dir).unwrap();
    std::fs::create_dir_all(&schema_dir).unwrap();
    f.bundle.save(model_dir.join(MODEL_FILE)).unwrap();
    for s in f.registry.schemas() {
        save_schema(s.graph(), schema_dir.join(format!("{}.json", s.task()))).unwrap();
    }
    let journal = dir.path().join("sessions.jsonl");
    let state = || {
        AppState::new(Engine::load(&model_dir, &schema_dir).unwrap())
            .with_journal(Journal::open(&journal).unwrap())
            .unwrap()
    };
    let app = router(state());
    let id = new_session(&app, "bank_balance").await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    say(&app, &id, "I would like to check my bank balance.").await;
    let before = call(&app, Method::GET, &format!("/api/session/{id}"), None)
        .await
        .1;

    let restarted = router(state());
    let after = call(&restarted, Method::GET, &format!("/api/session/{id}"), None)
        .await
        .1;
    assert_eq!(before, after);
    assert_eq!(after["history"].as_array().unwrap().len(), 3);
}

#[test]
fn changed_schema_is_refused_at_load() {
    let f = fixture();
    let mut graph = f.registry.get("bank_balance").unwrap().graph().clone();
    graph
        .nodes
        .iter_mut()
        .find(|n| n.id.as_str() == "u_request")
        .unwrap()
        .text = "Balance please.".into();
    let mut registry = SchemaRegistry::new();
    registry.insert(sde_core::schema::ValidSchema::new(graph).unwrap());
    assert!(Engine::new(f.bundle.clone(), registry).is_err());
}
