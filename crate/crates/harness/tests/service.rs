mod common;

use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{base_config, planted};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use spatiotag_core::active::{run_active_learning, ALConfig, SimulatedOracle};
use spatiotag_core::corpus::Corpus;
use spatiotag_core::features::FeatureConfig;
use spatiotag_harness::service::{router, AppState};
use spatiotag_harness::session::AnnotationSession;
use tower::ServiceExt;

fn al_config() -> ALConfig {
    ALConfig {
        initial_seed_count: 3,
        batch_size: 2,
        rounds: 3,
        ensemble_size: 3,
        nbest: 3,
        seed: 7,
        ..ALConfig::default()
    }
}

fn features() -> FeatureConfig {
    base_config().features.build().unwrap()
}

fn data() -> (Corpus, Corpus) {
    planted(30, 15, 11)
}

fn open(dir: &Path, pool: &Corpus, test: &Corpus) -> AnnotationSession {
    AnnotationSession::open(pool, test.clone(), features(), al_config(), dir, true).unwrap()
}

fn gold(pool: &Corpus, id: &str) -> Vec<String> {
    let s = pool.sentences.iter().find(|s| s.id == id).unwrap();
    s.tokens
        .iter()
        .map(|t| pool.labels.name(t.gold.unwrap()).to_owned())
        .collect()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn label(app: &Router, id: &str, labels: &[String]) -> (StatusCode, Value) {
    call(
        app,
        "POST",
        "/session/label",
        Some(json!({ "sentence_id": id, "labels": labels })),
    )
    .await
}

/// Answers the outstanding query with its gold labels.
async fn answer(app: &Router, pool: &Corpus) -> Option<(StatusCode, Value)> {
    let (code, q) = call(app, "GET", "/session/next", None).await;
    if code == StatusCode::NO_CONTENT {
        return None;
    }
    let id = q["sentence_id"].as_str().unwrap().to_owned();
    Some(label(app, &id, &gold(pool, &id)).await)
}

#[tokio::test]
async fn protocol_shape_and_round_progress() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let app = router(AppState::new(open(tmp.path(), &pool, &test)));

    let (code, status) = call(&app, "GET", "/session/status", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(status["round"], 0);
    assert_eq!(status["labeled"], 0);
    assert_eq!(status["unlabeled"], 30);
    assert!(status.get("last_f1").is_none());
    assert_eq!(status["labels"].as_array().unwrap().len(), pool.labels.len());

    let (code, q) = call(&app, "GET", "/session/next", None).await;
    assert_eq!(code, StatusCode::OK);
    assert!(q["utility"].is_null());
    let tokens = q["tokens"].as_array().unwrap();
    assert!(!tokens.is_empty());
    for t in tokens {
        assert!(t["surface"].is_string());
        assert!(t["suggestion"].is_null());
        assert!(t.get("marginals").is_none());
    }

    for i in 1..=3 {
        let (code, body) = answer(&app, &pool).await.unwrap();
        assert_eq!(code, StatusCode::OK, "{body}");
        assert_eq!(body["accepted"], true);
        let (_, status) = call(&app, "GET", "/session/status", None).await;
        assert_eq!(status["labeled"], i);
        assert_eq!(body["round"], if i < 3 { 0 } else { 1 });
    }
    let (_, status) = call(&app, "GET", "/session/status", None).await;
    assert_eq!(status["round"], 1);
    assert_eq!(status["training"], false);
    assert!((0.0..=1.0).contains(&status["last_f1"].as_f64().unwrap()));

    let (_, q) = call(&app, "GET", "/session/next", None).await;
    assert!(q["utility"].as_f64().unwrap() >= 0.0);
    let names: Vec<&str> = status["labels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for t in q["tokens"].as_array().unwrap() {
        assert!(names.contains(&t["suggestion"].as_str().unwrap()));
        let m = t["marginals"].as_object().unwrap();
        assert_eq!(m.len(), names.len());
        let sum: f64 = m.values().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{sum}");
    }
}

#[tokio::test]
async fn bad_requests_leave_the_session_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let session = open(tmp.path(), &pool, &test);
    let state_path = session.state_path();
    let app = router(AppState::new(session));
    let before = std::fs::read(&state_path).unwrap();
    let (_, status0) = call(&app, "GET", "/session/status", None).await;
    let (_, q) = call(&app, "GET", "/session/next", None).await;
    let id = q["sentence_id"].as_str().unwrap().to_owned();
    let labels = gold(&pool, &id);

    let other = pool.sentences.iter().find(|s| s.id != id).unwrap();
    let conflicts = [
        label(&app, &other.id, &gold(&pool, &other.id)).await,
        label(&app, "no-such-sentence", &labels).await,
    ];
    for (code, body) in conflicts {
        assert_eq!(code, StatusCode::CONFLICT, "{body}");
        assert!(body["error"].is_string());
    }

    let mut short = labels.clone();
    short.pop();
    let mut unknown = labels.clone();
    unknown[0] = "NOT-A-TAG".into();
    let malformed = [
        label(&app, &id, &short).await,
        label(&app, &id, &unknown).await,
        call(&app, "POST", "/session/label", Some(json!({ "sentence_id": id }))).await,
        call(&app, "POST", "/session/label", Some(json!([1, 2]))).await,
    ];
    for (code, body) in malformed {
        assert_eq!(code, StatusCode::BAD_REQUEST, "{body}");
        assert!(body["error"].is_string());
    }

    assert_eq!(call(&app, "GET", "/session/status", None).await.1, status0);
    assert_eq!(call(&app, "GET", "/session/next", None).await.1, q);
    assert_eq!(std::fs::read(&state_path).unwrap(), before);
    assert!(!tmp.path().join("audit.jsonl").exists());
}

#[tokio::test]
async fn duplicate_submissions_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let app = router(AppState::new(open(tmp.path(), &pool, &test)));
    let (_, q) = call(&app, "GET", "/session/next", None).await;
    let id = q["sentence_id"].as_str().unwrap().to_owned();
    let labels = gold(&pool, &id);
    assert_eq!(label(&app, &id, &labels).await.0, StatusCode::OK);
    let (_, status) = call(&app, "GET", "/session/status", None).await;

    let (code, body) = label(&app, &id, &labels).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["accepted"], true);
    assert_eq!(call(&app, "GET", "/session/status", None).await.1, status);

    let mut changed = labels.clone();
    let names = status["labels"].as_array().unwrap();
    changed[0] = names
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .find(|n| *n != labels[0])
        .unwrap();
    assert_eq!(label(&app, &id, &changed).await.0, StatusCode::CONFLICT);

    let audit = std::fs::read_to_string(tmp.path().join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 1);
}

#[tokio::test]
async fn restart_resumes_where_it_stopped() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let app = router(AppState::new(open(tmp.path(), &pool, &test)));
    for _ in 0..4 {
        answer(&app, &pool).await.unwrap();
    }
    let status = call(&app, "GET", "/session/status", None).await.1;
    let next = call(&app, "GET", "/session/next", None).await.1;
    drop(app);

    let app = router(AppState::new(open(tmp.path(), &pool, &test)));
    assert_eq!(call(&app, "GET", "/session/status", None).await.1, status);
    assert_eq!(call(&app, "GET", "/session/next", None).await.1, next);
    let audit = std::fs::read_to_string(tmp.path().join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 4);
    for line in audit.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["sentence_id"].is_string() && v["labels"].is_array() && v["unix_time"].is_u64());
    }
}

#[test]
fn a_complete_untrained_batch_is_closed_on_reopen() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let mut session = open(tmp.path(), &pool, &test);
    for _ in 0..3 {
        let id = session.next().unwrap().sentence_id;
        session.submit(&id, &gold(&pool, &id)).unwrap();
    }
    assert!(session.learner().needs_training());
    assert_eq!(session.status().round, 0);
    drop(session);

    let session = open(tmp.path(), &pool, &test);
    assert_eq!(session.status().round, 1);
    assert_eq!(session.learner().curve().rows.len(), 1);
    assert!(session.next().unwrap().utility.is_some());
}

#[tokio::test]
async fn service_run_matches_the_in_process_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let app = router(AppState::new(open(tmp.path(), &pool, &test)));
    let mut accepted = 0;
    while let Some((code, _)) = answer(&app, &pool).await {
        assert_eq!(code, StatusCode::OK);
        accepted += 1;
    }
    let status = call(&app, "GET", "/session/status", None).await.1;
    assert_eq!(status["done"], true);
    assert_eq!(accepted, 3 + 3 * 2);

    let mut oracle = SimulatedOracle::new(&pool).unwrap();
    let (learner, _) = run_active_learning(&pool, &test, &features(), &al_config(), &mut oracle).unwrap();
    let reopened = open(tmp.path(), &pool, &test);
    assert_eq!(reopened.learner().state(), learner.state());
    assert_eq!(reopened.learner().curve().to_csv(), learner.curve().to_csv());
    let f1 = learner.curve().rows.last().unwrap().micro_f1;
    assert_eq!(status["last_f1"].as_f64().unwrap(), f1);
}

#[tokio::test]
async fn retrain_closes_a_partial_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let app = router(AppState::new(open(tmp.path(), &pool, &test)));
    for _ in 0..3 {
        answer(&app, &pool).await.unwrap();
    }
    // one of the two round-1 queries
    answer(&app, &pool).await.unwrap();
    let (code, body) = call(&app, "POST", "/session/retrain", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["round"], 2);
    let (_, status) = call(&app, "GET", "/session/status", None).await;
    assert_eq!(status["labeled"], 4);
    assert_eq!(status["round"], 2);

    // nothing new to learn from: retrain is a no-op
    let (_, body) = call(&app, "POST", "/session/retrain", None).await;
    assert_eq!(body["round"], 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn status_answers_while_the_session_is_busy() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let state = AppState::new(open(tmp.path(), &pool, &test));
    let app = router(state.clone());

    let (held_tx, held_rx) = std::sync::mpsc::channel();
    let (release_tx, release_rx) = std::sync::mpsc::channel::<()>();
    let handle = tokio::runtime::Handle::current();
    let busy = tokio::task::spawn_blocking(move || {
        handle.block_on(state.with_session(|_| {
            held_tx.send(()).unwrap();
            release_rx.recv().unwrap();
        }))
    });
    tokio::task::spawn_blocking(move || held_rx.recv().unwrap())
        .await
        .unwrap();

    let quick = tokio::time::timeout(Duration::from_secs(2), call(&app, "GET", "/session/status", None)).await;
    assert_eq!(quick.expect("status blocked on the session lock").0, StatusCode::OK);
    let blocked = tokio::time::timeout(Duration::from_millis(200), call(&app, "GET", "/session/next", None)).await;
    assert!(blocked.is_err());

    release_tx.send(()).unwrap();
    busy.await.unwrap();
    assert_eq!(call(&app, "GET", "/session/next", None).await.0, StatusCode::OK);
}

#[test]
fn newer_state_versions_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let (pool, test) = data();
    let path = open(tmp.path(), &pool, &test).state_path();
    let mut v: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    v["version"] = json!(9);
    std::fs::write(&path, v.to_string()).unwrap();
    let err = AnnotationSession::open(&pool, test, features(), al_config(), tmp.path(), true)
        .err()
        .unwrap();
    assert!(format!("{err:#}").contains("version 9"), "{err:#}");
}
