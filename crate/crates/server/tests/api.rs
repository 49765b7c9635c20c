use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::{Duration, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use suba::service::{Clock, SteppingClock, TrialService};
use suba_server::{router, AppState};
use tower::ServiceExt;

fn clock() -> Arc<dyn Clock> {
    Arc::new(SteppingClock::new(
        Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap(),
        Duration::milliseconds(250),
    ))
}

fn app_with(service: TrialService, token: Option<&str>) -> Router {
    router(
        AppState {
            service: Arc::new(service),
            token: token.map(Into::into),
        },
        None,
    )
}

fn app() -> Router {
    app_with(TrialService::in_memory(clock()), None)
}

/// Three arms, two markers, two split rounds: small enough to rebuild
/// instantly.
fn small_trial() -> Value {
    json!({
        "max_enrollment": 12,
        "runin": 4,
        "n_arms": 3,
        "n_markers": 2,
        "max_rounds": 2,
        "grid_points": 3,
        "seed": 5
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/trials", Some(small_trial()), &[]).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["trial_id"].as_str().unwrap().to_string()
}

async fn enroll(app: &Router, id: &str, x: [f64; 2]) -> Value {
    let (status, body) = call(app, "POST", &format!("/trials/{id}/patients"), Some(json!({ "biomarkers": x })), &[]).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body
}

async fn outcome(app: &Router, id: &str, patient: u64, y: bool) -> (StatusCode, Value) {
    call(app, "POST", &format!("/trials/{id}/patients/{patient}/outcome"), Some(json!({ "y": y })), &[]).await
}

#[tokio::test]
async fn fresh_trial_predicts_one_half_for_every_arm() {
    let app = app();
    let id = create(&app).await;
    let (status, body) = call(&app, "GET", &format!("/trials/{id}/predictive?x=0.2,-0.4"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let arms = body["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 3);
    for a in arms {
        assert!((a["q"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    }
    let (status, _) = call(&app, "GET", &format!("/trials/{id}/predictive?x=0.2"), None, &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "GET", &format!("/trials/{id}/predictive?x=a,b"), None, &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn invalid_configuration_is_rejected() {
    let app = app();
    let mut spec = small_trial();
    spec["runin"] = json!(13);
    let (status, body) = call(&app, "POST", "/trials", Some(spec), &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "invalid");
    let (status, _) = call(&app, "POST", "/trials", Some(json!({ "bogus": 1 })), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn idempotency_key_returns_the_same_trial() {
    let app = app();
    let key = [("idempotency-key", "enroll-site-7")];
    let (s1, b1) = call(&app, "POST", "/trials", Some(small_trial()), &key).await;
    let (s2, b2) = call(&app, "POST", "/trials", Some(small_trial()), &key).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::OK));
    assert_eq!(b1["trial_id"], b2["trial_id"]);
    let (_, list) = call(&app, "GET", "/trials", None, &[]).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn runin_patient_gets_uniform_assignment_with_q_vector() {
    let app = app();
    let id = create(&app).await;
    let rec = enroll(&app, &id, [0.1, 0.9]).await;
    assert_eq!(rec["patient"], 1);
    assert_eq!(rec["phase"], "run_in");
    assert_eq!(rec["rule"], "run_in");
    assert_eq!(rec["q"].as_array().unwrap().len(), 3);
    let (_, events) = call(&app, "GET", &format!("/trials/{id}/events?since=0"), None, &[]).await;
    let kinds: Vec<&str> = events.as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["trial_created", "patient_enrolled", "arm_assigned"]);
    assert_eq!(events[2]["arm"], rec["recommended_arm"]);
    let (_, later) = call(&app, "GET", &format!("/trials/{id}/events?since=2"), None, &[]).await;
    assert_eq!(later.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn duplicate_and_unknown_outcomes() {
    let app = app();
    let id = create(&app).await;
    enroll(&app, &id, [0.0, 0.0]).await;
    assert_eq!(outcome(&app, &id, 1, true).await.0, StatusCode::OK);
    let (_, before) = call(&app, "GET", &format!("/trials/{id}/events"), None, &[]).await;
    let (status, body) = outcome(&app, &id, 1, false).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "conflict");
    assert_eq!(outcome(&app, &id, 7, false).await.0, StatusCode::NOT_FOUND);
    let (_, after) = call(&app, "GET", &format!("/trials/{id}/events"), None, &[]).await;
    assert_eq!(before, after);
    assert_eq!(call(&app, "GET", "/trials/trial-9999/state", None, &[]).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn partition_needs_an_outcome_and_is_stable() {
    let app = app();
    let id = create(&app).await;
    let (status, body) = call(&app, "GET", &format!("/trials/{id}/partition"), None, &[]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "no_outcomes");
    for (i, x) in [[-0.5, 0.3], [0.4, -0.2], [0.9, 0.8]].into_iter().enumerate() {
        enroll(&app, &id, x).await;
        outcome(&app, &id, i as u64 + 1, i != 1).await;
    }
    let (status, first) = call(&app, "GET", &format!("/trials/{id}/partition"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert!(first["tree"]["node"].is_string());
    let (_, second) = call(&app, "GET", &format!("/trials/{id}/partition"), None, &[]).await;
    assert_eq!(first, second);
}

/// Arm 3 never responds and the others always do: the first adaptive-phase
/// check drops it.
#[tokio::test]
async fn inferior_arm_is_dropped_and_announced() {
    let app = app();
    let id = create(&app).await;
    let profiles = [[-0.8, -0.6], [0.7, -0.3], [-0.2, 0.9], [0.5, 0.4], [0.1, -0.9], [-0.6, 0.2]];
    let mut dropped = None;
    for (i, x) in profiles.into_iter().enumerate() {
        let rec = enroll(&app, &id, x).await;
        let y = rec["recommended_arm"] != 3;
        let (status, delta) = outcome(&app, &id, i as u64 + 1, y).await;
        assert_eq!(status, StatusCode::OK);
        if !delta["dropped"].as_array().unwrap().is_empty() {
            dropped = Some(delta);
            break;
        }
    }
    let delta = dropped.expect("arm 3 was never dropped");
    assert_eq!(delta["dropped"], json!([3]));
    let (_, events) = call(&app, "GET", &format!("/trials/{id}/events"), None, &[]).await;
    assert!(events.as_array().unwrap().iter().any(|e| e["kind"] == "arm_dropped" && e["arm"] == 3));
    let (_, state) = call(&app, "GET", &format!("/trials/{id}/state"), None, &[]).await;
    assert_eq!(state["active_arms"], json!([1, 2]));
}

#[tokio::test]
async fn stopped_trial_refuses_enrollment() {
    let app = app();
    let mut spec = small_trial();
    spec["max_enrollment"] = json!(4);
    let (_, created) = call(&app, "POST", "/trials", Some(spec), &[]).await;
    let id = created["trial_id"].as_str().unwrap().to_string();
    for i in 0..4u64 {
        enroll(&app, &id, [i as f64 / 4.0, 0.0]).await;
        outcome(&app, &id, i + 1, true).await;
    }
    let (_, state) = call(&app, "GET", &format!("/trials/{id}/state"), None, &[]).await;
    assert_eq!(state["phase"], "stopped");
    assert_eq!(state["stop_reason"], "max_enrollment");
    let (status, _) = call(&app, "POST", &format!("/trials/{id}/patients"), Some(json!({ "biomarkers": [0.0, 0.0] })), &[]).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn bearer_token_guards_trial_routes() {
    let app = app_with(TrialService::in_memory(clock()), Some("s3cret"));
    assert_eq!(call(&app, "GET", "/trials", None, &[]).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(
        call(&app, "GET", "/trials", None, &[("authorization", "Bearer nope")]).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        call(&app, "GET", "/trials", None, &[("authorization", "Bearer s3cret")]).await.0,
        StatusCode::OK
    );
    assert_eq!(call(&app, "GET", "/healthz", None, &[]).await.0, StatusCode::OK);
}

fn journal_bytes(dir: &Path, id: &str) -> Vec<u8> {
    std::fs::read(dir.join(format!("{id}.jsonl"))).unwrap()
}

#[tokio::test]
async fn journal_is_written_ahead_and_reads_leave_it_alone() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(TrialService::open(dir.path(), clock()).unwrap(), None);
    let id = create(&app).await;
    for i in 0..5u64 {
        let rec = enroll(&app, &id, [i as f64 / 5.0 - 0.5, 0.3]).await;
        let text = String::from_utf8(journal_bytes(dir.path(), &id)).unwrap();
        let line: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(line["seq"], rec["seq"]);
        assert_eq!(line["kind"], "arm_assigned");
        assert_eq!(line["arm"], rec["recommended_arm"]);
        outcome(&app, &id, i + 1, i % 2 == 0).await;
    }
    let before = journal_bytes(dir.path(), &id);
    call(&app, "GET", &format!("/trials/{id}/state"), None, &[]).await;
    call(&app, "GET", &format!("/trials/{id}/partition"), None, &[]).await;
    call(&app, "GET", &format!("/trials/{id}/predictive?x=0,0"), None, &[]).await;
    call(&app, "GET", &format!("/trials/{id}/events?since=3"), None, &[]).await;
    assert_eq!(before, journal_bytes(dir.path(), &id));
}

#[tokio::test]
async fn restart_restores_trials_from_journals() {
    let dir = tempfile::tempdir().unwrap();
    let (id, state, events, q) = {
        let app = app_with(TrialService::open(dir.path(), clock()).unwrap(), None);
        let id = create(&app).await;
        for i in 0..6u64 {
            let (_, state) = call(&app, "GET", &format!("/trials/{id}/state"), None, &[]).await;
            if state["phase"] == "stopped" {
                break;
            }
            enroll(&app, &id, [0.3 - i as f64 / 6.0, i as f64 / 8.0]).await;
            outcome(&app, &id, i + 1, i % 3 != 0).await;
        }
        let (_, state) = call(&app, "GET", &format!("/trials/{id}/state"), None, &[]).await;
        let (_, events) = call(&app, "GET", &format!("/trials/{id}/events"), None, &[]).await;
        let (_, q) = call(&app, "GET", &format!("/trials/{id}/predictive?x=0.1,0.2"), None, &[]).await;
        (id, state, events, q)
    };
    let app = app_with(TrialService::open(dir.path(), clock()).unwrap(), None);
    assert_eq!(call(&app, "GET", &format!("/trials/{id}/state"), None, &[]).await.1, state);
    assert_eq!(call(&app, "GET", &format!("/trials/{id}/events"), None, &[]).await.1, events);
    assert_eq!(call(&app, "GET", &format!("/trials/{id}/predictive?x=0.1,0.2"), None, &[]).await.1, q);
    let second = create(&app).await;
    assert_ne!(second, id);
}

#[tokio::test]
async fn console_assets_are_served_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>console</html>").unwrap();
    let app = router(
        AppState {
            service: Arc::new(TrialService::in_memory(clock())),
            token: None,
        },
        Some(dir.path().to_path_buf()),
    );
    let (status, body) = call(&app, "GET", "/index.html", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, Value::String("<html>console</html>".into()));
}
