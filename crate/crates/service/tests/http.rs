//! End-to-end HTTP tests against the router with a temporary store.

use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fairplai::{router, AppState, MEDIA_TYPE};
use fairplai_core::config::TrainingConfig;
use fairplai_core::store::Store;

const SCHEMA: &str = r#"{"columns":[
    {"name":"x1","kind":"numeric","bounds":[0,10]},
    {"name":"x2","kind":"numeric","bounds":[0,10]},
    {"name":"g","kind":"binary","categories":["a","b"]},
    {"name":"y","kind":"binary","categories":["0","1"]}],
    "label":"y","protected":["g"]}"#;

const BOUNDARY: &str = "fairplai-test-boundary";

fn app(dir: &tempfile::TempDir) -> Router {
    let store = Store::open(dir.path()).expect("store");
    router(AppState::new(store, TrainingConfig::default(), 2))
}

/// 240 rows where x1 tracks the label and group b has fewer positives.
fn synthetic_csv() -> String {
    let mut csv = String::from("x1,x2,g,y\n");
    for i in 0..240u32 {
        let g = if i % 5 < 2 { "b" } else { "a" };
        let y = u32::from(if g == "a" { i % 10 < 6 } else { i % 10 < 3 });
        let x1 = f64::from(y * 4) + f64::from((i * 7) % 13) * 0.45;
        let x2 = f64::from((i * 11) % 17) * 0.5;
        csv.push_str(&format!("{x1:.2},{x2:.2},{g},{y}\n"));
    }
    csv
}

fn multipart(csv: &str, schema: &str) -> Vec<u8> {
    let mut body = String::new();
    for (name, content) in [("csv", csv), ("schema", schema)] {
        body.push_str(&format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\nContent-Type: application/octet-stream\r\n\r\n{content}\r\n"
        ));
    }
    body.push_str(&format!("--{BOUNDARY}--\r\n"));
    body.into_bytes()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.expect("response");
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap_or_default().to_string());
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    if !bytes.is_empty() {
        assert_eq!(ctype.as_deref(), Some(MEDIA_TYPE), "content type for {status}");
    }
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).expect("json body") };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri).header(header::CONTENT_TYPE, MEDIA_TYPE).body(Body::from(body.to_string())).unwrap();
    send(app, req).await
}

async fn upload(app: &Router) -> String {
    let req = Request::post("/v1/datasets")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(&synthetic_csv(), SCHEMA)))
        .unwrap();
    let (status, body) = send(app, req).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["n_rows"], 240);
    body["id"].as_str().unwrap().to_string()
}

fn small_grid() -> Value {
    json!({
        "epsilons": [1.0, "non_private"],
        "constraints": ["unconstrained"],
        "model_kinds": ["logreg"],
        "seeds": [0, 1],
        "interventions": ["none"]
    })
}

async fn wait_done(app: &Router, job: &str) -> Value {
    for _ in 0..600 {
        let (status, body) = get(app, &format!("/v1/jobs/{job}")).await;
        assert_eq!(status, StatusCode::OK);
        match body["status"].as_str() {
            Some("done") => return body,
            Some("failed") => panic!("job failed: {body}"),
            _ => tokio::time::sleep(Duration::from_millis(100)).await,
        }
    }
    panic!("job {job} did not finish");
}

async fn build(app: &Router, dataset: &str) -> String {
    let (status, job) = post(app, "/v1/frontiers", json!({ "dataset": dataset, "grid": small_grid(), "seed": 3 })).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    assert!(matches!(job["status"].as_str(), Some("queued" | "running")));
    let done = wait_done(app, job["id"].as_str().unwrap()).await;
    assert_eq!(done["progress"]["completed"], done["progress"]["total"]);
    done["result"].as_str().unwrap().to_string()
}

fn tuple(delta: f64, accuracy: f64) -> Value {
    json!({
        "criterion": "demographic_parity",
        "delta": delta,
        "epsilon_band": [0.5, null],
        "attributes": ["g"],
        "performance": { "metric": "accuracy", "threshold": accuracy },
        "priority": "constraint_first"
    })
}

#[tokio::test]
async fn lexicon_is_served_under_the_media_type() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let (status, body) = get(&app, "/v1/lexicon").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["version"].is_string(), "{body}");
}

#[tokio::test]
async fn unknown_resources_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let (status, body) = post(&app, "/v1/frontiers", json!({ "dataset": "0".repeat(64) })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_dataset");
    let (status, body) = get(&app, "/v1/jobs/job-999999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_job");
    let (status, _) = get(&app, &format!("/v1/contracts/{}", "f".repeat(64))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn frontier_policy_selection_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let dataset = upload(&app).await;
    let (status, summary) = get(&app, &format!("/v1/datasets/{dataset}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["protected"], json!(["g"]));

    let mut empty = small_grid();
    empty["seeds"] = json!([]);
    let (status, body) = post(&app, "/v1/frontiers", json!({ "dataset": dataset, "grid": empty })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["error"]["code"], "invalid_grid");

    let frontier = build(&app, &dataset).await;
    assert_eq!(build(&app, &dataset).await, frontier, "same inputs give the same frontier digest");
    let (status, f) = get(&app, &format!("/v1/frontiers/{frontier}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(f["points"].as_array().unwrap().len(), 2);
    assert_eq!(f["digest"], frontier.as_str());

    let policy = format!("/v1/frontiers/{frontier}/policy");
    let (status, body) = post(&app, &policy, json!({ "prompt": "maximally fair please" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "unrecognized_intent");
    assert!(body["error"]["span"].is_string(), "{body}");

    let (status, body) = post(&app, &policy, json!({ "prompt": "equal outcomes across groups, strong privacy" })).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["tuple"]["criterion"], "demographic_parity");
    assert_eq!(body["tuple"]["attributes"], json!(["g"]));
    assert!(body["explanation"].as_str().is_some_and(|s| !s.is_empty()));

    let (status, body) = post(&app, &policy, json!({ "tuple": tuple(0.5, 0.999) })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["candidates"], json!([]));
    assert!(!body["diagnostics"].as_array().unwrap().is_empty(), "{body}");

    let (status, body) = post(&app, &policy, json!({ "tuple": tuple(0.5, 0.5) })).await;
    assert_eq!(status, StatusCode::OK);
    let candidates = body["candidates"].as_array().unwrap();
    assert!(!candidates.is_empty(), "{body}");
    let chosen = candidates[0]["point_id"].as_str().unwrap();

    let selection = format!("/v1/frontiers/{frontier}/selection");
    let (status, body) = post(&app, &selection, json!({ "tuple": tuple(0.5, 0.999), "chosen": chosen })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "infeasible_choice");

    let (status, body) = post(&app, &selection, json!({ "tuple": tuple(0.5, 0.5), "chosen": chosen })).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let contract = body["contract_id"].as_str().unwrap().to_string();
    let (status, c) = get(&app, &format!("/v1/contracts/{contract}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["chosen"], chosen);
    let (status, audit) = get(&app, &format!("/v1/contracts/{contract}/audit")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(audit["passed"], true, "{audit}");
}
