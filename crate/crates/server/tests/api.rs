use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tracelens_core::abstractor::build_model;
use tracelens_core::demo::{run_scenario, FlightScenario, ScenarioName};
use tracelens_core::io::{parse_config, serialize_efsm};
use tracelens_core::trace::filter_trace;
use tracelens_server::{router, AppState, Workspace};

struct Api {
    app: Router,
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
}

struct Reply {
    status: StatusCode,
    etag: Option<String>,
    text: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

impl Api {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Api { app: app(&root), _dir: dir, root }
    }

    /// A fresh service over the same directory, as after a restart.
    fn restart(&mut self) {
        self.app = app(&self.root);
    }

    async fn call(&self, method: Method, uri: &str, body: Option<String>, if_match: Option<&str>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(tag) = if_match {
            req = req.header(header::IF_MATCH, tag);
        }
        let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let etag = resp.headers().get(header::ETAG).map(|v| v.to_str().unwrap().to_string());
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        Reply { status, etag, text: String::from_utf8(bytes.to_vec()).unwrap() }
    }

    async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None, None).await
    }

    async fn post(&self, uri: &str, body: Value) -> Reply {
        self.call(Method::POST, uri, Some(body.to_string()), None).await
    }

    async fn put(&self, uri: &str, body: Value, if_match: Option<&str>) -> Reply {
        self.call(Method::PUT, uri, Some(body.to_string()), if_match).await
    }

    async fn demo(&self, scenario: &str) {
        let r = self.post("/api/traces:demo", json!({ "scenario": scenario })).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    }

    async fn abstract_model(&self, config: &str, traces: &[&str]) -> String {
        let r = self.post("/api/abstract", json!({ "config": config, "traces": traces })).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
        r.json()["id"].as_str().unwrap().to_string()
    }
}

fn app(root: &std::path::Path) -> Router {
    router(AppState::new(Workspace::open(root).unwrap()).unwrap())
}

fn sign_config() -> Value {
    json!({
        "name": "takeoff",
        "fields": ["altitude", "speed"],
        "functions": ["accelerate", "takeoff"],
        "constraints": ["cmp(altitude, 0)"]
    })
}

fn gear_config() -> Value {
    json!({
        "name": "gear",
        "fields": ["gear", "speed", "takeOffSpeed", "altitude", "groundAlt", "safeAltForGearRetract"],
        "functions": ["accelerate", "takeoff", "retractGear"],
        "constraints": ["value_change(gear)", "cmp(speed, takeOffSpeed)", "range(altitude, groundAlt, safeAltForGearRetract)"]
    })
}

#[tokio::test]
async fn index_page_is_served() {
    let api = Api::new();
    let r = api.get("/").await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.text.contains("/api/symbols"));
}

#[tokio::test]
async fn demo_workspace_lists_the_six_fields() {
    let api = Api::new();
    assert_eq!(api.get("/api/symbols").await.json()["fields"], json!([]));
    api.demo("takeoff").await;
    let fields: Vec<String> = api.get("/api/symbols").await.json()["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(fields, ["gear", "speed", "takeOffSpeed", "altitude", "groundAlt", "safeAltForGearRetract"]);
    let manifest = api.get("/api/symbols?format=manifest").await;
    assert!(manifest.text.lines().any(|l| l.starts_with("field altitude ")));
    let traces = api.get("/api/traces").await.json();
    assert_eq!(traces[0]["id"], "takeoff");
    assert!(traces[0]["events"].as_u64().unwrap() > 50);
}

#[tokio::test]
async fn demo_params_and_errors() {
    let api = Api::new();
    let r = api
        .post("/api/traces:demo", json!({ "scenario": "takeoff", "id": "slow", "params": { "accel_step": 5 } }))
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    assert_eq!(r.json()["id"], "slow");
    let r = api.post("/api/traces:demo", json!({ "scenario": "landing" })).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["code"], "SCENARIO");
    let r = api.post("/api/traces:demo", json!({ "scenario": "takeoff", "id": "../x" })).await;
    assert_eq!(r.json()["code"], "BAD_NAME");
}

#[tokio::test]
async fn altitude_sign_model_through_the_api() {
    let api = Api::new();
    api.demo("takeoff").await;
    assert_eq!(api.put("/api/configs/takeoff", sign_config(), None).await.status, StatusCode::CREATED);
    let id = api.abstract_model("takeoff", &["takeoff"]).await;
    let model = api.get(&format!("/api/models/{id}")).await.json();
    assert_eq!(model["states"].as_array().unwrap().len(), 2);
    assert_eq!(model["transitions"].as_array().unwrap().len(), 3);

    let dot = api.get(&format!("/api/models/{id}/dot?highlight=s1")).await.text;
    assert!(dot.starts_with("digraph model {"));
    assert_eq!(dot.matches("fillcolor").count(), 1);

    let exam = api.get(&format!("/api/models/{id}/exam?state=s1")).await.json();
    assert_eq!(exam["score"], 2);
    let r = api.get(&format!("/api/models/{id}/exam?state=s9")).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::NOT_FOUND, Some("UNKNOWN_STATE")));
}

#[tokio::test]
async fn api_model_matches_the_library_pipeline_byte_for_byte() {
    let api = Api::new();
    api.demo("takeoff").await;
    api.demo("takeoff_with_gear").await;
    let saved = api.put("/api/configs/gear", gear_config(), None).await.text;
    let id = api.abstract_model("gear", &["takeoff_with_gear", "takeoff"]).await;
    let served = api.get(&format!("/api/models/{id}")).await.text;

    let cfg = parse_config(&saved).unwrap();
    let fts: Vec<_> = [ScenarioName::TakeoffWithGear, ScenarioName::Takeoff]
        .into_iter()
        .map(|n| filter_trace(&run_scenario(&FlightScenario::new(n)).unwrap(), &cfg).unwrap())
        .collect();
    assert_eq!(served, serialize_efsm(&build_model(&fts, &cfg).unwrap()));
}

#[tokio::test]
async fn zoom_counts_match_the_state_segments() {
    let api = Api::new();
    api.demo("takeoff").await;
    api.put("/api/configs/takeoff", sign_config(), None).await;
    let id = api.abstract_model("takeoff", &["takeoff"]).await;
    let z = api.get(&format!("/api/models/{id}/state/s0/zoom")).await.json();
    let paths = z["paths"].as_array().unwrap();
    assert!(!paths.is_empty());
    for p in paths {
        let n = p["nodes"].as_array().unwrap().len();
        assert_eq!(p["edges"].as_array().unwrap().len(), n.saturating_sub(1));
    }
    let r = api.get(&format!("/api/models/{id}/state/s7/zoom")).await;
    assert_eq!(r.json()["code"], "UNKNOWN_STATE");

    std::fs::remove_file(api.root.join("traces/takeoff.trc")).unwrap();
    let r = api.get(&format!("/api/models/{id}/state/s0/zoom")).await;
    assert_eq!(r.json()["code"], "ZOOM_MISSING_TRACE");
}

#[tokio::test]
async fn buggy_diff_through_the_api() {
    let api = Api::new();
    api.demo("takeoff_with_gear").await;
    api.demo("buggy_takeoff").await;
    api.put("/api/configs/gear", gear_config(), None).await;
    let good = api.abstract_model("gear", &["takeoff_with_gear"]).await;
    let bad = api.abstract_model("gear", &["buggy_takeoff"]).await;
    let d = api.get(&format!("/api/diff?a={good}&b={bad}")).await.json();
    let only_b = d["transitions_only_in_b"].as_array().unwrap();
    assert_eq!(only_b.len(), 1);
    assert_eq!(only_b[0]["label"], "retractGear");
    let text = api.get(&format!("/api/diff?a={good}&b={bad}&format=text")).await.text;
    assert!(text.contains("transitions only in b: 1"));

    api.put("/api/configs/takeoff", sign_config(), None).await;
    let other = api.abstract_model("takeoff", &["takeoff_with_gear"]).await;
    let r = api.get(&format!("/api/diff?a={good}&b={other}")).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("DIFF_CONFIG_MISMATCH")));
}

#[tokio::test]
async fn config_versions_refuse_stale_writes() {
    let api = Api::new();
    let first = api.put("/api/configs/takeoff", sign_config(), None).await;
    let v1 = first.etag.unwrap();
    assert_eq!(api.get("/api/configs/takeoff").await.etag.as_deref(), Some(v1.as_str()));

    let mut edited = sign_config();
    edited["functions"] = json!(["takeoff"]);
    let second = api.put("/api/configs/takeoff", edited.clone(), Some(&v1)).await;
    assert_eq!(second.status, StatusCode::OK);
    let stale = api.put("/api/configs/takeoff", sign_config(), Some(&v1)).await;
    assert_eq!(stale.status, StatusCode::PRECONDITION_FAILED);
    assert_eq!(stale.json()["code"], "VERSION_CONFLICT");
    // without a token the last writer wins
    assert_eq!(api.put("/api/configs/takeoff", sign_config(), None).await.status, StatusCode::OK);
    assert_eq!(api.get("/api/configs").await.json(), json!(["takeoff"]));
}

#[tokio::test]
async fn bad_configs_are_rejected() {
    let api = Api::new();
    let r = api.put("/api/configs/x", json!({ "name": "x", "fields": [], "functions": [], "constraints": ["cmp(a"] }), None).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::BAD_REQUEST, Some("CONFIG_PARSE")));
    api.demo("takeoff").await;
    let mut cfg = sign_config();
    cfg["functions"] = json!(["land"]);
    let r = api.put("/api/configs/takeoff", cfg, None).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("CONFIG_INVALID")));
    assert_eq!(api.get("/api/configs/takeoff").await.status, StatusCode::NOT_FOUND);
}

async fn wait_for_job(api: &Api, job: &str) -> Value {
    for _ in 0..200 {
        let j = api.get(&format!("/api/jobs/{job}")).await.json();
        if j["status"] != "running" {
            return j;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("job {job} never finished");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mining_runs_as_a_job() {
    let api = Api::new();
    api.demo("takeoff").await;
    api.put("/api/configs/takeoff", sign_config(), None).await;
    let r = api
        .post("/api/mine", json!({ "config": "takeoff", "traces": ["takeoff"], "strategy": "ktails", "k": 2, "careful_det": true }))
        .await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text);
    let job = r.json()["job"].as_str().unwrap().to_string();
    let done = wait_for_job(&api, &job).await;
    assert_eq!(done["status"], "done");
    assert_eq!(done["outcome"], "ok");
    let model = api.get(&format!("/api/models/{}", done["model"].as_str().unwrap())).await.json();
    assert!(model["states"].as_array().unwrap().len() > 2);
    assert_eq!(model["meta"]["strategy"], "ktails");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn budget_failures_are_job_outcomes() {
    let api = Api::new();
    api.demo("full_flight").await;
    api.put("/api/configs/takeoff", sign_config(), None).await;
    let r = api
        .post(
            "/api/mine",
            json!({ "config": "takeoff", "traces": ["full_flight"], "strategy": "redblue", "memory_budget": 16 }),
        )
        .await;
    let done = wait_for_job(&api, r.json()["job"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done");
    assert_eq!(done["outcome"], "oom");
    assert!(done.get("model").is_none());

    let r = api.post("/api/mine", json!({ "config": "takeoff", "traces": ["full_flight"], "strategy": "exhaustive" })).await;
    assert_eq!(r.json()["code"], "UNKNOWN_STRATEGY");
    let r = api.post("/api/mine", json!({ "config": "takeoff", "traces": ["nope"], "strategy": "ktails" })).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn restart_reproduces_every_get() {
    let mut api = Api::new();
    api.demo("takeoff").await;
    api.put("/api/configs/takeoff", sign_config(), None).await;
    let id = api.abstract_model("takeoff", &["takeoff"]).await;
    let uris = [
        "/api/symbols".to_string(),
        "/api/traces".into(),
        "/api/configs/takeoff".into(),
        format!("/api/models/{id}"),
        format!("/api/models/{id}/dot"),
        format!("/api/models/{id}/state/s1/zoom"),
    ];
    let mut before = Vec::new();
    for u in &uris {
        before.push(api.get(u).await.text);
    }
    api.restart();
    for (u, b) in uris.iter().zip(before) {
        assert_eq!(api.get(u).await.text, b, "{u}");
    }
    // content-addressed ids: rebuilding gives the same id
    assert_eq!(api.abstract_model("takeoff", &["takeoff"]).await, id);
}

#[tokio::test]
async fn orphaned_jobs_fail_on_restart() {
    let mut api = Api::new();
    std::fs::write(
        api.root.join("jobs/j4.json"),
        r#"{"id":"j4","status":"running","config":"c","traces":[],"params":{"strategy":"ktails"}}"#,
    )
    .unwrap();
    api.restart();
    let j = api.get("/api/jobs/j4").await.json();
    assert_eq!(j["status"], "failed");
    assert_eq!(j["error"]["code"], "JOB_INTERRUPTED");
}

#[tokio::test]
async fn unknown_things_are_404_with_a_code() {
    let api = Api::new();
    for uri in ["/api/models/abc", "/api/jobs/j1", "/api/configs/none", "/api/nothing"] {
        let r = api.get(uri).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(r.json()["code"], "NOT_FOUND");
    }
    let r = api.post("/api/abstract", json!({ "config": 3 })).await;
    assert_eq!(r.json()["code"], "BAD_REQUEST");
}

#[tokio::test]
async fn busy_port_is_serve_bind() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let err = tracelens_server::bind(taken.local_addr().unwrap()).await.unwrap_err();
    assert_eq!(err.code, "SERVE_BIND");
}

#[tokio::test]
async fn concurrent_writes_leave_a_consistent_workspace() {
    let api = Arc::new(Api::new());
    let mut handles = Vec::new();
    for i in 0..8 {
        let api = api.clone();
        handles.push(tokio::spawn(async move {
            let mut cfg = sign_config();
            cfg["functions"] = json!(if i % 2 == 0 { vec!["takeoff"] } else { vec!["accelerate"] });
            api.put("/api/configs/shared", cfg, None).await.status
        }));
    }
    for h in handles {
        assert!(h.await.unwrap().is_success());
    }
    let r = api.get("/api/configs/shared").await;
    parse_config(&r.text).unwrap();
}
