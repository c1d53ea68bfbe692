use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use tracelens_core::abstractor::{build_model, zoom};
use tracelens_core::demo::{run_scenario, symbol_manifest, FlightScenario, ScenarioName};
use tracelens_core::io::{export_dot, parse_config, parse_efsm, parse_model, serialize_efsm, serialize_fsm, to_json_text, DotOptions};
use tracelens_core::metrics::{diff_models, exam_report};
use tracelens_core::miners::{mine, LabelTrace, MinerParams, Outcome};
use tracelens_core::model::validate_config;
use tracelens_core::symbols::manifest_to_string;
use tracelens_core::trace::filter_trace;
use tracelens_core::{Error, MonitorConfig, StateId};

use crate::error::ApiError;
use crate::workspace::{check_name, content_id, JobError, JobRecord, JobStatus, TraceSummary, Workspace};

const INDEX: &str = include_str!("index.html");

pub struct AppState {
    workspace: Workspace,
    /// Serializes every mutation of the workspace.
    writes: Mutex<()>,
    miners: Arc<Semaphore>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(workspace: Workspace) -> Result<Arc<Self>, ApiError> {
        workspace.fail_orphaned_jobs()?;
        let next = workspace
            .job_ids()?
            .iter()
            .filter_map(|id| id.strip_prefix('j')?.parse::<u64>().ok())
            .max()
            .map_or(1, |n| n + 1);
        let workers = std::thread::available_parallelism().map_or(2, |n| n.get());
        Ok(Arc::new(AppState {
            workspace,
            writes: Mutex::new(()),
            miners: Arc::new(Semaphore::new(workers)),
            next_job: AtomicU64::new(next),
        }))
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    fn write_lock(&self) -> std::sync::MutexGuard<'_, ()> {
        self.writes.lock().unwrap_or_else(|p| p.into_inner())
    }
}

type Shared = Arc<AppState>;
type ApiResult<T = Response> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/symbols", get(get_symbols))
        .route("/api/configs", get(list_configs))
        .route("/api/configs/{name}", get(get_config).put(put_config))
        .route("/api/traces", get(list_traces))
        .route("/api/traces:demo", post(run_demo))
        .route("/api/abstract", post(post_abstract))
        .route("/api/mine", post(post_mine))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/models", get(list_models))
        .route("/api/models/{id}", get(get_model))
        .route("/api/models/{id}/dot", get(get_dot))
        .route("/api/models/{id}/state/{sid}/zoom", get(get_zoom))
        .route("/api/models/{id}/exam", get(get_exam))
        .route("/api/diff", get(get_diff))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

fn json_text(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    json_text(status, to_json_text(value))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request("BAD_REQUEST", format!("request body: {e}")))
}

/// Runs CPU-bound pipeline work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn index() -> Html<&'static str> {
    Html(INDEX)
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

async fn get_symbols(State(st): State<Shared>, Query(q): Query<FormatQuery>) -> ApiResult {
    let table = st.workspace.symbols()?;
    match q.format.as_deref() {
        None | Some("json") => Ok(json(StatusCode::OK, &table)),
        Some("manifest") => Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], manifest_to_string(&table)).into_response()),
        Some(other) => Err(ApiError::bad_request("BAD_REQUEST", format!("unknown format `{other}`"))),
    }
}

async fn list_configs(State(st): State<Shared>) -> ApiResult {
    Ok(json(StatusCode::OK, &st.workspace.config_names()?))
}

fn etag(text: &str) -> String {
    format!("\"{}\"", content_id(text))
}

async fn get_config(State(st): State<Shared>, Path(name): Path<String>) -> ApiResult {
    let text = st
        .workspace
        .config_text(&name)?
        .ok_or_else(|| ApiError::not_found(format!("no config `{name}`")))?;
    let tag = etag(&text);
    let mut resp = json_text(StatusCode::OK, text);
    resp.headers_mut().insert(header::ETAG, tag.parse().expect("hex is a valid header"));
    Ok(resp)
}

/// Last writer wins, unless the client sends `If-Match` with the version it
/// edited, in which case a stale version is refused.
async fn put_config(State(st): State<Shared>, Path(name): Path<String>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    check_name("config", &name)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| ApiError::bad_request("CONFIG_PARSE", "config is not UTF-8"))?;
    let mut config = parse_config(text)?;
    config.name = name.clone();
    let symbols = st.workspace.symbols()?;
    if st.workspace.has_symbols() {
        let findings = validate_config(&config, &symbols);
        if !findings.is_empty() {
            let list: Vec<String> = findings.iter().map(|f| format!("{}: {}", f.code, f.message)).collect();
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "CONFIG_INVALID", list.join("; ")));
        }
    }
    let canonical = tracelens_core::io::config_to_string(&config);
    let _guard = st.write_lock();
    let current = st.workspace.config_text(&name)?;
    if let Some(want) = headers.get(header::IF_MATCH) {
        let want = want.to_str().unwrap_or("");
        let ok = match &current {
            Some(cur) => want == "*" || want == etag(cur),
            None => false,
        };
        if !ok {
            return Err(ApiError::new(
                StatusCode::PRECONDITION_FAILED,
                "VERSION_CONFLICT",
                format!("config `{name}` changed since version {want}"),
            ));
        }
    }
    st.workspace.save_config(&name, &canonical)?;
    let status = if current.is_some() { StatusCode::OK } else { StatusCode::CREATED };
    let tag = etag(&canonical);
    let mut resp = json_text(status, canonical);
    resp.headers_mut().insert(header::ETAG, tag.parse().expect("hex is a valid header"));
    Ok(resp)
}

async fn list_traces(State(st): State<Shared>) -> ApiResult {
    let out = blocking(move || {
        st.workspace
            .trace_ids()?
            .into_iter()
            .map(|id| {
                let t = st.workspace.load_trace(&id)?;
                Ok(TraceSummary { id, events: t.events.len(), fields: t.monitored_fields })
            })
            .collect::<ApiResult<Vec<_>>>()
    })
    .await?;
    Ok(json(StatusCode::OK, &out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoRequest {
    scenario: String,
    #[serde(default)]
    params: BTreeMap<String, serde_json::Value>,
    id: Option<String>,
}

async fn run_demo(State(st): State<Shared>, bytes: Bytes) -> ApiResult {
    let req: DemoRequest = body(&bytes)?;
    let name: ScenarioName = req.scenario.parse()?;
    let mut scenario = FlightScenario::new(name);
    for (k, v) in &req.params {
        let v = match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        scenario.params.set(k, &v)?;
    }
    if let Some(id) = &req.id {
        check_name("trace", id)?;
    }
    let summary = blocking(move || {
        let mut trace = run_scenario(&scenario)?;
        if let Some(id) = req.id {
            trace.id = id;
        }
        let _guard = st.write_lock();
        st.workspace.save_trace(&trace)?;
        if !st.workspace.has_symbols() {
            st.workspace.save_symbols(&symbol_manifest())?;
        }
        Ok(TraceSummary { id: trace.id, events: trace.events.len(), fields: trace.monitored_fields })
    })
    .await?;
    Ok(json(StatusCode::CREATED, &summary))
}

fn load_config(ws: &Workspace, name: &str) -> ApiResult<MonitorConfig> {
    let text = ws
        .config_text(name)?
        .ok_or_else(|| ApiError::not_found(format!("no config `{name}`")))?;
    Ok(parse_config(&text)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AbstractRequest {
    config: String,
    traces: Vec<String>,
}

#[derive(Serialize)]
struct ModelCreated {
    id: String,
    states: usize,
    transitions: usize,
}

async fn post_abstract(State(st): State<Shared>, bytes: Bytes) -> ApiResult {
    let req: AbstractRequest = body(&bytes)?;
    let created = blocking(move || {
        let config = load_config(&st.workspace, &req.config)?;
        let filtered = req
            .traces
            .iter()
            .map(|id| Ok(filter_trace(&st.workspace.load_trace(id)?, &config)?))
            .collect::<ApiResult<Vec<_>>>()?;
        let model = build_model(&filtered, &config)?;
        let _guard = st.write_lock();
        let id = st.workspace.save_model(&serialize_efsm(&model))?;
        Ok(ModelCreated { id, states: model.states.len(), transitions: model.transitions.len() })
    })
    .await?;
    Ok(json(StatusCode::CREATED, &created))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MineRequest {
    config: String,
    traces: Vec<String>,
    #[serde(flatten)]
    params: MinerParams,
}

#[derive(Serialize)]
struct JobCreated {
    job: String,
}

/// Mining can take as long as its budget allows, so it runs as a job on a
/// bounded pool and the client polls `/api/jobs/{id}`.
async fn post_mine(State(st): State<Shared>, bytes: Bytes) -> ApiResult {
    let req: MineRequest = body(&bytes)?;
    tracelens_core::miners::builtin_miners().get(&req.params.strategy)?;
    load_config(&st.workspace, &req.config)?;
    for t in &req.traces {
        check_name("trace", t)?;
        if !st.workspace.trace_path(t).exists() {
            return Err(ApiError::not_found(format!("no trace `{t}`")));
        }
    }
    let id = format!("j{}", st.next_job.fetch_add(1, Ordering::Relaxed));
    let job = JobRecord {
        id: id.clone(),
        status: JobStatus::Running,
        config: req.config,
        traces: req.traces,
        params: req.params,
        outcome: None,
        model: None,
        error: None,
        wall_ms: None,
    };
    {
        let _guard = st.write_lock();
        st.workspace.save_job(&job)?;
    }
    let permits = st.miners.clone();
    let reply = JobCreated { job: id.clone() };
    tokio::spawn(async move {
        let Ok(_permit) = permits.acquire_owned().await else { return };
        let st2 = st.clone();
        let finished = tokio::task::spawn_blocking(move || run_job(&st2, job)).await;
        if let Err(e) = finished {
            eprintln!("mining job {id} panicked: {e}");
        }
    });
    Ok(json(StatusCode::ACCEPTED, &reply))
}

fn run_job(st: &AppState, mut job: JobRecord) {
    let started = Instant::now();
    let result = (|| -> ApiResult<Result<String, Error>> {
        let config = load_config(&st.workspace, &job.config)?;
        let traces = job
            .traces
            .iter()
            .map(|id| Ok(LabelTrace::from_filtered(&filter_trace(&st.workspace.load_trace(id)?, &config)?)))
            .collect::<ApiResult<Vec<_>>>()?;
        Ok(mine(&traces, &job.params).map(|fsm| serialize_fsm(&fsm)))
    })();
    job.wall_ms = Some(started.elapsed().as_millis() as u64);
    let _guard = st.write_lock();
    match result {
        Ok(Ok(text)) => match st.workspace.save_model(&text) {
            Ok(id) => {
                job.status = JobStatus::Done;
                job.outcome = Some(Outcome::Ok);
                job.model = Some(id);
            }
            Err(e) => fail(&mut job, &e),
        },
        Ok(Err(Error::MineTimeout { .. })) => {
            job.status = JobStatus::Done;
            job.outcome = Some(Outcome::Timeout);
        }
        Ok(Err(Error::MineOom { .. })) => {
            job.status = JobStatus::Done;
            job.outcome = Some(Outcome::Oom);
        }
        Ok(Err(e)) => fail(&mut job, &e.into()),
        Err(e) => fail(&mut job, &e),
    }
    if let Err(e) = st.workspace.save_job(&job) {
        eprintln!("cannot record job {}: {e}", job.id);
    }
}

fn fail(job: &mut JobRecord, e: &ApiError) {
    job.status = JobStatus::Failed;
    job.error = Some(JobError { code: e.code.clone(), message: e.message.clone() });
}

async fn get_job(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &st.workspace.job(&id)?))
}

async fn list_models(State(st): State<Shared>) -> ApiResult {
    Ok(json(StatusCode::OK, &st.workspace.model_ids()?))
}

async fn get_model(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    Ok(json_text(StatusCode::OK, st.workspace.model_text(&id)?))
}

#[derive(Deserialize)]
struct DotQuery {
    valuations: Option<bool>,
    highlight: Option<String>,
}

async fn get_dot(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<DotQuery>) -> ApiResult {
    let model = parse_model(&st.workspace.model_text(&id)?)?;
    let highlight = match q.highlight.as_deref() {
        None | Some("") => Default::default(),
        Some(list) => list
            .split(',')
            .map(|s| s.parse::<StateId>().map_err(|_| ApiError::bad_request("BAD_REQUEST", format!("`{s}` is not a state id"))))
            .collect::<ApiResult<_>>()?,
    };
    let options = DotOptions { show_valuations: q.valuations.unwrap_or(true), highlight };
    Ok(([(header::CONTENT_TYPE, "text/vnd.graphviz; charset=utf-8")], export_dot(&model, &options)).into_response())
}

fn efsm(st: &AppState, id: &str) -> ApiResult<tracelens_core::Efsm> {
    parse_efsm(&st.workspace.model_text(id)?).map_err(|_| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "MODEL_KIND", format!("model `{id}` is not an abstracted model"))
    })
}

fn state_id(text: &str) -> ApiResult<StateId> {
    text.parse().map_err(|_| Error::UnknownState(text.to_string()).into())
}

async fn get_zoom(State(st): State<Shared>, Path((id, sid)): Path<(String, String)>) -> ApiResult {
    let view = blocking(move || {
        let model = efsm(&st, &id)?;
        let sid = state_id(&sid)?;
        let st_ref = model.state(sid).ok_or_else(|| Error::UnknownState(sid.to_string()))?;
        let mut needed: Vec<&str> = st_ref.segments.iter().map(|s| s.trace.as_str()).collect();
        needed.sort();
        needed.dedup();
        let mut raw = Vec::new();
        for t in needed {
            match st.workspace.load_trace(t) {
                Ok(tr) => raw.push(tr),
                Err(e) if e.code == "NOT_FOUND" => return Err(Error::ZoomMissingTrace(t.to_string()).into()),
                Err(e) => return Err(e),
            }
        }
        Ok(zoom(&model, sid, &raw)?)
    })
    .await?;
    Ok(json(StatusCode::OK, &view))
}

#[derive(Deserialize)]
struct ExamQuery {
    state: String,
}

async fn get_exam(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<ExamQuery>) -> ApiResult {
    let model = parse_model(&st.workspace.model_text(&id)?)?;
    Ok(json(StatusCode::OK, &exam_report(&model, state_id(&q.state)?)?))
}

#[derive(Deserialize)]
struct DiffQuery {
    a: String,
    b: String,
    format: Option<String>,
}

async fn get_diff(State(st): State<Shared>, Query(q): Query<DiffQuery>) -> ApiResult {
    let d = diff_models(&efsm(&st, &q.a)?, &efsm(&st, &q.b)?)?;
    match q.format.as_deref() {
        None | Some("json") => Ok(json_text(StatusCode::OK, d.to_json())),
        Some("text") => Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], d.to_text()).into_response()),
        Some(other) => Err(ApiError::bad_request("BAD_REQUEST", format!("unknown format `{other}`"))),
    }
}
