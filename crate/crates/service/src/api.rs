//! HTTP API. Every body is JSON under the versioned media type; errors are
//! `{"error": {"code", "message", ...}}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use fairplai_core::config::TrainingConfig;
use fairplai_core::dataset::SchemaFile;
use fairplai_core::frontier::{pareto_filter, Frontier, GridSpec, ParetoAxis};
use fairplai_core::policy::{
    audit_contract, construct_tuple, filter_feasible, issue_contract, render_tuple, select_model, CandidateSet,
    IntentLexicon, PolicyError, PolicyTuple, PromptParser, Provenance, TupleDefaults,
};
use fairplai_core::store::{Store, StoreError};

use crate::jobs::{spawn_job, JobRegistry, JobSpec};

pub const MEDIA_TYPE: &str = "application/vnd.fairplai.v1+json";

/// Largest accepted request body (dataset uploads).
const BODY_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub jobs: Arc<JobRegistry>,
    pub lexicon: Arc<IntentLexicon>,
    pub config: TrainingConfig,
    pub defaults: TupleDefaults,
    permits: Arc<Semaphore>,
}

impl AppState {
    /// `max_jobs` of zero means one job per logical core.
    pub fn new(store: Store, config: TrainingConfig, max_jobs: usize) -> Self {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        let limit = if max_jobs == 0 { cores } else { max_jobs };
        Self {
            store: Arc::new(store),
            jobs: Arc::new(JobRegistry::default()),
            lexicon: Arc::new(IntentLexicon::default()),
            config,
            defaults: TupleDefaults::default(),
            permits: Arc::new(Semaphore::new(limit)),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/datasets", post(post_dataset))
        .route("/v1/datasets/{id}", get(get_dataset))
        .route("/v1/frontiers", post(post_frontier))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/frontiers/{id}", get(get_frontier))
        .route("/v1/frontiers/{id}/policy", post(post_policy))
        .route("/v1/frontiers/{id}/selection", post(post_selection))
        .route("/v1/contracts/{id}", get(get_contract))
        .route("/v1/contracts/{id}/audit", get(get_audit))
        .route("/v1/lexicon", get(get_lexicon))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

fn respond<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, HeaderValue::from_static(MEDIA_TYPE))], bytes).into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), extra: Value::Null }
    }

    fn internal(message: String) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn with(mut self, extra: Value) -> Self {
        self.extra = extra;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let (Value::Object(e), Value::Object(x)) = (&mut error, self.extra) {
            e.extend(x);
        }
        let body = serde_json::to_vec(&json!({ "error": error })).unwrap_or_default();
        (self.status, [(header::CONTENT_TYPE, HeaderValue::from_static(MEDIA_TYPE))], body).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { kind, .. } => {
                let code = match kind {
                    "dataset" => "unknown_dataset",
                    "frontier" => "unknown_frontier",
                    "contract" => "unknown_contract",
                    _ => "not_found",
                };
                ApiError::new(StatusCode::NOT_FOUND, code, e.to_string())
            }
            StoreError::InvalidId(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::DigestMismatch { .. } => ApiError::new(StatusCode::CONFLICT, "digest_mismatch", e.to_string()),
            StoreError::AlreadyExists(_) => ApiError::new(StatusCode::CONFLICT, "already_exists", e.to_string()),
            StoreError::Dataset(_) | StoreError::Json(_) => ApiError::bad_request(e.to_string()),
            StoreError::Io(_) | StoreError::Frontier(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<PolicyError> for ApiError {
    fn from(e: PolicyError) -> Self {
        let msg = e.to_string();
        match e {
            PolicyError::UnrecognizedIntent { span, start, end } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unrecognized_intent", msg)
                    .with(json!({ "span": span, "start": start, "end": end }))
            }
            PolicyError::ConflictingDescriptors { category, first, second } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "conflicting_descriptors", msg)
                    .with(json!({ "category": category, "first": first, "second": second }))
            }
            PolicyError::EmptyPrompt => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_prompt", msg),
            PolicyError::MissingCriterion => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "missing_criterion", msg),
            PolicyError::DeltaOutOfRange(_)
            | PolicyError::InvalidBand(_)
            | PolicyError::InvalidThreshold(_)
            | PolicyError::EmptyAttributeList
            | PolicyError::InvalidPriority(_)
            | PolicyError::AttributeMismatch { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_tuple", msg),
            PolicyError::ChoiceNotFeasible(_) | PolicyError::UnknownPoint(_) => {
                ApiError::new(StatusCode::CONFLICT, "infeasible_choice", msg)
            }
            PolicyError::StaleFrontier { .. } => ApiError::new(StatusCode::CONFLICT, "stale_frontier", msg),
            PolicyError::EmptyCandidates { .. } => ApiError::new(StatusCode::CONFLICT, "no_candidates", msg),
            PolicyError::MissingArtifact(_) => ApiError::new(StatusCode::NOT_FOUND, "missing_artifact", msg),
            PolicyError::Store(s) => s.into(),
            PolicyError::InvalidLexicon(_) | PolicyError::Json(_) => ApiError::internal(msg),
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

/// Run blocking store or model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn post_dataset(State(s): State<AppState>, mut form: Multipart) -> Result<Response, ApiError> {
    let (mut csv, mut schema) = (None, None);
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        match name.as_str() {
            "csv" => csv = Some(bytes),
            "schema" => schema = Some(bytes),
            other => return Err(ApiError::bad_request(format!("unexpected part `{other}`"))),
        }
    }
    let csv = csv.ok_or_else(|| ApiError::bad_request("missing `csv` part"))?;
    let schema = schema.ok_or_else(|| ApiError::bad_request("missing `schema` part"))?;
    let schema = SchemaFile::from_json(&String::from_utf8_lossy(&schema)).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let summary = blocking(move || Ok(s.store.put_dataset(&csv, &schema)?)).await?;
    Ok(respond(StatusCode::CREATED, &summary))
}

async fn get_dataset(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let summary = blocking(move || Ok(s.store.dataset_summary(&id)?)).await?;
    Ok(respond(StatusCode::OK, &summary))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrontierRequest {
    dataset: String,
    #[serde(default)]
    grid: Option<GridSpec>,
    #[serde(default)]
    seed: u64,
}

async fn post_frontier(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: FrontierRequest = parse_body(&body)?;
    let grid = req.grid.unwrap_or_default();
    grid.validate().map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_grid", e.to_string()))?;
    let store = s.store.clone();
    let id = req.dataset.clone();
    let dataset = blocking(move || Ok(store.get_dataset(&id)?)).await?;
    let job = s.jobs.create(grid.n_cells());
    let spec = JobSpec { dataset, grid, config: s.config.clone(), seed: req.seed };
    spawn_job(s.store.clone(), s.jobs.clone(), s.permits.clone(), job.id.clone(), spec);
    Ok(respond(StatusCode::ACCEPTED, &job))
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = s.jobs.get(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("job `{id}` not found")))?;
    Ok(respond(StatusCode::OK, &job))
}

async fn load_frontier(s: &AppState, id: &str) -> Result<Frontier, ApiError> {
    let store = s.store.clone();
    let id = id.to_string();
    blocking(move || Ok(store.get_frontier(&id)?)).await
}

#[derive(Debug, Deserialize)]
struct FrontierQuery {
    pareto: Option<String>,
}

async fn get_frontier(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<FrontierQuery>) -> Result<Response, ApiError> {
    let mut f = load_frontier(&s, &id).await?;
    if let Some(axes) = q.pareto {
        let axes: Vec<ParetoAxis> = axes
            .split(',')
            .map(|a| a.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e: fairplai_core::frontier::FrontierError| ApiError::bad_request(e.to_string()))?;
        f.points = pareto_filter(&f, &axes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    }
    Ok(respond(StatusCode::OK, &f))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyRequest {
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    tuple: Option<PolicyTuple>,
    /// Defaults to the frontier's protected attributes.
    #[serde(default)]
    attributes: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
struct PolicyResponse {
    frontier_id: String,
    tuple: PolicyTuple,
    provenance: std::collections::BTreeMap<String, Provenance>,
    explanation: String,
    unmatched: Vec<String>,
    #[serde(flatten)]
    candidates: CandidateSet,
}

async fn post_policy(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: PolicyRequest = parse_body(&body)?;
    let f = load_frontier(&s, &id).await?;
    let (tuple, provenance, unmatched) = match (req.prompt, req.tuple) {
        (Some(prompt), None) => {
            let parsed = PromptParser::new(&s.lexicon).parse(&prompt)?;
            let attributes = req.attributes.unwrap_or_else(|| f.protected.clone());
            let built = construct_tuple(&parsed, &s.defaults, &attributes)?;
            (built.tuple, built.provenance, parsed.unmatched)
        }
        (None, Some(tuple)) => {
            tuple.validate()?;
            let given = ["criterion", "delta", "epsilon_band", "attributes", "performance", "priority"]
                .into_iter()
                .map(|k| (k.to_string(), Provenance::Given))
                .collect();
            (tuple, given, Vec::new())
        }
        _ => return Err(ApiError::bad_request("give exactly one of `prompt` and `tuple`")),
    };
    let candidates = filter_feasible(&f, &tuple, &s.lexicon)?;
    let explanation = render_tuple(&tuple, &s.lexicon);
    Ok(respond(StatusCode::OK, &PolicyResponse { frontier_id: f.digest, tuple, provenance, explanation, unmatched, candidates }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionRequest {
    tuple: PolicyTuple,
    chosen: String,
    #[serde(default)]
    rationale: Option<String>,
}

async fn post_selection(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: SelectionRequest = parse_body(&body)?;
    let f = load_frontier(&s, &id).await?;
    let contract = blocking(move || {
        // recomputed here: the client's view of feasibility is not trusted
        let cands = filter_feasible(&f, &req.tuple, &s.lexicon)?;
        if !cands.ids().contains(&req.chosen) {
            return Err(PolicyError::ChoiceNotFeasible(req.chosen.clone()).into());
        }
        let rationale = match req.rationale {
            Some(r) if !r.trim().is_empty() => r,
            _ => {
                let sel = select_model(&cands, &f, &req.tuple)?;
                if sel.chosen == req.chosen {
                    sel.rationale
                } else {
                    format!("Stakeholder chose {} among {} feasible candidate(s); the policy would choose {}.", req.chosen, cands.candidates.len(), sel.chosen)
                }
            }
        };
        Ok(issue_contract(&s.store, &req.tuple, &f, &cands, Some(&req.chosen), &rationale, &s.lexicon.version)?)
    })
    .await?;
    Ok(respond(StatusCode::CREATED, &json!({ "contract_id": contract.digest, "contract": contract })))
}

async fn get_contract(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let c = blocking(move || Ok(s.store.get_contract(&id)?)).await?;
    Ok(respond(StatusCode::OK, &c))
}

async fn get_audit(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let report = blocking(move || Ok(audit_contract(&s.store, &id)?)).await?;
    Ok(respond(StatusCode::OK, &report))
}

async fn get_lexicon(State(s): State<AppState>) -> Response {
    respond(StatusCode::OK, &*s.lexicon)
}
