//! HTTP/JSON facade over the dose-optimization engine.
//!
//! Trials are event-sourced through [`doseopt::session::FileStore`]: each write appends
//! to the trial's log under a per-trial lock and refreshes an in-memory snapshot that
//! reads are served from. Every route lives under `/v1`.

mod error;
mod jobs;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use doseopt::conduct::{DesignVariant, FinalSelection, TrialDesign};
use doseopt::decision::decision_table;
use doseopt::estimand::{compare_strategies, PatientRecord, StrategyComparison, StrategyMap};
use doseopt::model::{DesignConfig, UtilitySpec};
use doseopt::posterior::PosteriorSummary;
use doseopt::sensitivity::{tipping_scan, TippingOptions, TippingReport};
use doseopt::session::{CohortOutcome, FileStore, LoggedEvent, Recommendation, TrialSession};
use doseopt::simulator::operating_characteristics;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ApiResult};
pub use jobs::{JobStatus, SimulationJob, SimulationRequest};

/// Runtime settings of the service.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
    /// Upper bound on simulation worker threads per job.
    pub max_parallelism: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("./data"),
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            max_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

pub struct AppState {
    store: FileStore,
    jobs: jobs::JobStore,
    max_parallelism: usize,
    write_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    snapshots: RwLock<HashMap<String, Arc<TrialSession>>>,
}

impl AppState {
    pub fn open(config: &ServiceConfig) -> doseopt::Result<Arc<Self>> {
        let store = FileStore::open(&config.data_dir)?;
        let jobs = jobs::JobStore::open(store.artifact_dir("simulations")?)?;
        Ok(Arc::new(AppState {
            store,
            jobs,
            max_parallelism: config.max_parallelism.max(1),
            write_locks: Mutex::new(HashMap::new()),
            snapshots: RwLock::new(HashMap::new()),
        }))
    }

    fn lock_for(&self, trial_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.write_locks
            .lock()
            .expect("lock table poisoned")
            .entry(trial_id.to_string())
            .or_default()
            .clone()
    }

    fn remember(&self, session: TrialSession) -> Arc<TrialSession> {
        let session = Arc::new(session);
        self.snapshots
            .write()
            .expect("snapshot table poisoned")
            .insert(session.trial_id.clone(), session.clone());
        session
    }

    /// Latest committed state of a trial, replayed from its log on first access.
    async fn snapshot(&self, trial_id: &str) -> ApiResult<Arc<TrialSession>> {
        if let Some(s) = self.snapshots.read().expect("snapshot table poisoned").get(trial_id) {
            return Ok(s.clone());
        }
        let lock = self.lock_for(trial_id);
        let _guard = lock.lock().await;
        Ok(self.remember(self.store.load(trial_id)?))
    }
}

/// Builds the `/v1` router.
pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/trials", post(create_trial).get(list_trials))
        .route("/v1/trials/:id", get(get_trial))
        .route("/v1/trials/:id/cohorts", post(post_cohort))
        .route("/v1/trials/:id/recommendation", get(get_recommendation))
        .route("/v1/trials/:id/whatif", post(post_whatif))
        .route("/v1/trials/:id/obd", get(get_obd))
        .route("/v1/trials/:id/audit", get(get_audit))
        .route("/v1/trials/:id/map", post(post_map))
        .route("/v1/trials/:id/notes", post(post_note))
        .route("/v1/trials/:id/sensitivity/tipping", post(post_tipping))
        .route("/v1/simulations", post(post_simulation))
        .route("/v1/simulations/:id", get(get_simulation))
        .route("/v1/tables/decision", get(get_decision_table).post(post_decision_table))
        .with_state(state)
}

/// Binds `config.addr` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::open(&config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    eprintln!(
        "listening on http://{} (data dir {})",
        listener.local_addr()?,
        config.data_dir.display()
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

/// Like [`parse`], but an empty body means the type's default.
fn parse_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

#[derive(Debug, Deserialize)]
struct CreateTrial {
    #[serde(flatten)]
    design: TrialDesign,
    #[serde(default)]
    variant: DesignVariant,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Created {
    trial_id: String,
    session: Arc<TrialSession>,
}

async fn create_trial(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateTrial = parse(&body)?;
    req.design.validate()?;
    let session = app.remember(app.store.create(req.design, req.variant, req.seed)?);
    Ok((
        StatusCode::CREATED,
        Json(Created {
            trial_id: session.trial_id.clone(),
            session,
        }),
    )
        .into_response())
}

async fn list_trials(State(app): State<Arc<AppState>>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(app.store.list()?))
}

async fn get_trial(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Arc<TrialSession>>> {
    Ok(Json(app.snapshot(&id).await?))
}

/// A cohort body is either a bare array of records or `{"records": [...]}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CohortBody {
    Bare(Vec<PatientRecord>),
    Wrapped { records: Vec<PatientRecord> },
}

async fn post_cohort(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<CohortOutcome>> {
    let records = match parse::<CohortBody>(&body)? {
        CohortBody::Bare(r) | CohortBody::Wrapped { records: r } => r,
    };
    let lock = app.lock_for(&id);
    let _guard = lock.lock().await;
    let (session, outcome) = app.store.submit_cohort(&id, records)?;
    app.remember(session);
    Ok(Json(outcome))
}

async fn get_recommendation(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Recommendation>> {
    Ok(Json(app.snapshot(&id).await?.recommendation()?))
}

#[derive(Debug, Default, Deserialize)]
struct WhatIf {
    #[serde(default)]
    maps: Vec<StrategyMap>,
    #[serde(default)]
    map: Option<StrategyMap>,
    #[serde(default)]
    spec: Option<UtilitySpec>,
}

/// Compares the trial's current map with alternatives; nothing is recorded.
async fn post_whatif(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<StrategyComparison>> {
    let req: WhatIf = parse_or_default(&body)?;
    let session = app.snapshot(&id).await?;
    let design = &session.design;
    let mut maps = vec![design.strategy_map.clone()];
    maps.extend(req.map);
    maps.extend(req.maps);
    let spec = req.spec.as_ref().unwrap_or(&design.spec);
    Ok(Json(compare_strategies(
        &session.state.records,
        &maps,
        spec,
        &design.config,
        design.num_doses(),
    )?))
}

#[derive(Debug, Serialize)]
struct ObdResponse {
    #[serde(flatten)]
    selection: FinalSelection,
    summaries: Vec<PosteriorSummary>,
}

async fn get_obd(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ObdResponse>> {
    let session = app.snapshot(&id).await?;
    Ok(Json(ObdResponse {
        selection: session.selection()?,
        summaries: session.state.summaries(&session.design)?,
    }))
}

async fn get_audit(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Vec<LoggedEvent>>> {
    let lock = app.lock_for(&id);
    let _guard = lock.lock().await;
    Ok(Json(app.store.events(&id)?))
}

async fn post_map(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Arc<TrialSession>>> {
    let map: StrategyMap = parse(&body)?;
    let lock = app.lock_for(&id);
    let _guard = lock.lock().await;
    let session = app.store.amend_map(&id, map)?;
    Ok(Json(app.remember(session)))
}

#[derive(Debug, Deserialize)]
struct NoteBody {
    text: String,
}

async fn post_note(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Arc<TrialSession>>> {
    let note: NoteBody = parse(&body)?;
    let lock = app.lock_for(&id);
    let _guard = lock.lock().await;
    let session = app.store.note(&id, note.text)?;
    Ok(Json(app.remember(session)))
}

#[derive(Debug, Default, Deserialize)]
struct TippingBody {
    #[serde(flatten)]
    options: TippingOptions,
    /// Analyse under this map instead of the trial's current one.
    #[serde(default)]
    map: Option<StrategyMap>,
}

async fn post_tipping(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<TippingReport>> {
    let req: TippingBody = parse_or_default(&body)?;
    let session = app.snapshot(&id).await?;
    let d = &session.design;
    let map = req.map.as_ref().unwrap_or(&d.strategy_map);
    let report = tipping_scan(&session.state.records, map, &d.spec, &d.config, d.num_doses(), req.options)?;
    Ok(Json(report))
}

#[derive(Debug, Serialize)]
struct Submitted {
    job_id: String,
    status: JobStatus,
}

async fn post_simulation(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: SimulationRequest = parse(&body)?;
    let design = req.design();
    design.validate()?;
    req.scenario.validate()?;
    if req.reps == 0 {
        return Err(ApiError::bad_request("reps must be at least 1"));
    }
    let parallelism = req.parallelism.unwrap_or(app.max_parallelism).clamp(1, app.max_parallelism);
    let mut job = SimulationJob {
        job_id: uuid::Uuid::new_v4().to_string(),
        status: JobStatus::Running,
        variant: req.variant,
        reps: req.reps,
        seed: req.seed,
        parallelism,
        result: None,
        error: None,
    };
    app.jobs.save(&job).map_err(|e| ApiError::internal(e.to_string()))?;
    let submitted = Submitted {
        job_id: job.job_id.clone(),
        status: job.status,
    };
    let worker = app.clone();
    tokio::task::spawn_blocking(move || {
        match operating_characteristics(&req.scenario, &design, req.variant, req.reps, req.seed, parallelism) {
            Ok(oc) => {
                job.status = JobStatus::Done;
                job.result = Some(oc);
            }
            Err(e) => {
                job.status = JobStatus::Failed;
                job.error = Some(e.to_string());
            }
        }
        if let Err(e) = worker.jobs.save(&job) {
            eprintln!("could not persist simulation {}: {e}", job.job_id);
        }
    });
    Ok((StatusCode::ACCEPTED, Json(submitted)).into_response())
}

async fn get_simulation(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SimulationJob>> {
    Ok(Json(app.jobs.get(&id)?))
}

#[derive(Debug, Deserialize)]
struct TableQuery {
    n: u32,
    #[serde(default)]
    format: Option<String>,
}

#[derive(Debug, Deserialize)]
struct TableBody {
    #[serde(default)]
    config: Option<DesignConfig>,
    #[serde(default)]
    spec: Option<UtilitySpec>,
    n: u32,
    #[serde(default)]
    format: Option<String>,
}

fn render_table(config: &DesignConfig, spec: &UtilitySpec, n: u32, format: Option<&str>) -> ApiResult<Response> {
    let table = decision_table(config, spec, n)?;
    match format.unwrap_or("json") {
        "json" => Ok(([(header::CONTENT_TYPE, "application/json")], table.to_json()).into_response()),
        "csv" => Ok(([(header::CONTENT_TYPE, "text/csv")], table.to_csv()).into_response()),
        other => Err(ApiError::bad_request(format!("unknown format `{other}`; use json or csv"))),
    }
}

/// Decision table for the case-study design.
async fn get_decision_table(Query(q): Query<TableQuery>) -> ApiResult<Response> {
    let design = TrialDesign::case_study();
    render_table(&design.config, &design.spec, q.n, q.format.as_deref())
}

/// Decision table for a caller-supplied design.
async fn post_decision_table(body: Bytes) -> ApiResult<Response> {
    let req: TableBody = parse(&body)?;
    let design = TrialDesign::case_study();
    let config = req.config.unwrap_or(design.config);
    let spec = req.spec.unwrap_or(design.spec);
    render_table(&config, &spec, req.n, req.format.as_deref())
}
