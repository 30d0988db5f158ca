//! JSON-over-HTTP facade over problems, loop sessions and pose calibration.
//! Every route lives under `/v1/`.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use imagery_core::dataset::{
    commit_calibrated_pose, is_read_only, load_problem_set, DatasetError, ProblemSet,
};
use imagery_core::eval::Condition;
use imagery_core::geometry::{apply_camera_rotation, pose_to_euler};
use imagery_core::protocol::{
    parse_command, parse_turn_output_strict, CommandRequest, Memory, TargetGrid,
};
use imagery_core::render::encode_png;
use imagery_core::session::{LoopConfig, Session, SessionTranscript, TurnResult};
use imagery_core::{render, OptionLabel, Pose, RasterImage, RotationCommand, Target, TurnOutput};

pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const CALIBRATIONS_FILE: &str = "calibrations.jsonl";

#[derive(Debug, Error)]
pub enum StudioError {
    #[error("dataset {path}: {source}")]
    Dataset {
        path: PathBuf,
        #[source]
        source: DatasetError,
    },
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Serve(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudioConfig {
    pub dataset_dir: PathBuf,
    /// Where answer and calibration logs go; defaults to the dataset's
    /// parent directory.
    pub records_dir: Option<PathBuf>,
    pub bind: SocketAddr,
    /// Refuse calibration nudges and commits even if the files are writable.
    pub read_only: bool,
    /// Minimum iterations for human sessions.
    pub human_min_iterations: u32,
}

impl Default for StudioConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("data/default-set"),
            records_dir: None,
            bind: SocketAddr::from(([127, 0, 0, 1], 8787)),
            read_only: false,
            human_min_iterations: 1,
        }
    }
}

impl StudioConfig {
    fn records_dir(&self) -> PathBuf {
        self.records_dir.clone().unwrap_or_else(|| {
            self.dataset_dir
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }
}

/// A finished human session, appended to `answers.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAnswerRecord {
    pub session_id: String,
    pub problem_id: String,
    pub answer: OptionLabel,
    pub correct: bool,
    /// Executed sequences, one list per iteration.
    pub commands: Vec<Vec<CommandRequest>>,
    pub elapsed_secs: f64,
    pub timestamp_unix: u64,
}

/// A committed calibration, appended to `calibrations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub dataset: String,
    pub problem_id: String,
    pub target: Target,
    pub pose: Pose,
    pub author: Option<String>,
    pub timestamp_unix: u64,
    pub checksum: String,
}

struct SessionEntry {
    session: Session,
    human: bool,
    started: Instant,
    recorded: bool,
}

struct AppState {
    config: StudioConfig,
    set: RwLock<Arc<ProblemSet>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    next_session: AtomicU64,
    /// Uncommitted calibration poses keyed by problem and target.
    working: Mutex<HashMap<(String, Target), Pose>>,
    logs: Mutex<()>,
}

type Shared = Arc<AppState>;

pub struct Studio {
    state: Shared,
}

impl Studio {
    pub fn open(config: StudioConfig) -> Result<Self, StudioError> {
        let set = load_problem_set(&config.dataset_dir).map_err(|source| StudioError::Dataset {
            path: config.dataset_dir.clone(),
            source,
        })?;
        Ok(Self {
            state: Arc::new(AppState {
                config,
                set: RwLock::new(Arc::new(set)),
                sessions: Mutex::new(HashMap::new()),
                next_session: AtomicU64::new(1),
                working: Mutex::new(HashMap::new()),
                logs: Mutex::new(()),
            }),
        })
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/v1/health", get(health))
            .route("/v1/problems", get(list_problems))
            .route("/v1/problems/{id}/image", get(problem_image))
            .route("/v1/problems/{id}/tiles/{target}", get(problem_tile))
            .route("/v1/sessions", post(create_session))
            .route("/v1/sessions/{sid}", get(session_view))
            .route("/v1/sessions/{sid}/turns", post(post_turn))
            .route("/v1/sessions/{sid}/commands", post(post_command))
            .route("/v1/sessions/{sid}/answer", post(post_answer))
            .route("/v1/sessions/{sid}/snapshot/{target}", get(session_snapshot))
            .route("/v1/sessions/{sid}/grids/{file}", get(session_grid))
            .route("/v1/sessions/{sid}/transcript", get(session_transcript))
            .route("/v1/sessions/{sid}/bundle", get(session_bundle))
            .route("/v1/answers", get(list_answers))
            .route("/v1/calibration/{id}/{target}", get(calibration_view))
            .route("/v1/calibration/{id}/{target}/render", get(calibration_render))
            .route("/v1/calibration/{id}/{target}/nudge", post(calibration_nudge))
            .route("/v1/calibration/{id}/{target}/commit", post(calibration_commit))
            .route("/v1/calibration/{id}/{target}/revert", post(calibration_revert))
            .with_state(Arc::clone(&self.state))
    }
}

/// Loads the dataset, binds and serves until ctrl-c.
pub async fn serve(config: StudioConfig) -> Result<(), StudioError> {
    let addr = config.bind;
    let studio = Studio::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| StudioError::Bind { addr, source })?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, studio.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(config: StudioConfig) -> Result<(), StudioError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(config))
}

// ---- errors -----------------------------------------------------------------

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }

    fn unprocessable(message: impl Into<String>, category: &str) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": message.into(), "category": category }),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn png_response(img: &RasterImage, extra: &[(&'static str, String)]) -> ApiResult<Response> {
    let bytes = encode_png(img).map_err(ApiError::internal)?;
    png_bytes(bytes, extra)
}

fn png_bytes(bytes: Vec<u8>, extra: &[(&'static str, String)]) -> ApiResult<Response> {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    for (k, v) in extra {
        headers.insert(*k, HeaderValue::from_str(v).map_err(ApiError::internal)?);
    }
    Ok((headers, bytes).into_response())
}

fn parse_target(s: &str) -> ApiResult<Target> {
    match s.to_ascii_lowercase().as_str() {
        "original" => Ok(Target::Original),
        "a" => Ok(Target::A),
        "b" => Ok(Target::B),
        "c" => Ok(Target::C),
        _ => Err(ApiError::not_found(format!("target {s:?}"))),
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn append_line(state: &AppState, file: &str, value: &impl Serialize) -> ApiResult<()> {
    let _guard = state.logs.lock().expect("log lock");
    let dir = state.config.records_dir();
    std::fs::create_dir_all(&dir).map_err(ApiError::internal)?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(file))
        .map_err(ApiError::internal)?;
    let line = serde_json::to_string(value).map_err(ApiError::internal)?;
    writeln!(f, "{line}").map_err(ApiError::internal)
}

impl AppState {
    fn set(&self) -> Arc<ProblemSet> {
        Arc::clone(&self.set.read().expect("set lock"))
    }

    fn session(&self, sid: &str) -> ApiResult<Arc<Mutex<SessionEntry>>> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(sid)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {sid}")))
    }
}

// ---- problems ---------------------------------------------------------------

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct ProblemSummary {
    id: String,
    statement: String,
    image: String,
}

async fn list_problems(State(st): State<Shared>) -> Json<Vec<ProblemSummary>> {
    let set = st.set();
    Json(
        set.problems
            .iter()
            .map(|p| ProblemSummary {
                id: p.id.clone(),
                statement: p.statement.clone(),
                image: format!("/v1/problems/{}/image", p.id),
            })
            .collect(),
    )
}

async fn problem_image(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let set = st.set();
    let img = set
        .problem_image(&id)
        .ok_or_else(|| ApiError::not_found(format!("problem {id}")))?;
    png_response(img, &[])
}

async fn problem_tile(
    State(st): State<Shared>,
    Path((id, target)): Path<(String, String)>,
) -> ApiResult<Response> {
    let target = parse_target(&target)?;
    let set = st.set();
    let img = set
        .tile(&id, target)
        .ok_or_else(|| ApiError::not_found(format!("problem {id}")))?;
    png_response(&img, &[])
}

// ---- sessions ---------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct CreateSession {
    problem_id: String,
    #[serde(default)]
    condition: Option<Condition>,
    /// Human sessions use the relaxed iteration minimum and log answers.
    #[serde(default = "yes")]
    human: bool,
    #[serde(default)]
    agent: Option<String>,
    #[serde(default)]
    min_iterations: Option<u32>,
    #[serde(default)]
    max_iterations: Option<u32>,
    #[serde(default)]
    original_rotatable: Option<bool>,
}

fn yes() -> bool {
    true
}

#[derive(Serialize)]
struct GridView {
    target: Target,
    labels: Vec<String>,
    url: String,
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    problem_id: String,
    agent: String,
    human: bool,
    config: LoopConfig,
    /// Iteration number the next turn must carry.
    next_iteration: u32,
    finished: bool,
    final_answer: Option<OptionLabel>,
    /// Only revealed once the session is over.
    correct: Option<bool>,
    feedback: Vec<String>,
    last_grids: Vec<GridView>,
    system_prompt: String,
}

fn grid_views(sid: &str, session: &Session) -> Vec<GridView> {
    session
        .iterations()
        .last()
        .map(|it| {
            it.grids
                .iter()
                .map(|g| GridView {
                    target: g.target,
                    labels: g.labels.clone(),
                    url: format!("/v1/sessions/{sid}/grids/{}", g.file),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn view(sid: &str, entry: &SessionEntry) -> ApiResult<SessionView> {
    let s = &entry.session;
    let ctx = s.build_context().map_err(ApiError::internal)?;
    let t = s.transcript();
    Ok(SessionView {
        session_id: sid.to_string(),
        problem_id: t.problem_id.clone(),
        agent: t.agent.clone(),
        human: entry.human,
        config: s.config().clone(),
        next_iteration: ctx.iteration,
        finished: s.is_finished(),
        final_answer: s.final_answer(),
        correct: if s.is_finished() { t.correct } else { None },
        feedback: ctx.feedback,
        last_grids: grid_views(sid, s),
        system_prompt: ctx.system_prompt,
    })
}

async fn create_session(
    State(st): State<Shared>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let mut cfg = LoopConfig::default();
    if let Some(c) = req.condition {
        c.apply(&mut cfg);
    }
    if req.human {
        cfg.min_iterations = st.config.human_min_iterations;
    }
    if let Some(v) = req.min_iterations {
        cfg.min_iterations = v;
    }
    if let Some(v) = req.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = req.original_rotatable {
        cfg.original_rotatable = v;
    }
    let set = st.set();
    let mut session = Session::from_set(&set, &req.problem_id, cfg).map_err(|e| match e {
        imagery_core::session::SessionError::UnknownProblem(id) => {
            ApiError::not_found(format!("problem {id}"))
        }
        other => ApiError::unprocessable(other.to_string(), "config"),
    })?;
    let name = req
        .agent
        .unwrap_or_else(|| if req.human { "human" } else { "remote" }.into());
    session.set_agent_name(name);
    let sid = format!("s{:05}", st.next_session.fetch_add(1, Ordering::SeqCst));
    let entry = SessionEntry {
        session,
        human: req.human,
        started: Instant::now(),
        recorded: false,
    };
    let v = view(&sid, &entry)?;
    st.sessions
        .lock()
        .expect("sessions lock")
        .insert(sid, Arc::new(Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(v)))
}

async fn session_view(
    State(st): State<Shared>,
    Path(sid): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let entry = st.session(&sid)?;
    let guard = entry.lock().expect("session lock");
    Ok(Json(view(&sid, &guard)?))
}

#[derive(Serialize)]
struct TurnResponse {
    index: u32,
    grids: Vec<GridView>,
    errors: Vec<String>,
    notes: Vec<String>,
    finished: bool,
    final_answer: Option<OptionLabel>,
    correct: Option<bool>,
    next_iteration: u32,
}

fn stale(sid: &str, entry: &SessionEntry, got: u32) -> ApiError {
    let expected = entry.session.counter() + 1;
    ApiError {
        status: StatusCode::CONFLICT,
        body: json!({
            "error": format!("stale iteration_number {got}, expected {expected}"),
            "expected": expected,
            "context": view(sid, entry).ok(),
        }),
    }
}

/// Runs one strictly parsed turn under the iteration guard.
fn run_turn(
    st: &AppState,
    sid: &str,
    entry: &mut SessionEntry,
    raw: &str,
    turn: TurnOutput,
) -> ApiResult<TurnResult> {
    if entry.session.is_finished() {
        return Err(ApiError::new(StatusCode::CONFLICT, "session is finished"));
    }
    if turn.iteration_number != entry.session.counter() + 1 {
        return Err(stale(sid, entry, turn.iteration_number));
    }
    let started = Instant::now();
    let result = entry
        .session
        .submit_parsed(raw, turn)
        .map_err(ApiError::internal)?;
    entry.session.record_timing(started.elapsed().as_secs_f64());
    record_answer(st, sid, entry)?;
    Ok(result)
}

fn record_answer(st: &AppState, sid: &str, entry: &mut SessionEntry) -> ApiResult<()> {
    if !entry.human || entry.recorded {
        return Ok(());
    }
    let Some(answer) = entry.session.final_answer() else {
        return Ok(());
    };
    let t = entry.session.transcript();
    let record = HumanAnswerRecord {
        session_id: sid.to_string(),
        problem_id: t.problem_id.clone(),
        answer,
        correct: t.correct == Some(true),
        commands: t
            .iterations
            .iter()
            .map(|it| {
                it.executed
                    .iter()
                    .map(|e| CommandRequest {
                        target: e.target,
                        rotation_sequence: e.rotation_sequence.clone(),
                    })
                    .collect()
            })
            .collect(),
        elapsed_secs: entry.started.elapsed().as_secs_f64(),
        timestamp_unix: now_unix(),
    };
    append_line(st, ANSWERS_FILE, &record)?;
    entry.recorded = true;
    Ok(())
}

fn turn_response(sid: &str, entry: &SessionEntry, r: &TurnResult) -> TurnResponse {
    let s = &entry.session;
    TurnResponse {
        index: r.index,
        grids: grid_views(sid, s),
        errors: r.errors.clone(),
        notes: r.notes.clone(),
        finished: r.finished,
        final_answer: s.final_answer(),
        correct: if s.is_finished() { s.transcript().correct } else { None },
        next_iteration: s.counter() + 1,
    }
}

/// Accepts either a raw agent reply (`text/plain`) or the turn object as
/// JSON. Both are parsed strictly.
async fn post_turn(
    State(st): State<Shared>,
    Path(sid): Path<String>,
    body: Bytes,
) -> ApiResult<Json<TurnResponse>> {
    let raw = String::from_utf8(body.to_vec())
        .map_err(|_| ApiError::unprocessable("body is not UTF-8", "invalid_json"))?;
    let turn = parse_turn_output_strict(&raw)
        .map_err(|e| ApiError::unprocessable(e.to_string(), e.category()))?;
    let entry = st.session(&sid)?;
    let mut guard = entry.lock().expect("session lock");
    let r = run_turn(&st, &sid, &mut guard, &raw, turn)?;
    Ok(Json(turn_response(&sid, &guard, &r)))
}

#[derive(Debug, Deserialize)]
struct CommandPost {
    #[serde(default = "default_target")]
    target: Target,
    rotation_sequence: String,
    #[serde(default)]
    iteration_number: Option<u32>,
}

fn default_target() -> Target {
    Target::A
}

/// One-sequence turn for interactive play; answers with the grid PNG. The
/// body is JSON or a bare sequence such as `left:30` (target A).
async fn post_command(
    State(st): State<Shared>,
    Path(sid): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let text = String::from_utf8(body.to_vec())
        .map_err(|_| ApiError::unprocessable("body is not UTF-8", "invalid_json"))?;
    let req: CommandPost = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text)
            .map_err(|e| ApiError::unprocessable(e.to_string(), "invalid_json"))?
    } else {
        CommandPost {
            target: Target::A,
            rotation_sequence: text.trim().to_string(),
            iteration_number: None,
        }
    };
    let request = CommandRequest {
        target: req.target,
        rotation_sequence: req.rotation_sequence,
    };
    if let Err(e) = request.parse() {
        return Err(ApiError::unprocessable(
            format!("{}: {e}", request.rotation_sequence),
            e.source.category(),
        ));
    }
    let entry = st.session(&sid)?;
    let mut guard = entry.lock().expect("session lock");
    let iteration = req.iteration_number.unwrap_or(guard.session.counter() + 1);
    let turn = TurnOutput {
        memory: Memory::default(),
        iteration_number: iteration,
        commands: vec![request],
        final_answer: None,
    };
    let raw = turn.to_json();
    let r = run_turn(&st, &sid, &mut guard, &raw, turn)?;
    if !r.errors.is_empty() {
        return Err(ApiError::unprocessable(r.errors.join("; "), "rejected_sequence"));
    }
    let grid: &TargetGrid = r
        .grids
        .iter()
        .find(|g| g.target == req.target)
        .ok_or_else(|| ApiError::internal("no grid for the target"))?;
    let img = grid.grid.compose().map_err(ApiError::internal)?;
    png_response(&img, &[("x-iteration", r.index.to_string())])
}

#[derive(Debug, Deserialize)]
struct AnswerPost {
    answer: OptionLabel,
    #[serde(default)]
    iteration_number: Option<u32>,
}

async fn post_answer(
    State(st): State<Shared>,
    Path(sid): Path<String>,
    Json(req): Json<AnswerPost>,
) -> ApiResult<Response> {
    let entry = st.session(&sid)?;
    let mut guard = entry.lock().expect("session lock");
    let iteration = req.iteration_number.unwrap_or(guard.session.counter() + 1);
    let turn = TurnOutput {
        memory: Memory::default(),
        iteration_number: iteration,
        commands: Vec::new(),
        final_answer: Some(req.answer),
    };
    let raw = turn.to_json();
    let r = run_turn(&st, &sid, &mut guard, &raw, turn)?;
    if !r.finished {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({
                "error": "answer not accepted yet",
                "notes": r.notes,
                "context": view(&sid, &guard).ok(),
            }),
        });
    }
    Ok((StatusCode::OK, Json(turn_response(&sid, &guard, &r))).into_response())
}

async fn session_snapshot(
    State(st): State<Shared>,
    Path((sid, target)): Path<(String, String)>,
) -> ApiResult<Response> {
    let target = parse_target(&target)?;
    let entry = st.session(&sid)?;
    let img = {
        let guard = entry.lock().expect("session lock");
        guard.session.snapshot(target).map_err(ApiError::internal)?
    };
    png_response(&img, &[])
}

async fn session_grid(
    State(st): State<Shared>,
    Path((sid, file)): Path<(String, String)>,
) -> ApiResult<Response> {
    let entry = st.session(&sid)?;
    let guard = entry.lock().expect("session lock");
    let png = guard
        .session
        .iterations()
        .iter()
        .flat_map(|it| &it.grids)
        .find(|g| g.file == file)
        .map(|g| g.png.clone())
        .ok_or_else(|| ApiError::not_found(format!("grid {file}")))?;
    png_bytes(png, &[])
}

async fn session_transcript(
    State(st): State<Shared>,
    Path(sid): Path<String>,
) -> ApiResult<Response> {
    let entry = st.session(&sid)?;
    let t = entry.lock().expect("session lock").session.transcript();
    Ok((
        [(header::CONTENT_TYPE, "application/json")],
        t.to_json(),
    )
        .into_response())
}

/// The transcript directory as a tar archive: `transcript.json`,
/// `timings.json` and the grid PNGs.
pub fn transcript_bundle(t: &SessionTranscript) -> std::io::Result<Vec<u8>> {
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("transcript.json".into(), t.to_json().into_bytes()),
        (
            "timings.json".into(),
            serde_json::to_vec(&t.timings).expect("numbers serialize"),
        ),
    ];
    for it in &t.iterations {
        for g in &it.grids {
            if !g.png.is_empty() {
                files.push((g.file.clone(), g.png.clone()));
            }
        }
    }
    let mut builder = tar::Builder::new(Vec::new());
    for (name, bytes) in files {
        let mut h = tar::Header::new_gnu();
        h.set_size(bytes.len() as u64);
        h.set_mode(0o644);
        h.set_mtime(0);
        h.set_cksum();
        builder.append_data(&mut h, format!("{}/{name}", t.problem_id), bytes.as_slice())?;
    }
    builder.into_inner()
}

async fn session_bundle(
    State(st): State<Shared>,
    Path(sid): Path<String>,
) -> ApiResult<Response> {
    let entry = st.session(&sid)?;
    let t = entry.lock().expect("session lock").session.transcript();
    let bytes = transcript_bundle(&t).map_err(ApiError::internal)?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-tar".to_string()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{sid}-{}.tar\"", t.problem_id),
            ),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Serialize)]
struct AnswersView {
    records: Vec<HumanAnswerRecord>,
    answered: usize,
    correct: usize,
    accuracy: Option<f64>,
}

async fn list_answers(State(st): State<Shared>) -> ApiResult<Json<AnswersView>> {
    let path = st.config.records_dir().join(ANSWERS_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(ApiError::internal(e)),
    };
    let records: Vec<HumanAnswerRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(ApiError::internal)?;
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(Json(AnswersView {
        answered: records.len(),
        correct,
        accuracy: (!records.is_empty()).then(|| correct as f64 / records.len() as f64),
        records,
    }))
}

// ---- calibration ------------------------------------------------------------

#[derive(Serialize)]
struct CalibrationView {
    problem_id: String,
    target: Target,
    committed: Pose,
    working: Pose,
    /// Pitch/yaw/roll of the working pose, degrees.
    euler: imagery_core::EulerAnglesDeg,
    dirty: bool,
    read_only: bool,
}

fn read_only(st: &AppState) -> ApiResult<bool> {
    Ok(st.config.read_only || is_read_only(&st.config.dataset_dir).map_err(ApiError::internal)?)
}

fn calibration_state(st: &AppState, id: &str, target: Target) -> ApiResult<CalibrationView> {
    let set = st.set();
    let problem = set
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("problem {id}")))?;
    let committed = problem.calibrated_pose(target);
    let working = st
        .working
        .lock()
        .expect("working lock")
        .get(&(id.to_string(), target))
        .copied()
        .unwrap_or(committed);
    Ok(CalibrationView {
        problem_id: id.to_string(),
        target,
        committed,
        working,
        euler: pose_to_euler(&working),
        dirty: working != committed,
        read_only: read_only(st)?,
    })
}

async fn calibration_view(
    State(st): State<Shared>,
    Path((id, target)): Path<(String, String)>,
) -> ApiResult<Json<CalibrationView>> {
    Ok(Json(calibration_state(&st, &id, parse_target(&target)?)?))
}

fn render_working(st: &AppState, id: &str, target: Target, pose: &Pose) -> ApiResult<Response> {
    let set = st.set();
    let problem = set
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("problem {id}")))?;
    let img = render(problem.object(target), pose, set.rig(), set.settings())
        .map_err(ApiError::internal)?;
    let pose_json = serde_json::to_string(pose).map_err(ApiError::internal)?;
    png_response(&img, &[("x-pose", pose_json)])
}

async fn calibration_render(
    State(st): State<Shared>,
    Path((id, target)): Path<(String, String)>,
) -> ApiResult<Response> {
    let target = parse_target(&target)?;
    let v = calibration_state(&st, &id, target)?;
    render_working(&st, &id, target, &v.working)
}

#[derive(Debug, Deserialize)]
struct NudgePost {
    command: String,
}

async fn calibration_nudge(
    State(st): State<Shared>,
    Path((id, target)): Path<(String, String)>,
    Json(req): Json<NudgePost>,
) -> ApiResult<Response> {
    let target = parse_target(&target)?;
    if read_only(&st)? {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "dataset is read-only"));
    }
    let cmd = parse_command(&req.command)
        .map_err(|e| ApiError::unprocessable(e.to_string(), e.category()))?;
    let v = calibration_state(&st, &id, target)?;
    let next = match cmd {
        RotationCommand::Turn(t) => apply_camera_rotation(&v.working, &t),
        RotationCommand::Reset => st.set().get(&id).expect("checked").canonical_pose(target),
    };
    st.working
        .lock()
        .expect("working lock")
        .insert((id.clone(), target), next);
    render_working(&st, &id, target, &next)
}

#[derive(Debug, Default, Deserialize)]
struct CommitPost {
    #[serde(default)]
    author: Option<String>,
}

async fn calibration_commit(
    State(st): State<Shared>,
    Path((id, target)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<CalibrationRecord>> {
    let target = parse_target(&target)?;
    let req: CommitPost = if body.is_empty() {
        CommitPost::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::unprocessable(e.to_string(), "invalid_json"))?
    };
    if read_only(&st)? {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "dataset is read-only"));
    }
    let v = calibration_state(&st, &id, target)?;
    let dir = st.config.dataset_dir.clone();
    let checksum = commit_calibrated_pose(&dir, &id, target, v.working).map_err(|e| match e {
        DatasetError::ReadOnly(_) => ApiError::new(StatusCode::FORBIDDEN, e.to_string()),
        other => ApiError::internal(other),
    })?;
    let reloaded = load_problem_set(&dir).map_err(ApiError::internal)?;
    *st.set.write().expect("set lock") = Arc::new(reloaded);
    st.working
        .lock()
        .expect("working lock")
        .remove(&(id.clone(), target));
    let record = CalibrationRecord {
        dataset: dir.display().to_string(),
        problem_id: id,
        target,
        pose: v.working,
        author: req.author,
        timestamp_unix: now_unix(),
        checksum,
    };
    append_line(&st, CALIBRATIONS_FILE, &record)?;
    Ok(Json(record))
}

async fn calibration_revert(
    State(st): State<Shared>,
    Path((id, target)): Path<(String, String)>,
) -> ApiResult<Json<CalibrationView>> {
    let target = parse_target(&target)?;
    calibration_state(&st, &id, target)?;
    st.working
        .lock()
        .expect("working lock")
        .remove(&(id.clone(), target));
    Ok(Json(calibration_state(&st, &id, target)?))
}
