//! HTTP negotiation sessions backed by a trained policy.
//!
//! Routes:
//!
//! ```text
//! POST /sessions                 {scenario_id | scenario, policy_id}
//! GET  /sessions/{id}
//! POST /sessions/{id}/turns      {utterance}
//! POST /sessions/{id}/close
//! POST /sessions/{id}/ratings    {rater_id, scores{F,C,E,EA,ENSC,BE,OF}}
//! GET  /reports/agreement?dimension=EA
//! ```

pub mod agreement;
pub mod error;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use ens_core::corpus::Scenario;
use ens_core::dialogue::{validate_dialogue_with_mask, Dialogue, RationaleRecord};
use ens_core::gateway::GenerativeBackend;
use ens_core::rationale::{AblationMask, EnsCotRationale};
use ens_core::text::stable_hash;
use ens_core::training::{generate_agent_turn, GenerationSettings, TrainError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::net::TcpListener;

pub use agreement::{agreement_report, rating_table, AgreementReport};
pub use error::ServiceError;
pub use store::{
    Dimension, EventLog, Scores, SessionEvent, SessionRecord, SessionScenario, SessionStatus,
};

/// A servable policy and the rationale format it was trained on.
#[derive(Clone)]
pub struct PolicyEntry {
    pub backend: Arc<dyn GenerativeBackend>,
    pub mask: AblationMask,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub token: Option<String>,
    pub temperature: f64,
    pub retry_limit: usize,
    pub seed: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            token: None,
            temperature: 0.7,
            retry_limit: 2,
            seed: 0,
        }
    }

    /// Reads the bearer token from `ENS_SERVICE_TOKEN` when set.
    pub fn with_env_token(mut self) -> Self {
        self.token = std::env::var("ENS_SERVICE_TOKEN")
            .ok()
            .filter(|t| !t.is_empty());
        self
    }
}

struct Slot {
    record: SessionRecord,
    /// A turn is being generated; further turns wait for it.
    busy: bool,
}

type SlotRef = Arc<Mutex<Slot>>;

struct Shared {
    config: ServiceConfig,
    log: EventLog,
    policies: HashMap<String, PolicyEntry>,
    scenarios: HashMap<String, Scenario>,
    sessions: Mutex<HashMap<String, SlotRef>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    /// Replays every session log under `config.data_dir`.
    pub fn open(
        config: ServiceConfig,
        policies: HashMap<String, PolicyEntry>,
        scenarios: Vec<Scenario>,
    ) -> Result<Self, ServiceError> {
        let log = EventLog::new(&config.data_dir);
        let sessions = log
            .replay_all()?
            .into_iter()
            .map(|record| {
                let slot = Slot {
                    record,
                    busy: false,
                };
                (slot.record.session_id.clone(), Arc::new(Mutex::new(slot)))
            })
            .collect();
        Ok(Self(Arc::new(Shared {
            config,
            log,
            policies,
            scenarios: scenarios.into_iter().map(|s| (s.id.clone(), s)).collect(),
            sessions: Mutex::new(sessions),
        })))
    }

    pub fn session_count(&self) -> usize {
        lock(&self.0.sessions).len()
    }

    fn slot(&self, id: &str) -> Result<SlotRef, ServiceError> {
        lock(&self.0.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn session(&self, id: &str) -> Result<SessionRecord, ServiceError> {
        let slot = self.slot(id)?;
        let record = lock(&slot).record.clone();
        Ok(record)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub scenario_id: Option<String>,
    /// Inline scenario text, used when no `scenario_id` is given.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub domain_tag: Option<String>,
    pub policy_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub scenario: SessionScenario,
    pub policy_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserTurn {
    pub utterance: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentReply {
    pub response: String,
    pub rationale: EnsCotRationale,
    pub strategy: Option<String>,
    pub attempts: usize,
    pub turn_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Closed {
    pub transcript: Dialogue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub rater_id: String,
    pub scores: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingAck {
    pub ok: bool,
    pub replaced: bool,
}

#[derive(Debug, Clone, Deserialize)]
struct AgreementQuery {
    dimension: String,
}

/// Checks that all seven dimensions are present, known and integral 1..=5.
pub fn parse_scores(raw: &BTreeMap<String, Value>) -> Result<Scores, ServiceError> {
    let mut scores = Scores::new();
    for (key, value) in raw {
        let dim: Dimension = key
            .parse()
            .map_err(|_| ServiceError::ScoreOutOfRange(format!("unknown dimension {key:?}")))?;
        let score = value
            .as_u64()
            .filter(|v| (1..=5).contains(v))
            .ok_or_else(|| {
                ServiceError::ScoreOutOfRange(format!("{dim} = {value} is not an integer in 1..=5"))
            })?;
        scores.insert(dim, score as u8);
    }
    if let Some(missing) = Dimension::ALL.iter().find(|d| !scores.contains_key(d)) {
        return Err(ServiceError::ScoreOutOfRange(format!("{missing} is missing")));
    }
    Ok(scores)
}

async fn create_session(
    State(app): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<Json<Created>, ServiceError> {
    let shared = &app.0;
    if !shared.policies.contains_key(&body.policy_id) {
        return Err(ServiceError::UnknownPolicy(body.policy_id));
    }
    let scenario = match (&body.scenario_id, &body.scenario) {
        (Some(id), _) => {
            let s = shared
                .scenarios
                .get(id)
                .ok_or_else(|| ServiceError::UnknownScenario(id.clone()))?;
            SessionScenario {
                id: Some(s.id.clone()),
                text: s.text.clone(),
                domain_tag: s.domain_tag.to_string(),
            }
        }
        (None, Some(text)) if !text.trim().is_empty() => SessionScenario {
            id: None,
            text: text.trim().to_string(),
            domain_tag: body.domain_tag.clone().unwrap_or_else(|| "other".into()),
        },
        _ => {
            return Err(ServiceError::BadRequest(
                "either scenario_id or a non-empty scenario is required".into(),
            ))
        }
    };
    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let event = SessionEvent::Created {
        session_id: session_id.clone(),
        scenario: scenario.clone(),
        policy_id: body.policy_id.clone(),
        at: store::now(),
    };
    let record = SessionRecord::from_created(&event).map_err(ServiceError::Internal)?;
    shared.log.append(&session_id, &event)?;
    lock(&shared.sessions).insert(
        session_id.clone(),
        Arc::new(Mutex::new(Slot {
            record,
            busy: false,
        })),
    );
    tracing::info!(%session_id, policy = %body.policy_id, "session created");
    Ok(Json(Created {
        session_id,
        scenario,
        policy_id: body.policy_id,
    }))
}

async fn get_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionRecord>, ServiceError> {
    app.session(&id).map(Json)
}

/// Clears the busy flag however the turn ends.
struct BusyGuard(SlotRef);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        lock(&self.0).busy = false;
    }
}

async fn post_turn(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<UserTurn>,
) -> Result<Json<AgentReply>, ServiceError> {
    let utterance = body.utterance.trim().to_string();
    if utterance.is_empty() {
        return Err(ServiceError::BadRequest("utterance is empty".into()));
    }
    let slot = app.slot(&id)?;
    let (context, policy) = {
        let mut s = lock(&slot);
        if s.record.status == SessionStatus::Closed {
            return Err(ServiceError::AlreadyClosed(id));
        }
        if s.busy {
            return Err(ServiceError::TurnOrder);
        }
        let policy = app
            .0
            .policies
            .get(&s.record.policy_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownPolicy(s.record.policy_id.clone()))?;
        s.busy = true;
        (s.record.context_for(&utterance), policy)
    };
    let guard = BusyGuard(slot.clone());

    let config = &app.0.config;
    let settings = GenerationSettings {
        temperature: config.temperature,
        top_p: 1.0,
        seed: stable_hash(&[&config.seed.to_le_bytes(), context.id.as_bytes()]),
        retry_limit: config.retry_limit,
        mask: policy.mask.clone(),
    };
    let backend = policy.backend.clone();
    let ctx = context.clone();
    let turn = tokio::task::spawn_blocking(move || generate_agent_turn(&*backend, &ctx, &settings))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map_err(|e| match e {
            TrainError::GenerationUnparseable {
                attempts,
                last_error,
            } => ServiceError::GenerationUnparseable {
                attempts,
                detail: last_error,
            },
            other => ServiceError::Internal(other.to_string()),
        })?;

    let event = SessionEvent::Turn {
        user: utterance,
        agent: RationaleRecord::from(&turn.rationale),
        strategy: turn.strategy,
        attempts: turn.attempts,
        at: store::now(),
    };
    let turn_index = {
        let mut s = lock(&slot);
        app.0.log.append(&id, &event)?;
        s.record.apply(&event).map_err(ServiceError::Internal)?;
        s.record.transcript.turns.len() - 1
    };
    drop(guard);
    Ok(Json(AgentReply {
        strategy: turn.strategy.map(|s| s.as_str().to_string()),
        response: turn.response,
        rationale: turn.rationale,
        attempts: turn.attempts,
        turn_index,
    }))
}

async fn close_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Closed>, ServiceError> {
    let slot = app.slot(&id)?;
    let mut s = lock(&slot);
    if s.record.status == SessionStatus::Closed {
        return Err(ServiceError::AlreadyClosed(id));
    }
    if s.busy {
        return Err(ServiceError::TurnOrder);
    }
    let event = SessionEvent::Closed { at: store::now() };
    app.0.log.append(&id, &event)?;
    s.record.apply(&event).map_err(ServiceError::Internal)?;
    let transcript = s.record.transcript.clone();
    let mask = app
        .0
        .policies
        .get(&s.record.policy_id)
        .map_or_else(AblationMask::full, |p| p.mask.clone());
    let report = validate_dialogue_with_mask(&transcript, &mask);
    if !report.is_valid() {
        tracing::warn!(session = %id, violations = report.violations.len(), "closed transcript fails validation");
    }
    app.0.log.append_transcript(&transcript)?;
    Ok(Json(Closed { transcript }))
}

async fn submit_ratings(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<RatingSubmission>,
) -> Result<Json<RatingAck>, ServiceError> {
    let rater_id = body.rater_id.trim().to_string();
    if rater_id.is_empty() {
        return Err(ServiceError::BadRequest("rater_id is empty".into()));
    }
    let slot = app.slot(&id)?;
    let mut s = lock(&slot);
    if s.record.status != SessionStatus::Closed {
        return Err(ServiceError::SessionOpen(id));
    }
    let scores = parse_scores(&body.scores)?;
    let replaced = s.record.ratings.contains_key(&rater_id);
    let event = SessionEvent::Rating {
        rater_id,
        scores,
        replaced,
        at: store::now(),
    };
    app.0.log.append(&id, &event)?;
    s.record.apply(&event).map_err(ServiceError::Internal)?;
    Ok(Json(RatingAck { ok: true, replaced }))
}

async fn agreement(
    State(app): State<AppState>,
    Query(q): Query<AgreementQuery>,
) -> Result<Json<AgreementReport>, ServiceError> {
    let dimension: Dimension = q.dimension.parse()?;
    let slots: Vec<SlotRef> = lock(&app.0.sessions).values().cloned().collect();
    let mut records: Vec<SessionRecord> = slots.iter().map(|s| lock(s).record.clone()).collect();
    records.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let refs: Vec<&SessionRecord> = records.iter().collect();
    agreement_report(&refs, dimension).map(Json)
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.0.config.token {
        let ok = req
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return axum::response::IntoResponse::into_response(ServiceError::Unauthorized);
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/close", post(close_session))
        .route("/sessions/{id}/ratings", post(submit_ratings))
        .route("/reports/agreement", get(agreement))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until `shutdown` resolves. Every event is flushed when appended,
/// so nothing is pending at exit.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// `ENS_SERVICE_ADDR`, defaulting to localhost:8080.
pub fn listen_addr() -> String {
    std::env::var("ENS_SERVICE_ADDR").unwrap_or_else(|_| "127.0.0.1:8080".into())
}
