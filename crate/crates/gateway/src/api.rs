//! HTTP endpoints.
//!
//! Every error body is `{code, message, field}` with `code` taken from the
//! engine's error taxonomy. Writes go through the service lock on a
//! blocking thread, since generation may call out to a remote backend.

use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;
use vitaldx_core::coordinator::{Audience, Delivery, Report};
use vitaldx_core::decision::{ApprovalState, Tier, VerdictKind};
use vitaldx_core::engine::{Applied, EngineError, Input};
use vitaldx_core::ids::{DigestId, PatientId, ResponseId, SessionId};
use vitaldx_core::inquiry::{NextQuestion, Turn};
use vitaldx_core::time::Timestamp;
use vitaldx_core::triggers::{Grade, PlanSpec, Track};
use vitaldx_core::vitals::VitalSample;

use crate::auth::{Principal, Role, TokenTable};
use crate::config::ClockMode;
use crate::service::{FeedItem, Service, ServiceError};

pub struct AppState {
    service: Mutex<Service>,
    tokens: TokenTable,
    clock: ClockMode,
}

impl AppState {
    pub fn new(service: Service, tokens: TokenTable, clock: ClockMode) -> Arc<Self> {
        Arc::new(Self { service: Mutex::new(service), tokens, clock })
    }

    pub fn service(&self) -> MutexGuard<'_, Service> {
        self.service.lock().expect("service lock poisoned")
    }

    /// The time a write is applied at. With the wall clock that is now;
    /// with the manual clock it is the request's `at`, or else the later of
    /// the engine clock and `floor`.
    fn resolve_at(
        &self,
        explicit: Option<Timestamp>,
        floor: Option<Timestamp>,
    ) -> Result<Timestamp, ApiError> {
        match self.clock {
            ClockMode::Wall => match explicit {
                Some(_) => Err(ApiError::invalid("at", "only accepted when the server runs a manual clock")),
                None => Ok(Timestamp::now()),
            },
            ClockMode::Manual => {
                if let Some(at) = explicit {
                    return Ok(at);
                }
                let clock = self.service().engine().clock();
                clock
                    .max(floor)
                    .ok_or_else(|| ApiError::invalid("at", "required until the manual clock has been set"))
            }
        }
    }

    async fn submit(self: &Arc<Self>, input: Input, at: Timestamp) -> Result<Applied, ApiError> {
        let state = Arc::clone(self);
        tokio::task::spawn_blocking(move || state.service().submit(input, at))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string(), None))?
            .map_err(ApiError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into(), field } }
    }

    fn invalid(field: &str, message: &str) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidInput", message, Some(field.into()))
    }

    fn forbidden(message: &str) -> Self {
        Self::new(StatusCode::FORBIDDEN, "Forbidden", message, None)
    }
}

/// HTTP status for an engine error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "ImplausibleValue" | "NonFiniteValue" | "OutOfOrderTimestamp" | "InvalidInput" => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        "UnknownPatient" | "UnknownSession" | "UnknownResponse" | "UnknownDigest" => StatusCode::NOT_FOUND,
        "UnauthorizedActor" | "Forbidden" => StatusCode::FORBIDDEN,
        "SchemaViolation" => StatusCode::BAD_GATEWAY,
        "LogWriteFailed" | "LogUnavailable" => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::CONFLICT,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        Self::new(status_for(e.code()), e.code(), e.to_string(), e.field())
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Refused(e) => e.into(),
            other => Self::new(status_for(other.code()), other.code(), other.to_string(), None),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// The caller, resolved from the bearer token.
pub struct Auth(pub Principal);

impl FromRequestParts<Arc<AppState>> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let header = parts.headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).unwrap_or("");
        state.tokens.resolve(header).cloned().map(Auth).ok_or_else(|| {
            ApiError::new(
                StatusCode::UNAUTHORIZED,
                "Unauthenticated",
                "missing or unknown bearer token",
                None,
            )
        })
    }
}

/// A JSON body whose decode errors name the offending field.
pub struct Body<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", e.body_text(), None))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de).map(Body).map_err(|e| {
            let path = e.path().to_string();
            let field = (path != ".").then_some(path);
            ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", e.inner().to_string(), field)
        })
    }
}

fn require(ok: bool) -> Result<(), ApiError> {
    if ok {
        Ok(())
    } else {
        Err(ApiError::forbidden("this token may not use this endpoint"))
    }
}

fn staff(p: &Principal) -> Result<(), ApiError> {
    require(p.is_clinician() || p.is_service())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/ingest", post(ingest))
        .route("/v1/patients", post(register))
        .route("/v1/patients/{id}/events", get(events))
        .route("/v1/patients/{id}/reports", get(reports))
        .route("/v1/patients/{id}/digests", get(digests))
        .route("/v1/patients/{id}/sessions", get(sessions))
        .route("/v1/sessions/{id}/question", get(question))
        .route("/v1/sessions/{id}/answer", post(answer))
        .route("/v1/clinician/queue", get(queue))
        .route("/v1/responses/{id}/verdict", post(verdict))
        .route("/v1/digests/{id}/confirm", post(confirm_digest))
        .route("/v1/admin/tick", post(tick))
        .route("/v1/admin/flush", post(flush))
        .route("/v1/stream", get(feed))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let service = state.service();
    let head = service.head();
    Json(json!({"status": "ok", "log_head": head.digest, "records": head.next_seq}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    samples: Vec<VitalSample>,
    #[serde(default)]
    at: Option<Timestamp>,
}

async fn ingest(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Body(body): Body<IngestBody>,
) -> Result<Json<Value>, ApiError> {
    match &p.role {
        Role::Service => {}
        Role::Patient(own) => require(body.samples.iter().all(|s| &s.patient_id == own))?,
        Role::Clinician => require(false)?,
    }
    if body.samples.is_empty() {
        return Err(ApiError::invalid("samples", "must not be empty"));
    }
    let latest = body.samples.iter().map(|s| s.timestamp).max();
    let at = state.resolve_at(body.at, latest)?;
    let accepted = body.samples.len();
    let applied = state.submit(Input::Ingest { samples: body.samples }, at).await?;
    Ok(Json(json!({"accepted": accepted, "now": applied.now, "events": applied.events.len()})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterBody {
    patient_id: PatientId,
    #[serde(default)]
    utc_offset_minutes: i32,
    #[serde(default)]
    plans: Vec<PlanSpec>,
    #[serde(default)]
    at: Option<Timestamp>,
}

async fn register(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Body(body): Body<RegisterBody>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    staff(&p)?;
    let at = state.resolve_at(body.at, None)?;
    let input = Input::RegisterPatient {
        patient_id: body.patient_id.clone(),
        utc_offset_minutes: body.utc_offset_minutes,
        plans: body.plans,
    };
    state.submit(input, at).await?;
    let service = state.service();
    let patient = service.engine().patient(&body.patient_id).expect("just registered");
    Ok((StatusCode::CREATED, Json(serde_json::to_value(patient).expect("patients serialize"))))
}

fn known_patient(service: &Service, id: &PatientId) -> Result<(), ApiError> {
    match service.engine().patient(id) {
        Some(_) => Ok(()),
        None => Err(EngineError::UnknownPatient(id.clone()).into()),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    limit: Option<usize>,
}

async fn events(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<PatientId>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<Value>, ApiError> {
    // raw events carry clinician-side detail, so patients use their reports
    staff(&p)?;
    let service = state.service();
    known_patient(&service, &id)?;
    let all = service.engine().memory().events(&id);
    let from = q.limit.map_or(0, |n| all.len().saturating_sub(n));
    Ok(Json(json!({"patient_id": id, "events": &all[from..]})))
}

#[derive(Serialize)]
struct ReportView<'a> {
    report: &'a Report,
    delivery: Option<&'a Delivery>,
}

#[derive(Deserialize)]
struct ReportsQuery {
    #[serde(default)]
    audience: Option<Audience>,
}

async fn reports(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<PatientId>,
    Query(q): Query<ReportsQuery>,
) -> Result<Json<Value>, ApiError> {
    require(p.may_see(&id))?;
    let audience = match (&p.role, q.audience) {
        (Role::Patient(_), Some(Audience::Clinician)) => {
            return Err(ApiError::forbidden("patients see patient reports only"))
        }
        (Role::Patient(_), _) => Audience::Patient,
        (_, Some(a)) => a,
        (_, None) => Audience::Clinician,
    };
    let service = state.service();
    known_patient(&service, &id)?;
    let engine = service.engine();
    let views: Vec<ReportView> = engine
        .reports_for(&id, audience)
        .into_iter()
        .map(|report| ReportView { report, delivery: engine.delivery(&report.report_id) })
        .collect();
    Ok(Json(json!({"patient_id": id, "audience": audience, "reports": views})))
}

async fn digests(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<PatientId>,
) -> Result<Json<Value>, ApiError> {
    staff(&p)?;
    let service = state.service();
    known_patient(&service, &id)?;
    let mut list = service.engine().digests_for(&id);
    list.sort_by_key(|d| d.period_start);
    Ok(Json(json!({"patient_id": id, "digests": list})))
}

/// Sessions of one patient, oldest first, so a client can find the one
/// waiting for an answer.
async fn sessions(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<PatientId>,
) -> Result<Json<Value>, ApiError> {
    require(p.may_see(&id))?;
    let service = state.service();
    known_patient(&service, &id)?;
    let mut list: Vec<_> = service.engine().sessions().filter(|s| s.patient_id == id).collect();
    list.sort_by(|a, b| (a.opened_at, &a.session_id.0).cmp(&(b.opened_at, &b.session_id.0)));
    let rows: Vec<Value> = list
        .into_iter()
        .map(|s| {
            json!({
                "session_id": s.session_id,
                "track": s.track,
                "status": s.status,
                "opened_at": s.opened_at,
                "last_activity": s.last_activity,
                "turns": s.turns.len(),
            })
        })
        .collect();
    Ok(Json(json!({"patient_id": id, "sessions": rows})))
}

fn session_owner(service: &Service, id: &SessionId) -> Result<PatientId, ApiError> {
    service
        .engine()
        .session(id)
        .map(|s| s.patient_id.clone())
        .ok_or_else(|| EngineError::UnknownSession(id.clone()).into())
}

async fn question(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<SessionId>,
) -> Result<Json<NextQuestion>, ApiError> {
    let service = state.service();
    let owner = session_owner(&service, &id)?;
    require(p.may_see(&owner))?;
    Ok(Json(service.engine().current_question(&id).expect("session exists")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerBody {
    text: String,
    #[serde(default)]
    at: Option<Timestamp>,
}

#[derive(Serialize)]
struct AnswerReply {
    turn: Turn,
    next: NextQuestion,
}

async fn answer(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<SessionId>,
    Body(body): Body<AnswerBody>,
) -> Result<Json<AnswerReply>, ApiError> {
    let owner = session_owner(&state.service(), &id)?;
    require(p.is_service() || p.role == Role::Patient(owner))?;
    let at = state.resolve_at(body.at, None)?;
    state.submit(Input::Answer { session_id: id.clone(), text: body.text }, at).await?;
    let service = state.service();
    let session = service.engine().session(&id).expect("session exists");
    let turn = session.turns.last().expect("answer recorded a turn").clone();
    Ok(Json(AnswerReply { turn, next: service.engine().current_question(&id).expect("session exists") }))
}

/// One row of the clinician review queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub response_id: ResponseId,
    pub patient_id: PatientId,
    pub track: Track,
    pub tier: Tier,
    pub grade: Grade,
    pub created_at: Timestamp,
    pub evidence_preview: Vec<String>,
    pub report_id: Option<vitaldx_core::ids::ReportId>,
}

async fn queue(State(state): State<Arc<AppState>>, Auth(p): Auth) -> Result<Json<Vec<QueueItem>>, ApiError> {
    staff(&p)?;
    let service = state.service();
    let engine = service.engine();
    let items = engine
        .review_queue()
        .into_iter()
        .map(|r| QueueItem {
            response_id: r.response_id.clone(),
            patient_id: r.patient_id.clone(),
            track: r.track,
            tier: r.triage_tier,
            grade: r.effective_grade,
            created_at: r.created_at,
            evidence_preview: r.factors.iter().take(3).map(|f| f.statement.clone()).collect(),
            report_id: engine.clinician_report(&r.response_id).map(|rep| rep.report_id.clone()),
        })
        .collect();
    Ok(Json(items))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: VerdictKind,
    #[serde(default)]
    note: Option<String>,
    #[serde(default)]
    share_note: bool,
    #[serde(default)]
    at: Option<Timestamp>,
}

async fn verdict(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<ResponseId>,
    Body(body): Body<VerdictBody>,
) -> Result<Json<Value>, ApiError> {
    let at = state.resolve_at(body.at, None)?;
    // the engine decides who may rule; a patient token is refused there
    let input = Input::Verdict {
        response_id: id.clone(),
        actor: p.actor.clone(),
        role: p.actor_role(),
        verdict: body.verdict,
        note: body.note,
        share_note: body.share_note,
    };
    state.submit(input, at).await?;
    let service = state.service();
    let engine = service.engine();
    let response = engine.response(&id).expect("verdict applied to a known response");
    let state_name = response.state().name();
    let patient_report = engine
        .reports_for(&response.patient_id, Audience::Patient)
        .into_iter()
        .rev()
        .find(|r| r.response_id == id)
        .map(|r| r.report_id.clone());
    Ok(Json(json!({
        "response_id": id,
        "state": state_name,
        "released": response.state() == ApprovalState::Released,
        "patient_report": patient_report,
    })))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AtBody {
    #[serde(default)]
    at: Option<Timestamp>,
}

async fn confirm_digest(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Path(id): Path<DigestId>,
    Body(body): Body<AtBody>,
) -> Result<Json<Value>, ApiError> {
    let at = state.resolve_at(body.at, None)?;
    let input = Input::ConfirmDigest { digest_id: id.clone(), actor: p.actor.clone(), role: p.actor_role() };
    state.submit(input, at).await?;
    let service = state.service();
    Ok(Json(serde_json::to_value(service.engine().digest(&id)).expect("digests serialize")))
}

async fn tick(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Body(body): Body<AtBody>,
) -> Result<Json<Value>, ApiError> {
    require(p.is_service())?;
    let at = state.resolve_at(body.at, None)?;
    let applied = state.submit(Input::Tick, at).await?;
    Ok(Json(
        json!({"now": applied.now, "events": applied.events.len(), "descriptors": applied.descriptors.len()}),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlushBody {
    #[serde(default)]
    patient_id: Option<PatientId>,
    #[serde(default)]
    at: Option<Timestamp>,
}

async fn flush(
    State(state): State<Arc<AppState>>,
    Auth(p): Auth,
    Body(body): Body<FlushBody>,
) -> Result<Json<Value>, ApiError> {
    require(p.is_service())?;
    let at = state.resolve_at(body.at, None)?;
    let applied = state.submit(Input::Flush { patient_id: body.patient_id }, at).await?;
    Ok(Json(
        json!({"now": applied.now, "events": applied.events.len(), "descriptors": applied.descriptors.len()}),
    ))
}

fn render(item: &FeedItem, patient: &Option<PatientId>) -> Option<Event> {
    let item = match patient {
        Some(p) if !item.touches(p) => return None,
        Some(p) => item.only_for(p),
        None => item.clone(),
    };
    Some(
        Event::default()
            .event(item.kind.clone())
            .id(item.seq.to_string())
            .json_data(&item)
            .expect("feed items serialize"),
    )
}

fn feed_stream(
    missed: Vec<FeedItem>,
    rx: broadcast::Receiver<FeedItem>,
    patient: Option<PatientId>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let last = missed.last().map(|i| i.seq);
    let backlog: Vec<_> = missed.iter().filter_map(|i| render(i, &patient)).map(Ok).collect();
    let live = stream::unfold((rx, patient, last), |(mut rx, patient, last)| async move {
        loop {
            let event = match rx.recv().await {
                // already sent from the backlog
                Ok(item) if last.is_some_and(|l| item.seq <= l) => continue,
                Ok(item) => match render(&item, &patient) {
                    Some(e) => e,
                    None => continue,
                },
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    Event::default().event("lagged").data(n.to_string())
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            };
            return Some((Ok(event), (rx, patient, last)));
        }
    });
    stream::iter(backlog).chain(live)
}

async fn feed(State(state): State<Arc<AppState>>, Auth(p): Auth, headers: HeaderMap) -> impl IntoResponse {
    let after =
        headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse().ok());
    let (missed, rx) = match after {
        Some(seq) => state.service().resume(seq),
        None => (Vec::new(), state.service().subscribe()),
    };
    let patient = match p.role {
        Role::Patient(id) => Some(id),
        _ => None,
    };
    Sse::new(feed_stream(missed, rx, patient)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

/// Applies a tick at wall-clock time every `interval` until the process
/// exits. Only meaningful with the wall clock.
pub async fn run_ticker(state: Arc<AppState>, interval: Duration) {
    let mut timer = tokio::time::interval(interval);
    timer.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        timer.tick().await;
        if let Err(e) = state.submit(Input::Tick, Timestamp::now()).await {
            tracing::warn!(code = %e.body.code, message = %e.body.message, "tick refused");
        }
    }
}
