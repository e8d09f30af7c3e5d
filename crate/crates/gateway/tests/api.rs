use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vitaldx_core::adapter::Adapter;
use vitaldx_core::config::EngineConfig;
use vitaldx_core::simulator::{run_scenario, AnomalyScript, ClinicianPolicy, PatientProfile, ScenarioSpec};
use vitaldx_gateway::api::{router, AppState};
use vitaldx_gateway::auth::{TokenSpec, TokenTable};
use vitaldx_gateway::chain::GENESIS;
use vitaldx_gateway::config::ClockMode;
use vitaldx_gateway::service::Service;

fn tokens() -> TokenTable {
    let spec = |token: &str, role: &str, actor: Option<&str>| TokenSpec {
        token: token.into(),
        role: role.into(),
        actor: actor.map(Into::into),
    };
    TokenTable::new(&[
        spec("svc", "service", None),
        spec("doc", "clinician", Some("clinician-1")),
        spec("pat", "patient:p1", None),
        spec("other", "patient:p2", None),
    ])
}

fn app_with(service: Service, clock: ClockMode) -> Router {
    router(AppState::new(service, tokens(), clock))
}

fn app(clock: ClockMode) -> Router {
    app_with(Service::in_memory(EngineConfig::default(), Adapter::mock()), clock)
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str, token: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, Some(token), None).await
}

async fn post(app: &Router, uri: &str, token: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(token), Some(body)).await
}

fn sample(channel: &str, at: &str, value: f64) -> Value {
    json!({"patient_id": "p1", "channel": channel, "timestamp": at, "value": value, "device_id": "d"})
}

fn register_p1() -> Value {
    json!({
        "patient_id": "p1",
        "at": "2024-01-01T00:00:00Z",
        "plans": [{"plan_id": "meds", "topic": "medication", "cadence": {"every": "daily", "at": "09:00"}}],
    })
}

#[tokio::test]
async fn errors_carry_codes_and_statuses() {
    let app = app(ClockMode::Manual);
    let (s, body) = call(&app, Method::GET, "/v1/health", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "log_head": GENESIS, "records": 0}));

    let (s, body) = call(&app, Method::POST, "/v1/ingest", None, Some(json!({"samples": []}))).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("Unauthenticated")));
    let (s, _) = get(&app, "/v1/clinician/queue", "nope").await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let (s, _) = post(&app, "/v1/patients", "pat", register_p1()).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, body) = post(&app, "/v1/patients", "svc", json!({"patient_id": "p1"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!((body["code"].as_str(), body["field"].as_str()), (Some("InvalidInput"), Some("at")));
    let (s, body) = post(&app, "/v1/patients", "svc", register_p1()).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    let (s, body) = post(&app, "/v1/patients", "doc", register_p1()).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::CONFLICT, Some("PatientExists")));

    let bad = json!({"samples": [sample("spo2", "2024-01-01T00:00:01Z", 97.0), sample("spo2", "2024-01-01T00:00:02Z", 140.0)]});
    let (s, body) = post(&app, "/v1/ingest", "svc", bad).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "ImplausibleValue");
    assert_eq!(body["field"], "samples[1].value");
    let (_, health) = get(&app, "/v1/health", "svc").await;
    assert_eq!(health["records"], 1, "refused batch must not be logged");

    let (s, body) = post(&app, "/v1/ingest", "svc", json!({"samples": [{"channel": "spo2"}]})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedBody")));
    assert!(body["field"].as_str().unwrap().starts_with("samples[0]"), "{body}");
    let (s, body) = post(&app, "/v1/admin/tick", "svc", json!({"bogus": 1})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedBody")));

    let own = json!({"samples": [sample("heart_rate", "2024-01-01T00:00:03Z", 70.0)]});
    let (s, _) = post(&app, "/v1/ingest", "other", own.clone()).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, body) = post(&app, "/v1/ingest", "pat", own).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["accepted"], 1);

    let (s, body) = get(&app, "/v1/patients/nobody/events", "svc").await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownPatient")));
    let (s, _) = get(&app, "/v1/patients/p1/events", "pat").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = get(&app, "/v1/clinician/queue", "pat").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = get(&app, "/v1/patients/p1/reports?audience=clinician", "pat").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = get(&app, "/v1/patients/p1/reports", "other").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = get(&app, "/v1/patients/p1/digests", "pat").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, body) = get(&app, "/v1/sessions/ses-none/question", "pat").await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownSession")));
    let (s, body) = post(&app, "/v1/responses/rsp-none/verdict", "doc", json!({"verdict": "approve"})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownResponse")));
    let (s, _) = post(&app, "/v1/admin/tick", "doc", json!({})).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn wall_clock_refuses_explicit_times() {
    let app = app(ClockMode::Wall);
    let (s, body) = post(&app, "/v1/patients", "svc", register_p1()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field"], "at");
    let (s, body) = post(&app, "/v1/patients", "svc", json!({"patient_id": "p1"})).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
}

#[tokio::test]
async fn routine_session_over_http() {
    let app = app(ClockMode::Manual);
    post(&app, "/v1/patients", "svc", register_p1()).await;
    let (s, _) = post(&app, "/v1/admin/tick", "svc", json!({"at": "2024-01-01T09:00:30Z"})).await;
    assert_eq!(s, StatusCode::OK);

    let (s, body) = get(&app, "/v1/patients/p1/sessions", "pat").await;
    assert_eq!(s, StatusCode::OK);
    let sessions = body["sessions"].as_array().unwrap();
    assert_eq!(sessions.len(), 1);
    assert_eq!(sessions[0]["status"], "open");
    assert_eq!(sessions[0]["track"], "routine");
    let sid = sessions[0]["session_id"].as_str().unwrap().to_string();
    let (s, _) = get(&app, "/v1/patients/p1/sessions", "other").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = get(&app, &format!("/v1/sessions/{sid}/question"), "other").await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    let (s, mut next) = get(&app, &format!("/v1/sessions/{sid}/question"), "pat").await;
    assert_eq!(s, StatusCode::OK);
    let mut turns = 0;
    while next["kind"] == "ask" {
        let slot = next["question"]["slot"].as_str().unwrap();
        let text = match slot {
            "adherent" => "yes",
            "side_effects" => "no",
            _ => "none",
        };
        let (s, reply) =
            post(&app, &format!("/v1/sessions/{sid}/answer"), "pat", json!({"text": text})).await;
        assert_eq!(s, StatusCode::OK, "{reply}");
        assert_eq!(reply["turn"]["slot"], slot);
        assert_eq!(reply["turn"]["answer"], text);
        next = reply["next"].clone();
        turns += 1;
        assert!(turns <= 10);
    }
    assert_eq!(next, json!({"kind": "done", "status": "complete"}));
    let (s, body) = post(&app, &format!("/v1/sessions/{sid}/answer"), "pat", json!({"text": "yes"})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::CONFLICT, Some("SessionClosed")));

    // low risk: deferred, so nothing reaches the patient until the deadline
    let (_, body) = get(&app, "/v1/patients/p1/reports", "pat").await;
    assert!(body["reports"].as_array().unwrap().is_empty(), "{body}");
    let (_, queue) = get(&app, "/v1/clinician/queue", "doc").await;
    assert_eq!(queue, json!([]));
    post(&app, "/v1/admin/tick", "svc", json!({"at": "2024-01-02T09:05:00Z"})).await;
    let (_, body) = get(&app, "/v1/patients/p1/reports", "pat").await;
    let reports = body["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 1, "{body}");
    assert_eq!(reports[0]["report"]["audience"], "patient");
    assert!(reports[0]["delivery"].is_object());

    post(&app, "/v1/admin/tick", "svc", json!({"at": "2024-01-08T01:00:00Z"})).await;
    let (s, body) = get(&app, "/v1/patients/p1/digests", "doc").await;
    assert_eq!(s, StatusCode::OK);
    let digests = body["digests"].as_array().unwrap();
    assert_eq!(digests.len(), 1, "{body}");
    let did = digests[0]["digest_id"].as_str().unwrap().to_string();
    let (s, _) = post(&app, &format!("/v1/digests/{did}/confirm"), "pat", json!({})).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, body) = post(&app, &format!("/v1/digests/{did}/confirm"), "doc", json!({})).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let (s, body) = post(&app, &format!("/v1/digests/{did}/confirm"), "doc", json!({})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::CONFLICT, Some("AlreadyConfirmed")));

    let (s, body) = get(&app, "/v1/patients/p1/events?limit=3", "doc").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["events"].as_array().unwrap().len(), 3);
}

fn fixture_spec(clinician: ClinicianPolicy) -> ScenarioSpec {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");
    let profile: PatientProfile =
        toml::from_str(&std::fs::read_to_string(format!("{data}/profile.toml")).unwrap()).unwrap();
    let script: AnomalyScript =
        toml::from_str(&std::fs::read_to_string(format!("{data}/script.toml")).unwrap()).unwrap();
    ScenarioSpec {
        profile,
        script,
        duration_seconds: 86_400.0,
        seed: 7,
        step_seconds: 60.0,
        answer_delay_seconds: 15.0,
        ignore_probability: 0.0,
        clinician,
        settle_seconds: 0.0,
    }
}

#[tokio::test]
async fn clinician_verdicts_over_http() {
    let mut service = Service::in_memory(EngineConfig::default(), Adapter::mock());
    let idle =
        ClinicianPolicy { approve_probability: 0.0, reject_probability: 0.0, ..ClinicianPolicy::default() };
    run_scenario(&mut service, &fixture_spec(idle)).unwrap();
    let mut tokens = vec![
        TokenSpec { token: "svc".into(), role: "service".into(), actor: None },
        TokenSpec { token: "doc".into(), role: "clinician".into(), actor: Some("clinician-1".into()) },
    ];
    tokens.push(TokenSpec { token: "pat".into(), role: "patient:p-demo".into(), actor: None });
    let app = router(AppState::new(service, TokenTable::new(&tokens), ClockMode::Manual));

    let (s, queue) = get(&app, "/v1/clinician/queue", "doc").await;
    assert_eq!(s, StatusCode::OK);
    let items = queue.as_array().unwrap();
    assert!(!items.is_empty());
    let item = &items[0];
    assert_eq!(item["track"], "outlier");
    assert!(["contact_clinician", "urgent_care"].contains(&item["tier"].as_str().unwrap()), "{item}");
    assert!(item["report_id"].is_string());
    let rid = item["response_id"].as_str().unwrap().to_string();

    let before = get(&app, "/v1/patients/p-demo/reports", "pat").await.1;
    let released_before = before["reports"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["report"]["response_id"] == rid.as_str())
        .count();
    assert_eq!(released_before, 0);

    let (s, body) =
        post(&app, &format!("/v1/responses/{rid}/verdict"), "pat", json!({"verdict": "approve"})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::FORBIDDEN, Some("UnauthorizedActor")));
    let (s, body) =
        post(&app, &format!("/v1/responses/{rid}/verdict"), "svc", json!({"verdict": "approve"})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::FORBIDDEN, Some("UnauthorizedActor")));
    let (s, body) = post(
        &app,
        &format!("/v1/responses/{rid}/verdict"),
        "doc",
        json!({"verdict": "approve", "note": "ok"}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["released"], true);
    assert!(body["patient_report"].is_string());
    let (s, body) =
        post(&app, &format!("/v1/responses/{rid}/verdict"), "doc", json!({"verdict": "reject"})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::CONFLICT, Some("TerminalState")));

    let (_, queue) = get(&app, "/v1/clinician/queue", "doc").await;
    assert!(queue.as_array().unwrap().iter().all(|i| i["response_id"] != rid.as_str()));
    let after = get(&app, "/v1/patients/p-demo/reports", "pat").await.1;
    let mine: Vec<&Value> = after["reports"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["report"]["response_id"] == rid.as_str())
        .collect();
    assert_eq!(mine.len(), 1);
    assert_eq!(mine[0]["report"]["audience"], "patient");
}

async fn next_frame(body: &mut Body) -> String {
    let frame = tokio::time::timeout(Duration::from_secs(5), body.frame()).await.expect("feed stalled");
    let frame = frame.expect("feed ended").unwrap();
    String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap()
}

#[tokio::test]
async fn stream_is_scoped_to_the_patient() {
    let app = app(ClockMode::Manual);
    let open = |token: &str| {
        Request::builder()
            .uri("/v1/stream")
            .header(header::AUTHORIZATION, format!("Bearer {token}"))
            .body(Body::empty())
            .unwrap()
    };
    let res = app.clone().oneshot(open("pat")).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert!(res.headers()[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/event-stream"));
    let mut patient_feed = res.into_body();
    let mut staff_feed = app.clone().oneshot(open("doc")).await.unwrap().into_body();

    let reg2 = json!({"patient_id": "p2", "at": "2024-01-01T00:00:00Z"});
    post(&app, "/v1/patients", "svc", reg2).await;
    post(&app, "/v1/patients", "svc", register_p1()).await;

    let first = next_frame(&mut staff_feed).await;
    assert!(first.contains("event: register_patient") && first.contains("\"p2\""), "{first}");
    let own = next_frame(&mut patient_feed).await;
    assert!(
        own.contains("event: register_patient") && own.contains("\"p1\"") && !own.contains("\"p2\""),
        "{own}"
    );
    assert!(own.contains("id: 1"), "{own}");
}

#[tokio::test]
async fn stream_resumes_after_last_event_id() {
    let app = app(ClockMode::Manual);
    for id in ["p2", "p3", "p4"] {
        post(&app, "/v1/patients", "svc", json!({"patient_id": id, "at": "2024-01-01T00:00:00Z"})).await;
    }
    let req = Request::builder()
        .uri("/v1/stream")
        .header(header::AUTHORIZATION, "Bearer doc")
        .header("last-event-id", "0")
        .body(Body::empty())
        .unwrap();
    let mut feed = app.clone().oneshot(req).await.unwrap().into_body();
    let a = next_frame(&mut feed).await;
    let b = next_frame(&mut feed).await;
    assert!(a.contains("id: 1") && a.contains("\"p3\""), "{a}");
    assert!(b.contains("id: 2") && b.contains("\"p4\""), "{b}");

    post(&app, "/v1/patients", "svc", json!({"patient_id": "p5", "at": "2024-01-01T00:00:00Z"})).await;
    let c = next_frame(&mut feed).await;
    assert!(c.contains("id: 3") && c.contains("\"p5\""), "{c}");
}
