#[path = "../../pipeline/tests/common/mod.rs"]
mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::Duration;
use common::*;
use http_body_util::BodyExt;
use lhs_api::{canonical_json, router, ApiConfig, ApiError, AppState, ErrorBody, HttpError, Page};
use lhs_core::{AffectedSide, AssessmentCode, Clock, IsoWeekId, ObservationResult, PatientId, PatientRecord, RecordId};
use lhs_pipeline::{schedule_compliance, RandomFaults, SubmissionReceipt};
use lhs_store::{export_rows, write_export, ExportFormat, ExportScope, Statistic, Store, TimeRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const TOKEN: &str = "test-token-0123";

fn app(h: &Harness) -> Router {
    app_with(h, ApiConfig::default())
}

fn app_with(h: &Harness, config: ApiConfig) -> Router {
    router(AppState::new(h.store.clone(), h.clock.clone(), config, Some(TOKEN.into())))
}

struct Reply {
    status: StatusCode,
    content_type: String,
    body: Vec<u8>,
}

impl Reply {
    fn error(&self) -> ErrorBody {
        serde_json::from_slice(&self.body).unwrap()
    }

    fn json<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body).unwrap()
    }
}

async fn send(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Vec<u8>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let res = app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = res.status();
    let content_type = res.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string()).unwrap_or_default();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, "GET", uri, Some(TOKEN), Vec::new()).await
}

/// Patients, devices and processed results, some dead-lettered.
fn populated(jobs: usize) -> (Harness, lhs_pipeline::Orchestrator) {
    let h = Harness::in_memory();
    let orch = h.orchestrator(RandomFaults { p: 0.3, seed: 11 });
    populate(&h, &orch, 12, jobs, 5);
    orch.run_until_idle("w").unwrap();
    (h, orch)
}

#[tokio::test]
async fn requests_without_a_valid_token_are_rejected() {
    let h = Harness::in_memory();
    let app = app(&h);
    for token in [None, Some("wrong"), Some("test-token-012"), Some("")] {
        let r = send(&app, "GET", "/v1/patients", token, Vec::new()).await;
        assert_eq!(r.status, StatusCode::UNAUTHORIZED, "{token:?}");
        assert_eq!(r.error().code, "unauthorized");
    }
    let r = send(&app, "POST", "/v1/ingest", None, b"{}".to_vec()).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(get(&app, "/v1/patients").await.status, StatusCode::OK);
}

#[test]
fn writable_service_needs_a_token() {
    let cfg = ApiConfig { token_env: "LHS_TEST_UNSET_TOKEN".into(), ..ApiConfig::default() };
    assert!(matches!(cfg.resolve_token_with(|_| None), Err(ApiError::MissingToken(v)) if v == "LHS_TEST_UNSET_TOKEN"));
    assert!(matches!(cfg.resolve_token_with(|_| Some("  ".into())), Err(ApiError::MissingToken(_))));
    assert_eq!(cfg.resolve_token_with(|k| (k == "LHS_TEST_UNSET_TOKEN").then(|| "t".into())).unwrap(), Some("t".into()));
    let ro = ApiConfig { read_only: true, ..cfg };
    assert_eq!(ro.resolve_token_with(|_| None).unwrap(), None);
    let bad = ApiConfig { default_page_size: 10, max_page_size: 5, ..ApiConfig::default() };
    assert!(matches!(bad.resolve_token_with(|_| Some("t".into())), Err(ApiError::Config(_))));
}

#[tokio::test]
async fn read_only_service_serves_reads_and_refuses_ingest() {
    let h = Harness::in_memory();
    h.devices();
    h.patient("P1", AffectedSide::Left);
    let cfg = ApiConfig { read_only: true, ..ApiConfig::default() };
    let app = router(AppState::new(h.store.clone(), h.clock.clone(), cfg, None));
    assert_eq!(send(&app, "GET", "/v1/patients/P1", None, Vec::new()).await.status, StatusCode::OK);
    let env = envelope("P1", AssessmentCode::Ess, h.clock.now().with_timezone(&clinic_tz()), "tab-1", vec![items_payload(
        lhs_core::payload::questionnaire::Instrument::Ess,
        &[1; 8],
    )]);
    let r = send(&app, "POST", "/v1/ingest", None, serde_json::to_vec(&env).unwrap()).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    assert_eq!(r.error().code, "read_only");
    assert_eq!(h.store.read().records().count(), 0);
}

#[tokio::test]
async fn ingest_creates_records_and_maps_gateway_errors() {
    let h = Harness::in_memory();
    h.devices();
    h.patient("P1", AffectedSide::Right);
    let app = app(&h);
    let at = h.clock.now().with_timezone(&clinic_tz());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let env = random_tablet(&mut rng, "P1", at);
    let r = send(&app, "POST", "/v1/ingest", Some(TOKEN), serde_json::to_vec(&env).unwrap()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let receipt: SubmissionReceipt = r.json();
    assert_eq!(r.body, canonical_json(&receipt));
    let rec = h.store.read().record(&receipt.record_id).cloned().unwrap();
    assert_eq!(rec.code, env.code);
    assert_eq!(rec.payloads.iter().map(|p| p.content_hash).collect::<Vec<_>>(), receipt.content_hashes);

    // A wrist recording is larger than the framework's default body limit.
    let imu = envelope("P1", AssessmentCode::PamArmUse, at, "imu-1", vec![lhs_core::submission::PayloadPart {
        kind: lhs_core::PayloadKind::ImuStream,
        bytes: small_imu(3, 24 * 60),
    }]);
    let body = serde_json::to_vec(&imu).unwrap();
    assert!(body.len() > 2 << 20);
    assert_eq!(send(&app, "POST", "/v1/ingest", Some(TOKEN), body).await.status, StatusCode::CREATED);

    let cases: Vec<(Vec<u8>, StatusCode, &str)> = vec![
        (b"{not json".to_vec(), StatusCode::BAD_REQUEST, "malformed"),
        (
            serde_json::to_vec(&envelope("P404", env.code, at, "tab-1", env.parts.clone())).unwrap(),
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown_patient",
        ),
        (
            serde_json::to_vec(&envelope("P1", env.code, at, "tab-404", env.parts.clone())).unwrap(),
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown_device",
        ),
        (
            String::from_utf8(serde_json::to_vec(&env).unwrap())
                .unwrap()
                .replace(&format!("\"{}\"", env.code), "\"SUS\"")
                .into_bytes(),
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown_assessment_code",
        ),
        (
            serde_json::to_vec(&envelope("P1", AssessmentCode::Fss, at, "tab-1", vec![lhs_core::submission::PayloadPart {
                kind: lhs_core::PayloadKind::VideoBlob,
                bytes: vec![1],
            }]))
            .unwrap(),
            StatusCode::UNPROCESSABLE_ENTITY,
            "illegal_payload_kind",
        ),
    ];
    for (body, status, code) in cases {
        let r = send(&app, "POST", "/v1/ingest", Some(TOKEN), body).await;
        assert_eq!((r.status, r.error().code.as_str()), (status, code));
    }
    assert_eq!(h.store.read().records().count(), 2);
}

#[tokio::test]
async fn series_passes_points_through_sorted() {
    let h = Harness::in_memory();
    h.devices();
    h.patient("P1", AffectedSide::Left);
    let base = h.clock.now().with_timezone(&clinic_tz());
    let mut ids = Vec::new();
    // Captured out of order on purpose.
    for (k, days) in [5, 1, 3].into_iter().enumerate() {
        let items = [k as i64 + 1; 8];
        let env = envelope("P1", AssessmentCode::Ess, base + Duration::days(days), "tab-1", vec![items_payload(
            lhs_core::payload::questionnaire::Instrument::Ess,
            &items,
        )]);
        ids.push(h.gateway.submit_assessment(env).unwrap().record_id);
    }
    for (k, id) in ids.iter().enumerate() {
        put_obs(&h.store, "P1", id, "ESS_TOTAL", 8.0 * (k + 1) as f64);
    }
    let app = app(&h);
    let r = get(&app, "/v1/patients/P1/series/ESS_TOTAL").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type, "application/json");
    let series: lhs_core::TrajectorySeries = r.json();
    assert_eq!(series.points.len(), 3);
    assert!(series.points.windows(2).all(|w| w[0].at < w[1].at));
    assert_eq!(series.points.iter().map(|p| p.value).collect::<Vec<_>>(), vec![16.0, 24.0, 8.0]);
    let direct = h.store.read().series(&PatientId::new("P1"), "ESS_TOTAL", TimeRange::all()).unwrap();
    assert_eq!(r.body, canonical_json(&direct));

    let from = (base + Duration::days(2)).to_rfc3339();
    let r = get(&app, &format!("/v1/patients/P1/series/ESS_TOTAL?from={}", from.replace('+', "%2B"))).await;
    assert_eq!(r.json::<lhs_core::TrajectorySeries>().points.len(), 2);

    assert_eq!(get(&app, "/v1/patients/P1/series/FSS_SCORE").await.json::<lhs_core::TrajectorySeries>().points.len(), 0);
    let r = get(&app, "/v1/patients/P9/series/ESS_TOTAL").await;
    assert_eq!((r.status, r.error().code.as_str()), (StatusCode::NOT_FOUND, "not_found"));
    assert_eq!(get(&app, "/v1/patients/P1/series/NOPE").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/v1/patients/P1/series/ESS_TOTAL?from=yesterday").await.status, StatusCode::UNPROCESSABLE_ENTITY);
}

fn put_obs(store: &Store, patient: &str, record: &RecordId, metric: &str, value: f64) {
    store
        .put_observation(ObservationResult {
            patient_id: PatientId::new(patient),
            source_record_id: record.clone(),
            metric_code: metric.into(),
            value,
            unit: "points".into(),
            computed_at: t0(),
            derivation_version: "test".into(),
        })
        .unwrap();
}

#[tokio::test]
async fn pages_concatenate_to_the_full_listing() {
    let h = Harness::in_memory();
    for i in 0..137 {
        h.patient(&format!("Q{i:04}"), AffectedSide::Unknown);
    }
    let app = app(&h);
    let full: Page<PatientRecord> = get(&app, "/v1/patients?limit=1000").await.json();
    assert_eq!(full.total, 137);
    assert_eq!(full.next_offset, None);
    let direct: Vec<PatientRecord> = h.store.read().patients().cloned().collect();
    assert_eq!(full.items, direct);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let limit = rng.random_range(1..=60);
        let mut got = Vec::new();
        let mut next = Some(0);
        while let Some(offset) = next {
            let page: Page<PatientRecord> = get(&app, &format!("/v1/patients?offset={offset}&limit={limit}")).await.json();
            assert!(page.items.len() <= limit);
            got.extend(page.items);
            next = page.next_offset;
        }
        assert_eq!(got, direct, "limit {limit}");
    }
    let default: Page<PatientRecord> = get(&app, "/v1/patients").await.json();
    assert_eq!(default.items.len(), 100);
    let past_end: Page<PatientRecord> = get(&app, "/v1/patients?offset=500").await.json();
    assert!(past_end.items.is_empty());
    for q in ["limit=0", "limit=1001", "limit=abc"] {
        let r = get(&app, &format!("/v1/patients?{q}")).await;
        assert!(r.status.is_client_error(), "{q}");
    }
    let r = get(&app, "/v1/patients/Q0003").await;
    assert_eq!(r.body, canonical_json(&direct[3]));
    assert_eq!(get(&app, "/v1/patients/nobody").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn compliance_matches_the_gateway() {
    let (h, _) = populated(120);
    let app = app(&h);
    for p in ["P000", "P005"] {
        for w in ["2025-W02", "2025-W03", "2025-W10"] {
            let r = get(&app, &format!("/v1/patients/{p}/compliance/{w}")).await;
            assert_eq!(r.status, StatusCode::OK);
            let direct = schedule_compliance(&h.store.read(), &PatientId::new(p), w.parse::<IsoWeekId>().unwrap()).unwrap();
            assert_eq!(r.body, canonical_json(&direct));
        }
    }
    assert_eq!(get(&app, "/v1/patients/P000/compliance/2025-03").await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&app, "/v1/patients/P999/compliance/2025-W03").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cohort_statistics_match_the_store() {
    let empty = Harness::in_memory();
    let r = get(&app(&empty), "/v1/cohort/FSS_SCORE/count").await;
    assert_eq!(r.json::<serde_json::Value>(), serde_json::json!({"metric_code": "FSS_SCORE", "statistic": "count", "value": 0.0, "n": 0}));
    let r = get(&app(&empty), "/v1/cohort/FSS_SCORE/mean").await;
    assert_eq!(r.json::<serde_json::Value>()["value"], serde_json::Value::Null);

    let (h, _) = populated(200);
    let app = app(&h);
    for metric in ["FSS_SCORE", "HADS_A", "ARAT_TOTAL", "WALK_SPEED"] {
        for stat in [Statistic::Mean, Statistic::Median, Statistic::Count, Statistic::Stddev] {
            let r = get(&app, &format!("/v1/cohort/{metric}/{stat}")).await;
            let direct = h.store.read().cohort_aggregate(metric, stat, TimeRange::all());
            assert_eq!(r.body, canonical_json(&direct), "{metric} {stat}");
        }
    }
    assert_eq!(get(&app, "/v1/cohort/FSS_SCORE/mode").await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&app, "/v1/cohort/NO_SUCH_METRIC/mean").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn pipeline_report_equals_the_orchestrator() {
    let (h, orch) = populated(300);
    let app = app(&h);
    let now = h.clock.now();
    let cases = [("", TimeRange::all()), ("?window=all", TimeRange::all()), (
        "?window=3d",
        TimeRange { from: Some(now - Duration::days(3)), to: Some(now) },
    )];
    for (q, window) in cases {
        let r = get(&app, &format!("/v1/pipeline/report{q}")).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.body, canonical_json(&orch.report(window)), "{q}");
    }
    let full: lhs_pipeline::PipelineReport = get(&app, "/v1/pipeline/report").await.json();
    assert!(full.dead_lettered > 0 && full.conserved());
    for q in ["3w", "-1d", "d", "0h"] {
        assert_eq!(get(&app, &format!("/v1/pipeline/report?window={q}")).await.status, StatusCode::UNPROCESSABLE_ENTITY, "{q}");
    }
    let r = get(&app, "/v1/pipeline/dead-letters").await;
    let mut direct = Vec::new();
    let n = lhs_pipeline::write_dead_letters(&h.store.read(), &mut direct).unwrap();
    assert_eq!(n, full.dead_lettered);
    assert_eq!(r.body, direct);
    assert!(r.content_type.starts_with("text/csv"));
}

#[tokio::test]
async fn export_streams_the_store_export() {
    let (h, _) = populated(600);
    let app = app(&h);
    let rows = export_rows(&h.store.read(), &ExportScope::All).unwrap();
    assert!(rows.len() > 1000, "{}", rows.len());
    for (format, name) in [(ExportFormat::Csv, "csv"), (ExportFormat::Ndjson, "ndjson")] {
        let r = get(&app, &format!("/v1/export?format={name}")).await;
        let mut direct = Vec::new();
        write_export(&rows, format, &mut direct).unwrap();
        assert!(r.body == direct, "{name}");
        assert_eq!(r.content_type, format.content_type());
    }
    let r = get(&app, "/v1/export?scope=patient:P003&format=csv").await;
    let mut direct = Vec::new();
    write_export(&export_rows(&h.store.read(), &ExportScope::Patient(PatientId::new("P003"))).unwrap(), ExportFormat::Csv, &mut direct)
        .unwrap();
    assert_eq!(r.body, direct);

    let r = get(&app, "/v1/export?scope=cohort:none").await;
    assert_eq!(String::from_utf8(r.body).unwrap().lines().count(), 1);
    assert_eq!(get(&app, "/v1/export?scope=cohort:none&format=ndjson").await.body, b"");
    assert_eq!(get(&app, "/v1/export?scope=patient:P999").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/v1/export?scope=galaxy").await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&app, "/v1/export?format=xlsx").await.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_routes_get_the_error_body() {
    let h = Harness::in_memory();
    let r = get(&app(&h), "/v2/everything").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error().code, "not_found");
}

#[test]
fn internal_errors_do_not_leak() {
    use axum::response::IntoResponse;
    let res = HttpError::internal("journal line 7 is corrupt: /var/lib/secret").into_response();
    assert_eq!(res.status(), StatusCode::INTERNAL_SERVER_ERROR);
    let body = tokio::runtime::Runtime::new().unwrap().block_on(res.into_body().collect()).unwrap().to_bytes();
    let e: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert_eq!(e, ErrorBody { code: "internal".into(), message: "internal error".into(), detail: None });
}

#[tokio::test]
async fn serves_over_tcp_until_shutdown() {
    use std::io::{Read, Write};
    let h = Harness::in_memory();
    h.patient("P1", AffectedSide::Left);
    let state = AppState::new(h.store.clone(), h.clock.clone() as Arc<dyn Clock>, ApiConfig::default(), Some(TOKEN.into()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(lhs_api::serve(listener, state, async {
        let _ = rx.await;
    }));
    let out = tokio::task::spawn_blocking(move || {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        let req = format!("GET /v1/patients/P1 HTTP/1.1\r\nHost: x\r\nAuthorization: Bearer {TOKEN}\r\nConnection: close\r\n\r\n");
        s.write_all(req.as_bytes()).unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(out.starts_with("HTTP/1.1 200"), "{out}");
    assert!(out.ends_with(&String::from_utf8(canonical_json(&h.store.read().patient(&PatientId::new("P1")).unwrap())).unwrap()));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
