mod common;

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use common::*;
use lhs_core::payload::questionnaire::Instrument;
use lhs_core::registry::registry;
use lhs_core::submission::{DeviceDescriptor, DeviceKind, PayloadPart};
use lhs_core::{AffectedSide, AssessmentCode, Clock, ContentHash, DeviceId, IsoWeekId, PatientId, PayloadKind, RecordId, RecordStatus};
use lhs_pipeline::{parse_submission, GatewayError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ready() -> Harness {
    let h = Harness::in_memory();
    h.devices();
    h.patient("P001", AffectedSide::Left);
    h
}

fn at(days: i64, hours: i64) -> chrono::DateTime<chrono::FixedOffset> {
    (t0() + Duration::days(days) + Duration::hours(hours)).with_timezone(&clinic_tz())
}

fn fss(items: &[i64]) -> Vec<PayloadPart> {
    vec![items_payload(Instrument::Fss, items)]
}

#[test]
fn devices_register_once() {
    let h = Harness::in_memory();
    for i in 0..100 {
        let d = DeviceDescriptor {
            device_id: DeviceId::new(format!("dev-{i:03}")),
            device_kind: DeviceKind::Tablet,
            firmware_version: "2.1".into(),
            registered_at: t0(),
        };
        assert_eq!(h.gateway.register_device(d).unwrap(), DeviceId::new(format!("dev-{i:03}")));
    }
    assert_eq!(h.store.read().devices().count(), 100);
    let again = DeviceDescriptor {
        device_id: DeviceId::new("dev-007"),
        device_kind: DeviceKind::Camera,
        firmware_version: "9".into(),
        registered_at: t0(),
    };
    assert!(matches!(h.gateway.register_device(again), Err(GatewayError::DuplicateDevice(d)) if d.as_str() == "dev-007"));
    assert_eq!(h.store.read().device(&DeviceId::new("dev-007")).unwrap().device_kind, DeviceKind::Tablet);
}

#[test]
fn valid_questionnaire_is_captured_with_hashes() {
    let h = ready();
    let part = fss(&[4, 5, 6, 3, 2, 7, 1, 4, 4]);
    let bytes = part[0].bytes.clone();
    let receipt = h.gateway.submit_assessment(envelope("P001", AssessmentCode::Fss, at(0, 2), "tab-1", part)).unwrap();
    assert_eq!(receipt.content_hashes, vec![ContentHash::of(&bytes)]);
    assert_eq!(receipt.duplicate_of, None);
    let st = h.store.read();
    let rec = st.record(&receipt.record_id).unwrap();
    assert_eq!(rec.status, RecordStatus::Captured);
    assert_eq!(rec.payloads.len(), 1);
    assert_eq!(rec.payloads[0].byte_length, bytes.len() as u64);
    assert_eq!(rec.status_history.len(), 1);
    drop(st);
    assert_eq!(h.store.get_blob(&receipt.content_hashes[0]).unwrap(), Some(bytes));
}

#[test]
fn payload_kind_outside_modalities_is_rejected() {
    let h = ready();
    let audio = vec![PayloadPart { kind: PayloadKind::AudioBlob, bytes: vec![1, 2, 3] }];
    let err = h.gateway.submit_assessment(envelope("P001", AssessmentCode::Arat, at(0, 1), "mic-1", audio)).unwrap_err();
    assert!(matches!(err, GatewayError::IllegalPayloadKind { code: AssessmentCode::Arat, kind: PayloadKind::AudioBlob }));
    // Every (code, kind) pair agrees with the registry.
    for def in registry().assessments() {
        for kind in [PayloadKind::ImuStream, PayloadKind::AudioBlob, PayloadKind::VideoBlob] {
            let parts = vec![PayloadPart { kind, bytes: if kind == PayloadKind::ImuStream { small_imu(1, 1) } else { vec![9] } }];
            let res = h.gateway.submit_assessment(envelope("P001", def.code, at(0, 1), "cam-1", parts));
            let allowed = def.allowed_payload_kinds().contains(&kind);
            assert_eq!(res.is_ok(), allowed, "{} {kind}: {res:?}", def.code);
        }
    }
    assert_eq!(h.store.read().records().count() as u32, registry().assessments().iter().map(|d| {
        [PayloadKind::ImuStream, PayloadKind::AudioBlob, PayloadKind::VideoBlob].iter().filter(|k| d.allowed_payload_kinds().contains(k)).count() as u32
    }).sum::<u32>());
}

#[test]
fn resubmission_is_flagged_against_a_hash_oracle() {
    let h = ready();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool: Vec<Vec<i64>> = (0..8).map(|_| random_items(&mut rng, Instrument::Fss)).collect();
    let mut first: BTreeMap<Vec<i64>, RecordId> = BTreeMap::new();
    for i in 0..60 {
        let items = pool[rng.random_range(0..pool.len())].clone();
        let r = h.gateway.submit_assessment(envelope("P001", AssessmentCode::Fss, at(i / 6, i % 6), "tab-1", fss(&items))).unwrap();
        match first.get(&items) {
            Some(orig) => assert_eq!(r.duplicate_of.as_ref(), Some(orig)),
            None => {
                assert_eq!(r.duplicate_of, None);
                first.insert(items, r.record_id);
            }
        }
    }
    // Duplicates are still kept as records.
    assert_eq!(h.store.read().records().count(), 60);
}

#[test]
fn rejections_name_the_problem_and_leave_nothing_behind() {
    let h = ready();
    let good = || envelope("P001", AssessmentCode::Fss, at(0, 0), "tab-1", fss(&[1; 9]));

    let mut e = good();
    e.device_id = DeviceId::new("ghost");
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::UnknownDevice(_))));

    let mut e = good();
    e.patient_id = PatientId::new("P999");
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::UnknownPatient(_))));

    let mut e = good();
    e.parts.clear();
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::EmptyPayload)));

    let mut e = good();
    e.parts[0].bytes.clear();
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::EmptyPayload)));

    let mut e = good();
    e.client_schema_version = 7;
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::SchemaVersionUnsupported(7))));

    let hads13 = vec![PayloadPart { kind: PayloadKind::QuestionnaireItems, bytes: br#"{"instrument":"HADS","item_count":13,"items":[0,0,0,0,0,0,0,0,0,0,0,0,0]}"#.to_vec() }];
    let e = envelope("P001", AssessmentCode::Hads, at(0, 0), "tab-1", hads13);
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::InvalidPayload { kind: PayloadKind::QuestionnaireItems, .. })));

    // FSS items submitted under another code.
    let e = envelope("P001", AssessmentCode::Ess, at(0, 0), "tab-1", fss(&[1; 9]));
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::InvalidPayload { .. })));

    let e = envelope("P001", AssessmentCode::PamActivity, at(0, 0), "imu-1", vec![PayloadPart { kind: PayloadKind::ImuStream, bytes: b"not imu".to_vec() }]);
    assert!(matches!(h.gateway.submit_assessment(e), Err(GatewayError::InvalidPayload { kind: PayloadKind::ImuStream, .. })));

    assert_eq!(h.store.read().records().count(), 0);
    assert_eq!(h.store.get_blob(&ContentHash::of(&good().parts[0].bytes)).unwrap(), None);
}

#[test]
fn submission_json_parsing() {
    let e = envelope("P001", AssessmentCode::Fss, at(0, 0), "tab-1", fss(&[2; 9]));
    let json = serde_json::to_vec(&e).unwrap();
    assert_eq!(parse_submission(&json).unwrap(), e);

    let mut v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    v["code"] = "GRIP".into();
    let bad = serde_json::to_vec(&v).unwrap();
    assert!(matches!(parse_submission(&bad), Err(GatewayError::UnknownAssessmentCode(c)) if c == "GRIP"));
    assert!(matches!(parse_submission(b"{"), Err(GatewayError::Malformed(_))));
}

#[test]
fn compliance_single_arat() {
    let h = ready();
    let items = vec![1; Instrument::Arat.arity()];
    h.gateway.submit_assessment(envelope("P001", AssessmentCode::Arat, at(1, 1), "tab-1", vec![items_payload(Instrument::Arat, &items)])).unwrap();
    let week = IsoWeekId::of(NaiveDate::from_ymd_opt(2025, 1, 7).unwrap());
    let c = h.gateway.schedule_compliance(&PatientId::new("P001"), week).unwrap();
    let arat = c.rows.iter().find(|r| r.code == AssessmentCode::Arat).unwrap();
    assert_eq!((arat.expected, arat.captured, arat.ratio), (2, 1, 0.5));
    assert_eq!(c.rows.len(), registry().assessments().len());

    let empty = h.gateway.schedule_compliance(&PatientId::new("P001"), IsoWeekId::of(NaiveDate::from_ymd_opt(2025, 3, 3).unwrap())).unwrap();
    assert!(empty.rows.iter().all(|r| r.captured == 0 && r.ratio == 0.0));

    assert!(matches!(h.gateway.schedule_compliance(&PatientId::new("nobody"), week), Err(GatewayError::UnknownPatient(_))));
}

#[test]
fn compliance_matches_brute_force_count() {
    let h = ready();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Local times near midnight and Sunday/Monday boundaries matter most.
    let mut captured: Vec<(AssessmentCode, NaiveDate)> = Vec::new();
    for i in 0..150 {
        let t = at(rng.random_range(-2..16), rng.random_range(-2..26)) + Duration::minutes(i);
        let env = random_tablet(&mut rng, "P001", t);
        captured.push((env.code, t.date_naive()));
        h.gateway.submit_assessment(env).unwrap();
    }
    for i in 0..10 {
        let t = at(i, 3);
        let env = envelope("P001", if i % 2 == 0 { AssessmentCode::PamActivity } else { AssessmentCode::PamArmUse }, t, "imu-1", vec![PayloadPart { kind: PayloadKind::ImuStream, bytes: small_imu(i as u64, 1) }]);
        captured.push((env.code, t.date_naive()));
        h.gateway.submit_assessment(env).unwrap();
    }
    let mut day = NaiveDate::from_ymd_opt(2024, 12, 30).unwrap();
    while day < NaiveDate::from_ymd_opt(2025, 1, 27).unwrap() {
        let week = IsoWeekId::of(day);
        let c = h.gateway.schedule_compliance(&PatientId::new("P001"), week).unwrap();
        for row in &c.rows {
            let in_week = |d: &NaiveDate| IsoWeekId::of(*d) == week;
            let n = captured.iter().filter(|(code, d)| in_week(d) && if row.code.is_pam() { code.is_pam() } else { *code == row.code }).count() as u32;
            assert_eq!(row.captured, n, "{week} {}", row.code);
            let raw = n as f64 / row.expected as f64;
            assert_eq!(row.ratio, if row.code.is_pam() { raw.min(1.0) } else { raw });
        }
        day += Duration::days(7);
    }
}

#[test]
fn record_sealed_but_never_enqueued_is_shipped_again() {
    let h = Harness::in_memory();
    let orch = h.orchestrator(lhs_pipeline::NoFaults);
    let ids = populate(&h, &orch, 2, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let env = random_tablet(&mut rng, "P000", h.clock.now().with_timezone(&clinic_tz()));
    let rid = h.gateway.submit_assessment(env).unwrap().record_id;
    // The shipper dies after sealing: status moves on, no job exists.
    h.node.seal_record(&h.store, &rid, h.clock.now()).unwrap();
    assert_eq!(h.store.read().record(&rid).unwrap().status, RecordStatus::Encrypted);
    assert!(h.store.read().job_for_record(&rid).is_none());
    assert_eq!(h.ship_and_enqueue(&orch), 1);
    assert!(h.store.read().job_for_record(&rid).is_some());
    assert_eq!(h.ship_and_enqueue(&orch), 0);
    orch.run_until_idle("w").unwrap();
    for id in ids.iter().chain([&rid]) {
        assert_eq!(h.store.read().record(id).unwrap().status, RecordStatus::Reintegrated);
    }
}
