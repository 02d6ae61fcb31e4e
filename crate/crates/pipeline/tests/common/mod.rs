//! A complete clinic-to-core setup on a virtual clock.

#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, TimeZone, Utc};
use lhs_core::payload::imu::{ImuSample, ImuWriter};
use lhs_core::payload::questionnaire::{Instrument, ItemVector, WalkTiming};
use lhs_core::submission::{DeviceDescriptor, DeviceKind, PayloadPart, SubmissionEnvelope};
use lhs_core::{AffectedSide, AssessmentCode, DeviceId, PatientId, PatientRecord, PayloadKind, RecordId, Side, VirtualClock};
use lhs_pipeline::{intake, ship_captured, EncryptionNode, Faults, Gateway, Orchestrator, OrchestratorConfig};
use lhs_relay::{Inbox, KeyStore, MemoryParking, NonceJournal, RetryPolicy};
use lhs_store::{Store, StoreOptions, SyncMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 6, 8, 0, 0).unwrap()
}

pub fn clinic_tz() -> FixedOffset {
    FixedOffset::east_opt(3600).unwrap()
}

pub struct Harness {
    pub clock: Arc<VirtualClock>,
    pub store: Arc<Store>,
    pub gateway: Gateway,
    pub node: EncryptionNode,
    pub keys: KeyStore,
    pub inbox: Inbox,
}

impl Harness {
    pub fn in_memory() -> Self {
        Self::with_store(Store::in_memory(), t0())
    }

    pub fn on_disk(dir: &std::path::Path) -> Self {
        Self::with_store(Store::open(dir, StoreOptions { sync: SyncMode::Flush }).unwrap(), t0())
    }

    pub fn with_store(store: Store, start: DateTime<Utc>) -> Self {
        let clock = Arc::new(VirtualClock::new(start));
        let store = Arc::new(store);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let keys = KeyStore::generate(&mut rng, start);
        Harness {
            gateway: Gateway::new(store.clone(), clock.clone()),
            node: EncryptionNode::with_seed(keys.clone(), NonceJournal::in_memory(), 7),
            keys,
            clock,
            store,
            inbox: Inbox::new(),
        }
    }

    pub fn orchestrator(&self, faults: impl Faults + 'static) -> Orchestrator {
        Orchestrator::new(self.store.clone(), self.clock.clone(), self.keys.clone(), OrchestratorConfig::default()).with_faults(faults)
    }

    pub fn patient(&self, id: &str, side: AffectedSide) {
        self.store.put_patient(PatientRecord::new(PatientId::new(id), side, NaiveDate::from_ymd_opt(2025, 1, 1).unwrap())).unwrap();
    }

    pub fn devices(&self) {
        for (id, kind) in [("tab-1", DeviceKind::Tablet), ("imu-1", DeviceKind::WristImuPair), ("cam-1", DeviceKind::Camera), ("mic-1", DeviceKind::Microphone)] {
            self.gateway
                .register_device(DeviceDescriptor {
                    device_id: DeviceId::new(id),
                    device_kind: kind,
                    firmware_version: "1.0".into(),
                    registered_at: t0(),
                })
                .unwrap();
        }
    }

    /// Seals captured records, relays them into the inbox and enqueues jobs.
    pub fn ship_and_enqueue(&self, orch: &Orchestrator) -> usize {
        let report = ship_captured(&self.store, &self.node, &self.inbox, &RetryPolicy::default(), &*self.clock, &MemoryParking::new());
        assert!(report.errors.is_empty() && report.parked.is_empty(), "{report:?}");
        let intake = intake(&self.store, orch, &self.inbox);
        assert!(intake.rejected.is_empty(), "{intake:?}");
        intake.enqueued
    }
}

pub fn items_payload(instrument: Instrument, items: &[i64]) -> PayloadPart {
    let kind = if instrument == Instrument::Arat { PayloadKind::ManualScores } else { PayloadKind::QuestionnaireItems };
    PayloadPart { kind, bytes: ItemVector::new(instrument, items).unwrap().to_payload() }
}

pub fn random_items<R: Rng>(rng: &mut R, instrument: Instrument) -> Vec<i64> {
    let (lo, hi) = instrument.item_range();
    (0..instrument.arity()).map(|_| rng.random_range(lo as i64..=hi as i64)).collect()
}

pub fn envelope(patient: &str, code: AssessmentCode, captured_at: DateTime<FixedOffset>, device: &str, parts: Vec<PayloadPart>) -> SubmissionEnvelope {
    SubmissionEnvelope {
        patient_id: PatientId::new(patient),
        code,
        captured_at,
        device_id: DeviceId::new(device),
        parts,
        client_schema_version: 1,
    }
}

pub const QUESTIONNAIRES: [(AssessmentCode, Instrument); 6] = [
    (AssessmentCode::Fss, Instrument::Fss),
    (AssessmentCode::Hads, Instrument::Hads),
    (AssessmentCode::Bdi2, Instrument::Bdi2),
    (AssessmentCode::Ess, Instrument::Ess),
    (AssessmentCode::Fsmc, Instrument::Fsmc),
    (AssessmentCode::Arat, Instrument::Arat),
];

/// A random tablet submission with valid items.
pub fn random_tablet<R: Rng>(rng: &mut R, patient: &str, at: DateTime<FixedOffset>) -> SubmissionEnvelope {
    let k = rng.random_range(0..QUESTIONNAIRES.len() + 1);
    if k == QUESTIONNAIRES.len() {
        let walk = WalkTiming { distance_m: 10.0, duration_s: rng.random_range(5.0..40.0) };
        let part = PayloadPart { kind: PayloadKind::ManualScores, bytes: walk.to_payload() };
        return envelope(patient, AssessmentCode::Walk10m, at, "tab-1", vec![part]);
    }
    let (code, instrument) = QUESTIONNAIRES[k];
    let items = random_items(rng, instrument);
    envelope(patient, code, at, "tab-1", vec![items_payload(instrument, &items)])
}

/// A short two-wrist recording at 2 Hz: jittered (worn, active) for the
/// whole span.
pub fn small_imu(seed: u64, minutes: i64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ImuWriter::new(2.0);
    for side in [Side::Left, Side::Right] {
        for k in 0..minutes * 120 {
            let mag = 1.0 + if k % 2 == 0 { 0.15 } else { 0.0 } + rng.random_range(-0.005..0.005);
            w.push(side, &ImuSample { t_ms: k * 500, accel: [0.0, 0.0, mag], gyro: [0.0; 3] });
        }
    }
    w.finish()
}

/// `n` patients and `jobs` tablet submissions spread over two weeks, all
/// shipped and enqueued.
pub fn populate(h: &Harness, orch: &Orchestrator, patients: usize, jobs: usize, seed: u64) -> Vec<RecordId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    h.devices();
    for p in 0..patients {
        h.patient(&format!("P{p:03}"), [AffectedSide::Left, AffectedSide::Right][p % 2]);
    }
    let mut ids = Vec::new();
    for i in 0..jobs {
        let p = format!("P{:03}", rng.random_range(0..patients));
        let at = (t0() + Duration::minutes(rng.random_range(0..14 * 24 * 60))).with_timezone(&clinic_tz());
        let env = random_tablet(&mut rng, &p, at);
        let env = if i % 50 == 0 {
            // An occasional wearable capture to exercise IMU processing.
            envelope(&p, AssessmentCode::PamActivity, at, "imu-1", vec![PayloadPart { kind: PayloadKind::ImuStream, bytes: small_imu(i as u64, 20) }])
        } else {
            env
        };
        ids.push(h.gateway.submit_assessment(env).unwrap().record_id);
    }
    assert_eq!(h.ship_and_enqueue(orch), jobs);
    ids
}

/// Latest timestamp recorded anywhere in job or record histories, so a
/// restarted virtual clock never runs backwards.
pub fn latest_instant(store: &Store) -> DateTime<Utc> {
    let st = store.read();
    let jobs = st.jobs().flat_map(|j| j.history.iter().map(|e| e.at).chain([j.updated_at, j.next_run_at]));
    let recs = st.records().flat_map(|r| r.status_history.iter().map(|s| s.at));
    jobs.chain(recs).max().unwrap_or_else(t0)
}
