//! Random store contents with the facts needed by brute-force oracles.
//! Shared with the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Utc};
use lhs_core::registry::registry;
use lhs_core::{
    AffectedSide, AssessmentCode, AssessmentRecord, DeviceId, ObservationResult, PatientId, PatientRecord, RecordId,
    RecordStatus, StatusChange,
};
use lhs_store::{Op, Store};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 6, 0, 0, 0).unwrap()
}

/// What the generator planted, kept independently of the store.
#[derive(Debug, Default, Clone)]
pub struct Planted {
    pub patients: Vec<PatientId>,
    /// record -> (patient, code, local wall-clock time, utc offset seconds)
    pub records: BTreeMap<RecordId, (PatientId, AssessmentCode, NaiveDateTime, i32)>,
    pub observations: Vec<ObservationResult>,
}

impl Planted {
    pub fn local_day(&self, r: &RecordId) -> NaiveDate {
        self.records[r].2.date()
    }

    pub fn instant(&self, r: &RecordId) -> DateTime<Utc> {
        let (_, _, local, off) = &self.records[r];
        Utc.from_utc_datetime(&(*local - Duration::seconds(*off as i64)))
    }

    /// Distinct (patient, local day) pairs over PAM records that carry at
    /// least one observation.
    pub fn patient_days_with_observations(&self) -> BTreeSet<(PatientId, NaiveDate)> {
        self.observations
            .iter()
            .filter(|o| self.records[&o.source_record_id].1.is_pam())
            .map(|o| (o.patient_id.clone(), self.local_day(&o.source_record_id)))
            .collect()
    }
}

const OFFSETS_H: [i32; 5] = [0, 1, 2, -5, 9];

fn metrics_for(code: AssessmentCode) -> Vec<&'static lhs_core::MetricDefinition> {
    registry().metrics().filter(|m| m.assessment == Some(code)).collect()
}

/// Generates transactions: patients first, then one transaction per
/// record holding the record and its observations, until `n_obs`
/// observations exist. Capture instants are distinct per patient.
pub fn generate(seed: u64, n_patients: usize, n_obs: usize) -> (Vec<Vec<Op>>, Planted) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut txs = Vec::new();
    let mut planted = Planted::default();
    let mut ops = Vec::new();
    for p in 0..n_patients {
        let id = PatientId::new(format!("P{p:04}"));
        let mut rec = PatientRecord::new(id.clone(), AffectedSide::Left, NaiveDate::from_ymd_opt(2025, 1, 1).unwrap());
        rec.cohort_tags.insert(if p % 2 == 0 { "even".into() } else { "odd".into() });
        ops.push(Op::PutPatient { patient: rec });
        planted.patients.push(id);
    }
    txs.push(ops);
    let versions = ["1.0.0", "1.1.0"];
    let mut used_instants: BTreeSet<(usize, i64)> = BTreeSet::new();
    let mut n = 0usize;
    let mut r = 0usize;
    while n < n_obs {
        let p = rng.random_range(0..n_patients);
        let code = *AssessmentCode::ALL.choose(&mut rng).unwrap();
        let metrics = metrics_for(code);
        let off_h = *OFFSETS_H.choose(&mut rng).unwrap();
        // Distinct minute per patient keeps instants unique.
        let minute = loop {
            let m = rng.random_range(0..60 * 24 * 56);
            if used_instants.insert((p, m - off_h as i64 * 60)) {
                break m;
            }
        };
        let local = NaiveDate::from_ymd_opt(2025, 1, 6).unwrap().and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(minute);
        let offset = FixedOffset::east_opt(off_h * 3600).unwrap();
        let captured_at = offset.from_local_datetime(&local).unwrap();
        let record_id = RecordId::new(format!("R{r:06}"));
        r += 1;
        let patient_id = planted.patients[p].clone();
        let at = captured_at.with_timezone(&Utc);
        let mut tx = vec![Op::PutRecord {
            record: AssessmentRecord {
                record_id: record_id.clone(),
                patient_id: patient_id.clone(),
                code,
                captured_at,
                device_id: DeviceId::new("dev"),
                payloads: Vec::new(),
                status: RecordStatus::Captured,
                status_history: vec![StatusChange { status: RecordStatus::Captured, at }],
                duplicate_of: None,
            },
        }];
        planted.records.insert(record_id.clone(), (patient_id.clone(), code, local, off_h * 3600));
        for m in metrics {
            for v in versions.iter().take(if rng.random_bool(0.2) { 2 } else { 1 }) {
                if n >= n_obs {
                    break;
                }
                let value = if rng.random_bool(0.1) {
                    *[m.min, m.max].choose(&mut rng).unwrap()
                } else {
                    m.min + (m.max - m.min) * rng.random::<f64>()
                };
                let o = ObservationResult {
                    patient_id: patient_id.clone(),
                    source_record_id: record_id.clone(),
                    metric_code: m.code.clone(),
                    value,
                    unit: m.unit.clone(),
                    computed_at: at + Duration::milliseconds(rng.random_range(1..86_400_000)),
                    derivation_version: v.to_string(),
                };
                planted.observations.push(o.clone());
                tx.push(Op::PutObservation { observation: o });
                n += 1;
            }
        }
        txs.push(tx);
    }
    (txs, planted)
}

pub fn load(store: &Store, txs: &[Vec<Op>]) {
    for tx in txs {
        store.commit(tx.clone()).unwrap();
    }
}

/// Brute-force series oracle: filter, pick the latest computation per
/// record, sort by instant.
pub fn series_oracle(
    planted: &Planted,
    patient: &PatientId,
    metric: &str,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
) -> Vec<(DateTime<Utc>, f64)> {
    let mut best: BTreeMap<&RecordId, &ObservationResult> = BTreeMap::new();
    for o in &planted.observations {
        if &o.patient_id != patient || o.metric_code != metric {
            continue;
        }
        let t = planted.instant(&o.source_record_id);
        if from.is_some_and(|f| t < f) || to.is_some_and(|e| t > e) {
            continue;
        }
        let e = best.entry(&o.source_record_id).or_insert(o);
        if (o.computed_at, &o.derivation_version) > (e.computed_at, &e.derivation_version) {
            *e = o;
        }
    }
    let mut pts: Vec<_> = best.iter().map(|(r, o)| (planted.instant(r), o.value)).collect();
    pts.sort_by(|a, b| a.0.cmp(&b.0));
    pts
}
