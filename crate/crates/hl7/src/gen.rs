//! Random message generators for round-trip testing.

use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, NaiveDate, TimeZone, Utc};
use lhs_core::registry::registry;
use lhs_core::{AffectedSide, ObservationResult, PatientId, PatientRecord, RecordId};
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::message::{Field, Hl7Message, Repetition, Segment};
use crate::oru::{build_oru, OruContext};

const ALPHABET: &[char] = &[
    'a', 'b', 'Z', '0', '7', ' ', '-', '.', '/', '|', '^', '~', '\\', '&', 'é', '#', ':', '\'',
];

/// Short string drawn from an alphabet rich in reserved characters.
pub fn nasty_string<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn random_field<R: Rng>(rng: &mut R) -> Field {
    let reps = rng.random_range(1..=2);
    Field(
        (0..reps)
            .map(|_| {
                let comps = rng.random_range(1..=3);
                Repetition(
                    (0..comps)
                        .map(|_| {
                            let subs = rng.random_range(1..=2);
                            (0..subs).map(|_| nasty_string(rng, 6)).collect()
                        })
                        .collect(),
                )
            })
            .collect(),
    )
}

fn random_time<R: Rng>(rng: &mut R) -> DateTime<FixedOffset> {
    let offset = FixedOffset::east_opt(rng.random_range(-12..=14) * 3600).unwrap();
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    (base + chrono::Duration::seconds(rng.random_range(0..3 * 365 * 86_400))).with_timezone(&offset)
}

/// A built ORU^R01 with random results plus opaque NTE and Z segments
/// carrying reserved characters. Returned in canonical form.
pub fn random_oru<R: Rng>(rng: &mut R, seq: usize) -> Hl7Message {
    let pid = format!("P{}{}", rng.random_range(0..10_000), nasty_string(rng, 4));
    let patient = PatientRecord::new(PatientId::new(pid.clone()), AffectedSide::Left, NaiveDate::from_ymd_opt(2025, 1, 6).unwrap());
    let metrics: Vec<_> = registry().metrics().collect();
    let n_records = rng.random_range(1..=3);
    let mut results = Vec::new();
    let mut times = BTreeMap::new();
    for r in 0..n_records {
        let record_id = RecordId::new(format!("rec-{seq}-{r}"));
        times.insert(record_id.clone(), random_time(rng));
        for _ in 0..rng.random_range(1..=4) {
            let m = metrics.choose(rng).unwrap();
            let value = m.min + (m.max - m.min) * rng.random::<f64>();
            results.push(ObservationResult {
                patient_id: patient.patient_id.clone(),
                source_record_id: record_id.clone(),
                metric_code: m.code.clone(),
                value,
                unit: m.unit.clone(),
                computed_at: random_time(rng).with_timezone(&Utc),
                derivation_version: "1.0.0".into(),
            });
        }
    }
    let ctx = OruContext { generated_at: Some(random_time(rng)), control_id: format!("{seq:08}"), record_times: times };
    let mut msg = build_oru(&patient, &results, &ctx).expect("generated results are mappable");
    for _ in 0..rng.random_range(0..=2) {
        let at = rng.random_range(2..=msg.segments.len());
        let id = if rng.random_bool(0.5) { "NTE" } else { "ZLH" };
        let fields = (0..rng.random_range(0..=4)).map(|_| random_field(rng)).collect();
        msg.segments.insert(at, Segment::new(id, fields));
    }
    msg.canonical()
}
