//! Result return to the EHR and the weekly extraction hand-off.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use lhs_core::registry::registry;
use lhs_core::{Clock, IsoWeekId, PatientId, RecordId};
use lhs_hl7::{build_oru, serialize_er7, weekly_extraction_job, EhrEndpoint, EndpointError, Hl7Message, OruContext, RecordCandidate, WeeklyReport};
use lhs_relay::{open_bytes, relay, Destination, Inbox, KeyStore, ParkingArea, RetryPolicy};
use lhs_store::{import_rows, ExportRow, ObsKey, Op, ReturnEntry, State, Store, StoreError};
use serde::{Deserialize, Serialize};

use crate::node::EncryptionNode;

/// Control id of the `n`-th return (1-based) for a patient-day.
pub fn daily_control_id(patient: &PatientId, date: NaiveDate, n: usize) -> String {
    format!("D{}-{patient}-{n}", date.format("%Y%m%d"))
}

/// The ORU^R01 for one patient-day: results of reintegrated records
/// captured that clinic-local day. With `only_new`, results already returned
/// are left out. `None` when there is nothing to report.
pub fn daily_oru(
    state: &State,
    patient: &PatientId,
    date: NaiveDate,
    generated_at: DateTime<Utc>,
    only_new: bool,
) -> Option<(Hl7Message, Vec<ObsKey>)> {
    let p = state.patient(patient)?;
    let mut results = Vec::new();
    let mut ctx = OruContext::default();
    let mut records: Vec<_> = state
        .records_of(patient)
        .filter(|r| r.local_date() == date && state.reintegration(&r.record_id).is_some())
        .collect();
    records.sort_by(|a, b| (a.captured_at, &a.record_id).cmp(&(b.captured_at, &b.record_id)));
    for r in records {
        for o in state.observations_of_record(&r.record_id) {
            if only_new && state.is_returned(&ObsKey::of(o)) {
                continue;
            }
            ctx.record_times.insert(r.record_id.clone(), r.captured_at);
            results.push(o.clone());
        }
    }
    if results.is_empty() {
        return None;
    }
    let n = state.returns().iter().filter(|e| &e.patient_id == patient && e.date == date).count() + 1;
    ctx.control_id = daily_control_id(patient, date, n);
    ctx.generated_at = Some(generated_at.fixed_offset());
    let keys = results.iter().map(ObsKey::of).collect();
    build_oru(p, &results, &ctx).ok().map(|m| (m, keys))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyReturnReport {
    pub date: Option<NaiveDate>,
    pub messages: usize,
    pub observations: usize,
    pub control_ids: Vec<String>,
    pub failures: Vec<String>,
}

/// Sends one ORU^R01 per patient with new results for `date` and records
/// what was sent. Patients whose push fails are retried on the next run.
pub fn return_daily(
    store: &Store,
    ehr: &dyn EhrEndpoint,
    date: NaiveDate,
    now: DateTime<Utc>,
) -> Result<DailyReturnReport, StoreError> {
    let mut report = DailyReturnReport { date: Some(date), ..Default::default() };
    let patients: Vec<PatientId> = store.read().patients().map(|p| p.patient_id.clone()).collect();
    for patient in patients {
        let Some((msg, keys)) = daily_oru(&store.read(), &patient, date, now, true) else { continue };
        let bytes = match serialize_er7(&msg) {
            Ok(b) => b,
            Err(e) => {
                report.failures.push(format!("{patient}: {e}"));
                continue;
            }
        };
        if let Err(e) = ehr.push_result(&bytes) {
            report.failures.push(format!("{patient}: {e}"));
            continue;
        }
        let control_id = msg.control_id().to_string();
        report.messages += 1;
        report.observations += keys.len();
        report.control_ids.push(control_id.clone());
        store.commit(vec![Op::MarkReturned {
            entry: ReturnEntry { patient_id: patient, date, message_control_id: control_id, at: now, observations: keys },
        }])?;
    }
    Ok(report)
}

/// Pulls a week from the EHR and relays each record candidate, sealed, to
/// the compute core.
#[allow(clippy::too_many_arguments)]
pub fn extract_weekly(
    source: &dyn EhrEndpoint,
    week: IsoWeekId,
    node: &EncryptionNode,
    dest: &dyn Destination,
    policy: &RetryPolicy,
    clock: &dyn Clock,
    parking: &dyn ParkingArea,
) -> Result<WeeklyReport, EndpointError> {
    weekly_extraction_job(source, week, &mut |c: &RecordCandidate| {
        let bytes = serde_json::to_vec(c).map_err(|e| e.to_string())?;
        let env = node
            .seal_bytes(&bytes, RecordId::new(c.source_record_id.clone()), clock.now())
            .map_err(|e| e.to_string())?;
        relay(&env.to_bytes(), dest, policy, clock, parking).map(|_| ()).map_err(|e| e.to_string())
    })
}

/// Rows for the candidate's observations. Candidates without a capture
/// time or whose metrics belong to no battery row cannot become records.
pub fn candidate_rows(c: &RecordCandidate) -> Result<Vec<ExportRow>, String> {
    let captured_at = c.observed_at.ok_or("candidate has no observation time")?;
    let mut rows = Vec::new();
    for o in &c.observations {
        let code = registry()
            .metric(&o.metric_code)
            .and_then(|m| m.assessment)
            .ok_or_else(|| format!("{} belongs to no assessment", o.metric_code))?;
        rows.push(ExportRow {
            patient_id: c.patient_id.clone(),
            record_id: RecordId::new(c.source_record_id.clone()),
            assessment_code: code,
            captured_at,
            local_date: captured_at.date_naive(),
            metric_code: o.metric_code.clone(),
            value: o.value,
            unit: o.unit.clone(),
            computed_at: o.computed_at.unwrap_or(captured_at).with_timezone(&Utc),
            derivation_version: o.derivation_version.clone(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateImport {
    pub envelopes: usize,
    pub observations_imported: usize,
    pub observations_skipped: usize,
    pub rejected: Vec<String>,
}

/// Opens relayed extraction candidates and imports their observations.
pub fn import_candidates(store: &Store, keys: &KeyStore, inbox: &Inbox) -> CandidateImport {
    let mut out = CandidateImport::default();
    let mut rows = Vec::new();
    for (id, bytes) in inbox.drain() {
        out.envelopes += 1;
        let parsed = open_bytes(&bytes, keys)
            .map_err(|e| e.to_string())
            .and_then(|(_, plain)| serde_json::from_slice::<RecordCandidate>(&plain).map_err(|e| e.to_string()))
            .and_then(|c| candidate_rows(&c));
        match parsed {
            Ok(r) => rows.extend(r),
            Err(e) => out.rejected.push(format!("{id}: {e}")),
        }
    }
    // One import per record keeps a bad candidate from blocking the rest.
    let mut by_record: BTreeMap<RecordId, Vec<ExportRow>> = BTreeMap::new();
    for r in rows {
        by_record.entry(r.record_id.clone()).or_default().push(r);
    }
    for (rid, rows) in by_record {
        match import_rows(store, &rows) {
            Ok(rep) => {
                out.observations_imported += rep.observations_imported;
                out.observations_skipped += rep.observations_skipped;
            }
            Err(e) => out.rejected.push(format!("{rid}: {e}")),
        }
    }
    out
}
