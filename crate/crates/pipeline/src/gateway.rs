//! Ingestion gateway: validates submissions from capture apps, stores and
//! hashes payloads, and creates captured records.

use std::collections::BTreeMap;
use std::sync::Arc;

use lhs_core::payload::imu::parse_imu;
use lhs_core::payload::questionnaire::parse_tablet_payload;
use lhs_core::registry::registry;
use lhs_core::submission::{DeviceDescriptor, SubmissionEnvelope, SUPPORTED_CLIENT_SCHEMA_VERSIONS};
use lhs_core::{
    AssessmentCode, AssessmentRecord, Clock, ContentHash, DeviceId, IsoWeekId, PatientId, PayloadKind, PayloadRef,
    RecordId, RecordStatus, StatusChange,
};
use lhs_store::{blob_uri, Op, Store, StoreError};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("malformed submission: {0}")]
    Malformed(String),
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("device {0} already registered")]
    DuplicateDevice(DeviceId),
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("unknown assessment code {0:?}")]
    UnknownAssessmentCode(String),
    #[error("{kind} payloads are not accepted for {code}")]
    IllegalPayloadKind { code: AssessmentCode, kind: PayloadKind },
    #[error("submission carries no payload bytes")]
    EmptyPayload,
    #[error("client schema version {0} is not supported")]
    SchemaVersionUnsupported(u32),
    #[error("invalid {kind} payload: {detail}")]
    InvalidPayload { kind: PayloadKind, detail: String },
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for GatewayError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::DuplicateDevice(d) => GatewayError::DuplicateDevice(d),
            StoreError::UnknownPatient(p) => GatewayError::UnknownPatient(p),
            other => GatewayError::Store(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionReceipt {
    pub record_id: RecordId,
    pub content_hashes: Vec<ContentHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<RecordId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRow {
    pub code: AssessmentCode,
    pub expected: u32,
    pub captured: u32,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compliance {
    pub patient_id: PatientId,
    pub week: IsoWeekId,
    pub rows: Vec<ComplianceRow>,
}

/// Parses submission JSON, reporting an unknown assessment code as such
/// rather than as a generic parse failure.
pub fn parse_submission(bytes: &[u8]) -> Result<SubmissionEnvelope, GatewayError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    if let Some(code) = value.get("code").and_then(|c| c.as_str()) {
        if code.parse::<AssessmentCode>().is_err() {
            return Err(GatewayError::UnknownAssessmentCode(code.to_string()));
        }
    }
    serde_json::from_value(value).map_err(|e| GatewayError::Malformed(e.to_string()))
}

/// Checks payload bytes against the format of their kind and the code.
fn check_part(code: AssessmentCode, kind: PayloadKind, bytes: &[u8]) -> Result<(), GatewayError> {
    let invalid = |detail: String| GatewayError::InvalidPayload { kind, detail };
    match kind {
        PayloadKind::ImuStream => {
            parse_imu(bytes).map_err(|e| invalid(e.to_string()))?;
        }
        PayloadKind::QuestionnaireItems | PayloadKind::ManualScores => {
            let p = parse_tablet_payload(bytes).map_err(|e| invalid(e.to_string()))?;
            if !p.instrument_code().eq_ignore_ascii_case(code.as_str()) {
                return Err(invalid(format!("{} items submitted as {code}", p.instrument_code())));
            }
        }
        PayloadKind::AudioBlob | PayloadKind::VideoBlob => {}
    }
    Ok(())
}

pub struct Gateway {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    // Serializes blob writes with the record commit so a failed commit can
    // remove exactly the blobs it introduced.
    submit_lock: Mutex<()>,
}

impl Gateway {
    pub fn new(store: Arc<Store>, clock: Arc<dyn Clock>) -> Self {
        Gateway { store, clock, submit_lock: Mutex::new(()) }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn register_device(&self, descriptor: DeviceDescriptor) -> Result<DeviceId, GatewayError> {
        let id = descriptor.device_id.clone();
        self.store.put_device(descriptor)?;
        Ok(id)
    }

    pub fn submit_assessment(&self, envelope: SubmissionEnvelope) -> Result<SubmissionReceipt, GatewayError> {
        if !SUPPORTED_CLIENT_SCHEMA_VERSIONS.contains(&envelope.client_schema_version) {
            return Err(GatewayError::SchemaVersionUnsupported(envelope.client_schema_version));
        }
        {
            let st = self.store.read();
            if st.device(&envelope.device_id).is_none() {
                return Err(GatewayError::UnknownDevice(envelope.device_id));
            }
            if st.patient(&envelope.patient_id).is_none() {
                return Err(GatewayError::UnknownPatient(envelope.patient_id));
            }
        }
        if envelope.parts.is_empty() || envelope.parts.iter().any(|p| p.bytes.is_empty()) {
            return Err(GatewayError::EmptyPayload);
        }
        let allowed = registry().assessment(envelope.code).allowed_payload_kinds();
        for p in &envelope.parts {
            if !allowed.contains(&p.kind) {
                return Err(GatewayError::IllegalPayloadKind { code: envelope.code, kind: p.kind });
            }
        }
        for p in &envelope.parts {
            check_part(envelope.code, p.kind, &p.bytes)?;
        }
        let hashes: Vec<ContentHash> = envelope.parts.iter().map(|p| ContentHash::of(&p.bytes)).collect();

        let _guard = self.submit_lock.lock();
        let now = self.clock.now();
        let (record_id, duplicate_of) = {
            let st = self.store.read();
            (RecordId::new(format!("R{:010}", st.seq() + 1)), st.record_with_payloads(&hashes).cloned())
        };
        let mut fresh = Vec::new();
        for (p, h) in envelope.parts.iter().zip(&hashes) {
            if self.store.get_blob(h)?.is_none() {
                fresh.push(*h);
            }
            self.store.put_blob(&p.bytes)?;
        }
        let payloads = envelope
            .parts
            .iter()
            .zip(&hashes)
            .enumerate()
            .map(|(i, (p, h))| PayloadRef {
                payload_id: format!("{record_id}-{}", i + 1),
                kind: p.kind,
                content_hash: *h,
                byte_length: p.bytes.len() as u64,
                uri: blob_uri(h),
            })
            .collect();
        let record = AssessmentRecord {
            record_id: record_id.clone(),
            patient_id: envelope.patient_id,
            code: envelope.code,
            captured_at: envelope.captured_at,
            device_id: envelope.device_id,
            payloads,
            status: RecordStatus::Captured,
            status_history: vec![StatusChange { status: RecordStatus::Captured, at: now }],
            duplicate_of: duplicate_of.clone(),
        };
        if let Err(e) = self.store.commit(vec![Op::PutRecord { record }]) {
            for h in &fresh {
                let _ = self.store.delete_blob(h);
            }
            return Err(e.into());
        }
        Ok(SubmissionReceipt { record_id, content_hashes: hashes, duplicate_of })
    }

    pub fn schedule_compliance(&self, patient_id: &PatientId, week: IsoWeekId) -> Result<Compliance, GatewayError> {
        schedule_compliance(&self.store.read(), patient_id, week)
    }
}

/// Expected captures per code come from the battery; captured counts are a
/// scan of the patient's records in the clinic-local week. Both PAM codes
/// share one capture, so each counts every PAM record and saturates at 1.
pub fn schedule_compliance(
    state: &lhs_store::State,
    patient_id: &PatientId,
    week: IsoWeekId,
) -> Result<Compliance, GatewayError> {
    if state.patient(patient_id).is_none() {
        return Err(GatewayError::UnknownPatient(patient_id.clone()));
    }
    let mut counts: BTreeMap<AssessmentCode, u32> = BTreeMap::new();
    let mut pam = 0;
    for r in state.records_in_week(patient_id, week) {
        *counts.entry(r.code).or_default() += 1;
        if r.code.is_pam() {
            pam += 1;
        }
    }
    let rows = registry()
        .assessments()
        .iter()
        .map(|def| {
            let expected = def.per_week;
            let (captured, ratio) = if def.code.is_pam() {
                (pam, (pam as f64 / expected as f64).min(1.0))
            } else {
                let c = counts.get(&def.code).copied().unwrap_or(0);
                (c, c as f64 / expected as f64)
            };
            ComplianceRow { code: def.code, expected, captured, ratio }
        })
        .collect();
    Ok(Compliance { patient_id: patient_id.clone(), week, rows })
}
