//! In-memory materialization of the journal and the operations that change it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, NaiveDate, Utc};
use lhs_core::registry::registry;
use lhs_core::submission::DeviceDescriptor;
use lhs_core::{
    validate_transition, AssessmentRecord, ContentHash, DeviceId, ObservationResult, PatientId, PatientRecord,
    RecordId, RecordStatus, StatusChange,
};
use serde::{Deserialize, Serialize};

use crate::jobs::Job;
use crate::StoreError;

/// Identity of an observation: one value per record, metric and derivation version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObsKey {
    pub record_id: RecordId,
    pub metric_code: String,
    pub derivation_version: String,
}

impl ObsKey {
    pub fn of(o: &ObservationResult) -> Self {
        ObsKey {
            record_id: o.source_record_id.clone(),
            metric_code: o.metric_code.clone(),
            derivation_version: o.derivation_version.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reintegration {
    pub record_id: RecordId,
    pub at: DateTime<Utc>,
    pub message_control_id: String,
}

/// One daily ORU^R01 handed to the EHR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnEntry {
    pub patient_id: PatientId,
    pub date: NaiveDate,
    pub message_control_id: String,
    pub at: DateTime<Utc>,
    pub observations: Vec<ObsKey>,
}

/// A journal operation. A journal line carries one or more of these and is
/// applied all-or-nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    PutPatient { patient: PatientRecord },
    PutDevice { device: DeviceDescriptor },
    PutRecord { record: AssessmentRecord },
    SetStatus { record_id: RecordId, status: RecordStatus, at: DateTime<Utc> },
    PutObservation { observation: ObservationResult },
    PutJob { job: Job },
    MarkReintegrated { reintegration: Reintegration },
    MarkReturned { entry: ReturnEntry },
    ErasePatient { patient_id: PatientId, at: DateTime<Utc> },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct State {
    pub(crate) seq: u64,
    pub(crate) patients: BTreeMap<PatientId, PatientRecord>,
    pub(crate) devices: BTreeMap<DeviceId, DeviceDescriptor>,
    pub(crate) records: BTreeMap<RecordId, AssessmentRecord>,
    pub(crate) observations: BTreeMap<ObsKey, ObservationResult>,
    pub(crate) jobs: BTreeMap<String, Job>,
    pub(crate) reintegrations: BTreeMap<RecordId, Reintegration>,
    pub(crate) returns: Vec<ReturnEntry>,
    pub(crate) returned: BTreeSet<ObsKey>,
    pub(crate) erased: BTreeMap<PatientId, DateTime<Utc>>,
    // Derived indexes, rebuilt on load.
    pub(crate) records_by_patient: BTreeMap<PatientId, BTreeSet<RecordId>>,
    pub(crate) first_by_payloads: HashMap<Vec<ContentHash>, RecordId>,
    pub(crate) job_by_record: HashMap<RecordId, String>,
}

/// Serialized form of [`State`] used by snapshots.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SnapshotBody {
    pub format: String,
    pub version: u32,
    pub seq: u64,
    pub patients: Vec<PatientRecord>,
    pub devices: Vec<DeviceDescriptor>,
    pub records: Vec<AssessmentRecord>,
    pub observations: Vec<ObservationResult>,
    pub jobs: Vec<Job>,
    pub reintegrations: Vec<Reintegration>,
    pub returns: Vec<ReturnEntry>,
    pub erased: Vec<(PatientId, DateTime<Utc>)>,
}

pub(crate) const SNAPSHOT_FORMAT: &str = "lhs-snapshot";
pub(crate) const SNAPSHOT_VERSION: u32 = 1;

pub(crate) fn payload_key(record: &AssessmentRecord) -> Vec<ContentHash> {
    let mut k: Vec<ContentHash> = record.payloads.iter().map(|p| p.content_hash).collect();
    k.sort();
    k
}

impl State {
    pub(crate) fn to_snapshot(&self) -> SnapshotBody {
        SnapshotBody {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            seq: self.seq,
            patients: self.patients.values().cloned().collect(),
            devices: self.devices.values().cloned().collect(),
            records: self.records.values().cloned().collect(),
            observations: self.observations.values().cloned().collect(),
            jobs: self.jobs.values().cloned().collect(),
            reintegrations: self.reintegrations.values().cloned().collect(),
            returns: self.returns.clone(),
            erased: self.erased.iter().map(|(p, t)| (p.clone(), *t)).collect(),
        }
    }

    pub(crate) fn from_snapshot(s: SnapshotBody) -> Self {
        let mut st = State { seq: s.seq, ..Default::default() };
        st.patients = s.patients.into_iter().map(|p| (p.patient_id.clone(), p)).collect();
        st.devices = s.devices.into_iter().map(|d| (d.device_id.clone(), d)).collect();
        st.records = s.records.into_iter().map(|r| (r.record_id.clone(), r)).collect();
        st.observations = s.observations.into_iter().map(|o| (ObsKey::of(&o), o)).collect();
        st.jobs = s.jobs.into_iter().map(|j| (j.job_id.clone(), j)).collect();
        st.reintegrations = s.reintegrations.into_iter().map(|r| (r.record_id.clone(), r)).collect();
        st.returned = s.returns.iter().flat_map(|e| e.observations.iter().cloned()).collect();
        st.returns = s.returns;
        st.erased = s.erased.into_iter().collect();
        st.rebuild_indexes();
        st
    }

    fn rebuild_indexes(&mut self) {
        self.records_by_patient.clear();
        self.first_by_payloads.clear();
        self.job_by_record.clear();
        for r in self.records.values() {
            self.records_by_patient.entry(r.patient_id.clone()).or_default().insert(r.record_id.clone());
        }
        // Lowest record id wins so the index is independent of replay order.
        for r in self.records.values() {
            if !r.payloads.is_empty() {
                self.first_by_payloads.entry(payload_key(r)).or_insert_with(|| r.record_id.clone());
            }
        }
        for j in self.jobs.values() {
            self.job_by_record.insert(j.record_id.clone(), j.job_id.clone());
        }
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Validates a transaction without changing anything.
    pub(crate) fn check(&self, ops: &[Op]) -> Result<(), StoreError> {
        let mut ov = Overlay::default();
        for op in ops {
            self.check_one(op, &mut ov)?;
        }
        Ok(())
    }

    fn patient_live(&self, ov: &Overlay, id: &PatientId) -> bool {
        !ov.erased.contains(id) && (self.patients.contains_key(id) || ov.patients.contains(id))
    }

    fn record_patient<'a>(&'a self, ov: &'a Overlay, id: &RecordId) -> Option<&'a PatientId> {
        if let Some(p) = ov.records.get(id) {
            return (!ov.erased.contains(p)).then_some(p);
        }
        let r = self.records.get(id)?;
        (!ov.erased.contains(&r.patient_id)).then_some(&r.patient_id)
    }

    fn record_status(&self, ov: &Overlay, id: &RecordId) -> Option<(RecordStatus, DateTime<Utc>)> {
        if let Some(s) = ov.status.get(id) {
            return Some(*s);
        }
        let r = self.records.get(id)?;
        let at = r.status_history.last().map(|c| c.at)?;
        Some((r.status, at))
    }

    fn check_one(&self, op: &Op, ov: &mut Overlay) -> Result<(), StoreError> {
        use StoreError::*;
        match op {
            Op::PutPatient { patient } => {
                patient.validate().map_err(|e| Integrity(e.to_string()))?;
                let id = &patient.patient_id;
                if self.erased.contains_key(id) || ov.erased.contains(id) {
                    return Err(PatientErased(id.clone()));
                }
                if self.patients.contains_key(id) || !ov.patients.insert(id.clone()) {
                    return Err(DuplicatePatient(id.clone()));
                }
            }
            Op::PutDevice { device } => {
                if device.device_id.0.trim().is_empty() {
                    return Err(Integrity("device id must not be empty".into()));
                }
                if self.devices.contains_key(&device.device_id) || !ov.devices.insert(device.device_id.clone()) {
                    return Err(DuplicateDevice(device.device_id.clone()));
                }
            }
            Op::PutRecord { record } => {
                if !self.patient_live(ov, &record.patient_id) {
                    return Err(UnknownPatient(record.patient_id.clone()));
                }
                if self.records.contains_key(&record.record_id) || ov.records.contains_key(&record.record_id) {
                    return Err(DuplicateRecord(record.record_id.clone()));
                }
                if !record.history_is_valid() {
                    return Err(Integrity(format!("record {} has an invalid status history", record.record_id)));
                }
                let last = record.status_history.last().map(|c| c.at).expect("valid history is non-empty");
                ov.records.insert(record.record_id.clone(), record.patient_id.clone());
                ov.status.insert(record.record_id.clone(), (record.status, last));
            }
            Op::SetStatus { record_id, status, at } => {
                let (from, prev) = self.record_status(ov, record_id).ok_or_else(|| UnknownRecord(record_id.clone()))?;
                if self.record_patient(ov, record_id).is_none() {
                    return Err(UnknownRecord(record_id.clone()));
                }
                if !validate_transition(from, *status) {
                    return Err(IllegalTransition { record_id: record_id.clone(), from, to: *status });
                }
                if *at < prev {
                    return Err(Integrity(format!("status time {at} precedes {prev} on {record_id}")));
                }
                ov.status.insert(record_id.clone(), (*status, *at));
            }
            Op::PutObservation { observation: o } => {
                let owner = self
                    .record_patient(ov, &o.source_record_id)
                    .ok_or_else(|| UnknownRecord(o.source_record_id.clone()))?;
                if owner != &o.patient_id {
                    return Err(Integrity(format!(
                        "observation patient {} differs from record owner {owner}",
                        o.patient_id
                    )));
                }
                let def = registry()
                    .metric(&o.metric_code)
                    .ok_or_else(|| Integrity(format!("unregistered metric {}", o.metric_code)))?;
                if def.unit != o.unit {
                    return Err(Integrity(format!("{} unit is {}, not {}", o.metric_code, def.unit, o.unit)));
                }
                if !def.contains(o.value) {
                    return Err(Integrity(format!("{} value {} outside [{}, {}]", o.metric_code, o.value, def.min, def.max)));
                }
                let key = ObsKey::of(o);
                if self.observations.contains_key(&key) || !ov.observations.insert(key.clone()) {
                    return Err(AlreadyStored(key));
                }
            }
            Op::PutJob { job } => {
                if self.record_patient(ov, &job.record_id).is_none() {
                    return Err(UnknownRecord(job.record_id.clone()));
                }
                let existing = self.job_by_record.get(&job.record_id).or(ov.job_by_record.get(&job.record_id));
                if let Some(existing) = existing {
                    if existing != &job.job_id {
                        return Err(Integrity(format!("record {} already has job {existing}", job.record_id)));
                    }
                }
                ov.job_by_record.insert(job.record_id.clone(), job.job_id.clone());
            }
            Op::MarkReintegrated { reintegration: r } => {
                if self.record_patient(ov, &r.record_id).is_none() {
                    return Err(UnknownRecord(r.record_id.clone()));
                }
                if self.reintegrations.contains_key(&r.record_id) || !ov.reintegrated.insert(r.record_id.clone()) {
                    return Err(AlreadyReintegrated(r.record_id.clone()));
                }
            }
            Op::MarkReturned { entry } => {
                if !self.patient_live(ov, &entry.patient_id) {
                    return Err(UnknownPatient(entry.patient_id.clone()));
                }
                for k in &entry.observations {
                    if !self.observations.contains_key(k) && !ov.observations.contains(k) {
                        return Err(Integrity(format!("returned observation {k:?} is not stored")));
                    }
                    if self.returned.contains(k) || !ov.returned.insert(k.clone()) {
                        return Err(Integrity(format!("observation {k:?} was already returned")));
                    }
                }
            }
            Op::ErasePatient { patient_id, .. } => {
                if !self.patient_live(ov, patient_id) {
                    return Err(UnknownPatient(patient_id.clone()));
                }
                ov.erased.insert(patient_id.clone());
            }
        }
        Ok(())
    }

    /// Applies a checked operation. Tolerates dangling references so that
    /// replay never panics.
    pub(crate) fn apply(&mut self, op: Op) {
        match op {
            Op::PutPatient { patient } => {
                self.patients.insert(patient.patient_id.clone(), patient);
            }
            Op::PutDevice { device } => {
                self.devices.insert(device.device_id.clone(), device);
            }
            Op::PutRecord { record } => {
                self.records_by_patient.entry(record.patient_id.clone()).or_default().insert(record.record_id.clone());
                if !record.payloads.is_empty() {
                    self.first_by_payloads.entry(payload_key(&record)).or_insert_with(|| record.record_id.clone());
                }
                self.records.insert(record.record_id.clone(), record);
            }
            Op::SetStatus { record_id, status, at } => {
                if let Some(r) = self.records.get_mut(&record_id) {
                    r.status = status;
                    r.status_history.push(StatusChange { status, at });
                }
            }
            Op::PutObservation { observation } => {
                self.observations.insert(ObsKey::of(&observation), observation);
            }
            Op::PutJob { job } => {
                self.job_by_record.insert(job.record_id.clone(), job.job_id.clone());
                self.jobs.insert(job.job_id.clone(), job);
            }
            Op::MarkReintegrated { reintegration } => {
                self.reintegrations.insert(reintegration.record_id.clone(), reintegration);
            }
            Op::MarkReturned { entry } => {
                self.returned.extend(entry.observations.iter().cloned());
                self.returns.push(entry);
            }
            Op::ErasePatient { patient_id, at } => self.erase(&patient_id, at),
        }
    }

    fn erase(&mut self, patient_id: &PatientId, at: DateTime<Utc>) {
        self.patients.remove(patient_id);
        self.erased.insert(patient_id.clone(), at);
        let records = self.records_by_patient.remove(patient_id).unwrap_or_default();
        for rid in &records {
            self.records.remove(rid);
            self.reintegrations.remove(rid);
            if let Some(job) = self.job_by_record.remove(rid) {
                self.jobs.remove(&job);
            }
        }
        self.observations.retain(|k, _| !records.contains(&k.record_id));
        self.returned.retain(|k| !records.contains(&k.record_id));
        self.returns.retain(|e| &e.patient_id != patient_id);
        self.first_by_payloads.retain(|_, r| !records.contains(r));
        // Another record with the same payloads may now be the first.
        let rebuild: Vec<_> = self.records.values().filter(|r| !r.payloads.is_empty()).map(|r| (payload_key(r), r.record_id.clone())).collect();
        for (k, r) in rebuild {
            self.first_by_payloads.entry(k).or_insert(r);
        }
    }

    /// Blobs referenced by a patient's records and jobs.
    pub(crate) fn blobs_of_patient(&self, patient_id: &PatientId) -> Vec<ContentHash> {
        let mut out = Vec::new();
        for rid in self.records_by_patient.get(patient_id).into_iter().flatten() {
            if let Some(r) = self.records.get(rid) {
                out.extend(r.payloads.iter().map(|p| p.content_hash));
            }
            if let Some(j) = self.job_by_record.get(rid).and_then(|j| self.jobs.get(j)) {
                out.extend(j.blobs().copied());
            }
        }
        out
    }

    /// True when some other live record still references the blob.
    pub fn blob_referenced(&self, hash: &ContentHash) -> bool {
        self.records.values().any(|r| r.payloads.iter().any(|p| &p.content_hash == hash))
            || self.jobs.values().any(|j| j.blobs().any(|b| b == hash))
    }
}

#[derive(Default)]
struct Overlay {
    patients: HashSet<PatientId>,
    devices: HashSet<DeviceId>,
    records: HashMap<RecordId, PatientId>,
    status: HashMap<RecordId, (RecordStatus, DateTime<Utc>)>,
    observations: HashSet<ObsKey>,
    job_by_record: HashMap<RecordId, String>,
    reintegrated: HashSet<RecordId>,
    returned: HashSet<ObsKey>,
    erased: HashSet<PatientId>,
}
