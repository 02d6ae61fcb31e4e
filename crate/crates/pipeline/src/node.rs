//! The encryption node on the clinic side and the compute core's intake.
//!
//! The node bundles a captured record's payloads, seals the bundle and
//! relays the envelope. The core accepts envelopes into an idempotent inbox,
//! stores them as blobs and enqueues one job per record.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use lhs_core::payload::{encode_bundle, BundlePart};
use lhs_core::{Clock, RecordId, RecordStatus};
use lhs_relay::{
    relay, seal, Destination, Inbox, KeyId, KeyStore, NonceJournal, ParkingArea, RelayError, RetryPolicy,
    SealError, SealedEnvelope,
};
use lhs_store::{Store, StoreError};
use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::orchestrator::{Orchestrator, OrchestratorError};

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("record {record_id} is {status}, not captured")]
    NotCaptured { record_id: RecordId, status: RecordStatus },
    #[error("payload blob {0} is missing")]
    MissingBlob(String),
    #[error(transparent)]
    Seal(#[from] SealError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub struct EncryptionNode {
    keys: RwLock<KeyStore>,
    journal: NonceJournal,
    rng: Mutex<StdRng>,
}

impl EncryptionNode {
    pub fn new(keys: KeyStore, journal: NonceJournal) -> Self {
        EncryptionNode { keys: RwLock::new(keys), journal, rng: Mutex::new(StdRng::from_os_rng()) }
    }

    /// Deterministic nonce prefixes for reproducible test runs.
    pub fn with_seed(keys: KeyStore, journal: NonceJournal, seed: u64) -> Self {
        EncryptionNode { keys: RwLock::new(keys), journal, rng: Mutex::new(StdRng::seed_from_u64(seed)) }
    }

    pub fn keys(&self) -> RwLockReadGuard<'_, KeyStore> {
        self.keys.read()
    }

    pub fn journal(&self) -> &NonceJournal {
        &self.journal
    }

    pub fn rotate(&self, at: DateTime<Utc>) -> KeyId {
        let mut rng = self.rng.lock();
        self.keys.write().rotate(&mut *rng, at)
    }

    pub fn seal_bytes(&self, plaintext: &[u8], record_id: RecordId, now: DateTime<Utc>) -> Result<SealedEnvelope, SealError> {
        let keys = self.keys.read();
        let mut rng = self.rng.lock();
        seal(plaintext, record_id, now, &keys, &self.journal, &mut *rng)
    }

    /// Seals a captured record's payload bundle and marks it encrypted.
    pub fn seal_record(&self, store: &Store, record_id: &RecordId, now: DateTime<Utc>) -> Result<Vec<u8>, NodeError> {
        let (record, stranded) = {
            let st = store.read();
            let record = st.record(record_id).cloned().ok_or_else(|| NodeError::UnknownRecord(record_id.clone()))?;
            let stranded = is_stranded(&st, &record);
            (record, stranded)
        };
        if record.status != RecordStatus::Captured && !stranded {
            return Err(NodeError::NotCaptured { record_id: record_id.clone(), status: record.status });
        }
        let mut parts = Vec::with_capacity(record.payloads.len());
        for p in &record.payloads {
            let bytes = store.get_blob(&p.content_hash)?.ok_or_else(|| NodeError::MissingBlob(p.content_hash.to_hex()))?;
            parts.push(BundlePart { payload_id: p.payload_id.clone(), kind: p.kind, bytes });
        }
        let env = self.seal_bytes(&encode_bundle(&parts), record_id.clone(), now)?;
        if !stranded {
            store.set_status(record_id.clone(), RecordStatus::Encrypted, now)?;
        }
        Ok(env.to_bytes())
    }
}

/// Sealed but never enqueued: the shipper stopped between sealing and
/// intake. Such records are sealed again.
fn is_stranded(state: &lhs_store::State, record: &lhs_core::AssessmentRecord) -> bool {
    record.status == RecordStatus::Encrypted && state.job_for_record(&record.record_id).is_none()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShipReport {
    pub sealed: usize,
    pub delivered: usize,
    pub parked: Vec<String>,
    pub errors: Vec<String>,
}

/// Seals every captured record and relays it to `dest`.
pub fn ship_captured(
    store: &Store,
    node: &EncryptionNode,
    dest: &dyn Destination,
    policy: &RetryPolicy,
    clock: &dyn Clock,
    parking: &dyn ParkingArea,
) -> ShipReport {
    ship_captured_batch(store, node, dest, policy, clock, parking, usize::MAX)
}

/// Like [`ship_captured`] but stops after `max` records, so callers can
/// bound how many sealed envelopes sit in memory at once.
pub fn ship_captured_batch(
    store: &Store,
    node: &EncryptionNode,
    dest: &dyn Destination,
    policy: &RetryPolicy,
    clock: &dyn Clock,
    parking: &dyn ParkingArea,
    max: usize,
) -> ShipReport {
    let st = store.read();
    let captured: Vec<RecordId> = st
        .records()
        .filter(|r| r.status == RecordStatus::Captured || is_stranded(&st, r))
        .take(max)
        .map(|r| r.record_id.clone())
        .collect();
    drop(st);
    let mut report = ShipReport::default();
    for rid in captured {
        let bytes = match node.seal_record(store, &rid, clock.now()) {
            Ok(b) => b,
            Err(e) => {
                report.errors.push(format!("{rid}: {e}"));
                continue;
            }
        };
        report.sealed += 1;
        match relay(&bytes, dest, policy, clock, parking) {
            Ok(_) => report.delivered += 1,
            Err(RelayError::DeliveryExhausted { receipt }) => report.parked.push(receipt.envelope_id),
            Err(e) => report.errors.push(format!("{rid}: {e}")),
        }
    }
    report
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntakeReport {
    pub received: usize,
    pub enqueued: usize,
    pub rejected: Vec<String>,
}

/// Moves delivered envelopes from the inbox into the job queue.
pub fn intake(store: &Arc<Store>, orchestrator: &Orchestrator, inbox: &Inbox) -> IntakeReport {
    let mut report = IntakeReport::default();
    for (envelope_id, bytes) in inbox.drain() {
        report.received += 1;
        let record_id = match SealedEnvelope::from_bytes(&bytes) {
            Ok(env) => env.manifest.record_id,
            Err(e) => {
                report.rejected.push(format!("{envelope_id}: {e}"));
                continue;
            }
        };
        let outcome = store
            .put_blob(&bytes)
            .map_err(OrchestratorError::from)
            .and_then(|h| orchestrator.enqueue(&record_id, Some(h)));
        match outcome {
            Ok(_) => report.enqueued += 1,
            Err(e) => report.rejected.push(format!("{envelope_id}: {e}")),
        }
    }
    report
}
