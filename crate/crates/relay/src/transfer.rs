//! At-least-once delivery with exponential backoff, parking of exhausted
//! envelopes and an idempotent receiving inbox.

use std::collections::{HashSet, VecDeque};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use lhs_core::Clock;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::envelope::peek_envelope_id;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeliveryError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("rejected: {0}")]
    Permanent(String),
}

/// Receiving side of a relay.
pub trait Destination: Send + Sync {
    fn deliver(&self, envelope_id: &str, bytes: &[u8]) -> Result<(), DeliveryError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_ms: u64,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base_ms: 1_000, factor: 2, max_attempts: 5 }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt `n` (1-based): base * factor^(n-1).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let mult = (self.factor as u64).saturating_pow(attempt.saturating_sub(1));
        Duration::milliseconds(self.base_ms.saturating_mul(mult).min(i64::MAX as u64) as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Delivered,
    Exhausted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: u32,
    pub at: DateTime<Utc>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReceipt {
    pub envelope_id: String,
    pub attempts: Vec<Attempt>,
    pub status: DeliveryStatus,
}

impl TransferReceipt {
    pub fn attempt_count(&self) -> u32 {
        self.attempts.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RelayError {
    #[error("delivery of {} failed after {} attempts", receipt.envelope_id, receipt.attempts.len())]
    DeliveryExhausted { receipt: TransferReceipt },
    #[error("parking failed: {0}")]
    Park(String),
}

/// Envelopes that could not be delivered, retained for dead-letter handling.
pub trait ParkingArea: Send + Sync {
    fn park(&self, envelope_id: &str, bytes: &[u8], receipt: &TransferReceipt) -> Result<(), String>;
}

#[derive(Debug, Default)]
pub struct MemoryParking {
    parked: Mutex<Vec<(String, Vec<u8>, TransferReceipt)>>,
}

impl MemoryParking {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parked(&self) -> Vec<(String, Vec<u8>, TransferReceipt)> {
        self.parked.lock().clone()
    }
}

impl ParkingArea for MemoryParking {
    fn park(&self, envelope_id: &str, bytes: &[u8], receipt: &TransferReceipt) -> Result<(), String> {
        self.parked.lock().push((envelope_id.to_string(), bytes.to_vec(), receipt.clone()));
        Ok(())
    }
}

/// Parks as `<id>.lhse` plus `<id>.receipt.json` in a directory.
#[derive(Debug, Clone)]
pub struct DirParking {
    pub root: PathBuf,
}

impl DirParking {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirParking { root: root.into() }
    }

    pub fn list(&self) -> std::io::Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        if !self.root.exists() {
            return Ok(out);
        }
        for entry in std::fs::read_dir(&self.root)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "lhse") {
                let id = path.file_stem().unwrap().to_string_lossy().into_owned();
                out.push((id, std::fs::read(&path)?));
            }
        }
        out.sort();
        Ok(out)
    }
}

impl ParkingArea for DirParking {
    fn park(&self, envelope_id: &str, bytes: &[u8], receipt: &TransferReceipt) -> Result<(), String> {
        let run = || -> std::io::Result<()> {
            std::fs::create_dir_all(&self.root)?;
            write_atomic(&self.root.join(format!("{envelope_id}.lhse")), bytes)?;
            let json = serde_json::to_vec_pretty(receipt).expect("receipt serializes");
            write_atomic(&self.root.join(format!("{envelope_id}.receipt.json")), &json)
        };
        run().map_err(|e| e.to_string())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

/// Delivers `bytes` with retries. Transient errors back off by the policy;
/// a permanent error stops at once. Undelivered envelopes are parked
/// before `DeliveryExhausted` is returned.
pub fn relay(
    bytes: &[u8],
    dest: &dyn Destination,
    policy: &RetryPolicy,
    clock: &dyn Clock,
    parking: &dyn ParkingArea,
) -> Result<TransferReceipt, RelayError> {
    let envelope_id = peek_envelope_id(bytes).unwrap_or_else(|| "unidentified".into());
    let mut attempts = Vec::new();
    let max = policy.max_attempts.max(1);
    let mut status = DeliveryStatus::Exhausted;
    for n in 1..=max {
        let at = clock.now();
        match dest.deliver(&envelope_id, bytes) {
            Ok(()) => {
                attempts.push(Attempt { attempt: n, at, error: None });
                status = DeliveryStatus::Delivered;
                break;
            }
            Err(e) => {
                let permanent = matches!(e, DeliveryError::Permanent(_));
                attempts.push(Attempt { attempt: n, at, error: Some(e.to_string()) });
                if permanent {
                    status = DeliveryStatus::Rejected;
                    break;
                }
                if n < max {
                    clock.sleep_until(at + policy.delay_after(n));
                }
            }
        }
    }
    let receipt = TransferReceipt { envelope_id, attempts, status };
    if status == DeliveryStatus::Delivered {
        return Ok(receipt);
    }
    parking.park(&receipt.envelope_id, bytes, &receipt).map_err(RelayError::Park)?;
    Err(RelayError::DeliveryExhausted { receipt })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InboxStats {
    pub accepted: u64,
    pub duplicates: u64,
    pub pending: usize,
}

/// Receiver that turns each distinct envelope id into exactly one pending
/// job, however many times it is delivered.
#[derive(Debug, Default)]
pub struct Inbox {
    inner: Mutex<InboxInner>,
}

#[derive(Debug, Default)]
struct InboxInner {
    seen: HashSet<String>,
    pending: VecDeque<(String, Vec<u8>)>,
    accepted: u64,
    duplicates: u64,
}

impl Inbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts with ids already processed elsewhere, e.g. restored from a
    /// durable job store.
    pub fn with_seen(ids: impl IntoIterator<Item = String>) -> Self {
        let inbox = Inbox::new();
        inbox.inner.lock().seen.extend(ids);
        inbox
    }

    /// True when the envelope was new.
    pub fn accept(&self, bytes: &[u8]) -> Result<bool, DeliveryError> {
        let id = peek_envelope_id(bytes).ok_or_else(|| DeliveryError::Permanent("not an envelope".into()))?;
        let mut g = self.inner.lock();
        if !g.seen.insert(id.clone()) {
            g.duplicates += 1;
            return Ok(false);
        }
        g.accepted += 1;
        g.pending.push_back((id, bytes.to_vec()));
        Ok(true)
    }

    pub fn drain(&self) -> Vec<(String, Vec<u8>)> {
        self.inner.lock().pending.drain(..).collect()
    }

    pub fn stats(&self) -> InboxStats {
        let g = self.inner.lock();
        InboxStats { accepted: g.accepted, duplicates: g.duplicates, pending: g.pending.len() }
    }
}

impl Destination for Inbox {
    fn deliver(&self, _envelope_id: &str, bytes: &[u8]) -> Result<(), DeliveryError> {
        self.accept(bytes).map(|_| ())
    }
}

/// Destination wrapper that fails according to a script, for fault
/// injection. `true` in the script means the attempt fails transiently.
pub struct Scripted<'a, D: Destination + ?Sized> {
    pub inner: &'a D,
    script: Mutex<VecDeque<bool>>,
    pub fail_forever: bool,
}

impl<'a, D: Destination + ?Sized> Scripted<'a, D> {
    pub fn new(inner: &'a D, failures: impl IntoIterator<Item = bool>) -> Self {
        Scripted { inner, script: Mutex::new(failures.into_iter().collect()), fail_forever: false }
    }

    pub fn always_failing(inner: &'a D) -> Self {
        Scripted { inner, script: Mutex::new(VecDeque::new()), fail_forever: true }
    }
}

impl<D: Destination + ?Sized> Destination for Scripted<'_, D> {
    fn deliver(&self, envelope_id: &str, bytes: &[u8]) -> Result<(), DeliveryError> {
        let fail = self.fail_forever || self.script.lock().pop_front().unwrap_or(false);
        if fail {
            return Err(DeliveryError::Transient("injected failure".into()));
        }
        self.inner.deliver(envelope_id, bytes)
    }
}
