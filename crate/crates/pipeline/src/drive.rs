//! Batch drivers used by the operator CLI and the service loop: directory
//! drops into the gateway, and captured records through to reintegration.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lhs_core::submission::DeviceDescriptor;
use lhs_core::{Clock, ContentHash, PatientRecord};
use lhs_relay::{Inbox, ParkingArea, RetryPolicy};
use lhs_store::{Store, StoreError};
use serde::{Deserialize, Serialize};

use crate::gateway::{parse_submission, Gateway, GatewayError};
use crate::node::{intake, ship_captured_batch, EncryptionNode};
use crate::orchestrator::{Orchestrator, OrchestratorError, RunSummary};

/// Files in a drop directory that are not submissions.
pub const ROSTER_FILES: [&str; 4] = ["patients.json", "devices.json", "planting.json", "spec.json"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub patients_added: usize,
    pub devices_added: usize,
    pub submitted: usize,
    /// Accepted, but carrying payloads an earlier record already had.
    pub duplicates: usize,
    /// Identical to a stored record; skipped so a drop can be re-ingested.
    pub already_present: usize,
    pub rejected: Vec<(String, String)>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> io::Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

/// Submission files in name order: `<dir>/submissions/*.json` when that
/// directory exists, otherwise `<dir>/*.json` minus the roster files.
pub fn submission_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let sub = dir.join("submissions");
    let (root, skip_roster) = if sub.is_dir() { (sub, false) } else { (dir.to_path_buf(), true) };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| !(skip_roster && ROSTER_FILES.iter().any(|r| p.file_name().is_some_and(|n| n == *r))))
        .collect();
    files.sort();
    Ok(files)
}

/// Registers the roster (`patients.json`, `devices.json`) and submits every
/// envelope file. Rejections are collected, not fatal.
pub fn ingest_dir(gateway: &Gateway, dir: &Path) -> io::Result<DropReport> {
    let store = gateway.store();
    let mut report = DropReport::default();
    let to_io = |e: StoreError| io::Error::other(e.to_string());
    if let Some(patients) = read_json::<Vec<PatientRecord>>(&dir.join("patients.json"))? {
        for p in patients {
            if store.read().patient(&p.patient_id).is_none() {
                store.put_patient(p).map_err(to_io)?;
                report.patients_added += 1;
            }
        }
    }
    if let Some(devices) = read_json::<Vec<DeviceDescriptor>>(&dir.join("devices.json"))? {
        for d in devices {
            if store.read().device(&d.device_id).is_none() {
                gateway.register_device(d).map_err(|e| io::Error::other(e.to_string()))?;
                report.devices_added += 1;
            }
        }
    }
    for path in submission_files(dir)? {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let envelope = match parse_submission(&std::fs::read(&path)?) {
            Ok(e) => e,
            Err(e) => {
                report.rejected.push((name, e.to_string()));
                continue;
            }
        };
        let hashes: Vec<ContentHash> = envelope.parts.iter().map(|p| ContentHash::of(&p.bytes)).collect();
        let present = {
            let st = store.read();
            st.record_with_payloads(&hashes).and_then(|id| st.record(id)).is_some_and(|r| {
                r.patient_id == envelope.patient_id && r.code == envelope.code && r.captured_at == envelope.captured_at
            })
        };
        if present {
            report.already_present += 1;
            continue;
        }
        match gateway.submit_assessment(envelope) {
            Ok(receipt) => {
                report.submitted += 1;
                report.duplicates += usize::from(receipt.duplicate_of.is_some());
            }
            Err(GatewayError::Store(e)) => return Err(to_io(e)),
            Err(e) => report.rejected.push((name, e.to_string())),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriveOptions {
    /// Records sealed per round; bounds envelope bytes held in memory.
    pub batch: usize,
    pub workers: usize,
}

impl Default for DriveOptions {
    fn default() -> Self {
        DriveOptions { batch: 25, workers: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriveReport {
    pub sealed: usize,
    pub enqueued: usize,
    pub parked: Vec<String>,
    pub errors: Vec<String>,
    pub run: RunSummary,
}

/// Seals captured records in batches, relays them through an in-process
/// inbox, enqueues them and runs workers until the queue is idle.
pub fn process_pending(
    store: &Arc<Store>,
    node: &EncryptionNode,
    orchestrator: &Orchestrator,
    clock: &dyn Clock,
    parking: &dyn ParkingArea,
    opts: DriveOptions,
) -> Result<DriveReport, OrchestratorError> {
    let mut report = DriveReport::default();
    let policy = RetryPolicy::default();
    orchestrator.recover()?;
    loop {
        let inbox = Inbox::new();
        let ship = ship_captured_batch(store, node, &inbox, &policy, clock, parking, opts.batch.max(1));
        report.sealed += ship.sealed;
        report.parked.extend(ship.parked);
        report.errors.extend(ship.errors);
        let taken = intake(store, orchestrator, &inbox);
        report.enqueued += taken.enqueued;
        report.errors.extend(taken.rejected);
        let run = orchestrator.run_workers(opts.workers)?;
        report.run.steps += run.steps;
        report.run.completed += run.completed;
        report.run.retries += run.retries;
        report.run.dead_lettered += run.dead_lettered;
        // Nothing new delivered: either done, or every remaining record is
        // failing to seal or deliver and needs an operator.
        if ship.delivered == 0 {
            break;
        }
    }
    Ok(report)
}
