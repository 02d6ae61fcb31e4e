//! Durable longitudinal store: an append-only journal with snapshot
//! compaction, a content-addressed blob directory and the queries used by
//! the API and exports.
//!
//! One writer at a time appends; readers take a consistent view through
//! [`Store::read`].

pub mod export;
pub mod jobs;
pub mod journal;
pub mod query;
pub mod state;

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use lhs_core::submission::DeviceDescriptor;
use lhs_core::{AssessmentRecord, ContentHash, DeviceId, ObservationResult, PatientId, PatientRecord, RecordId, RecordStatus};
use parking_lot::{Mutex, RwLock, RwLockReadGuard};

pub use export::{
    export_rows, import_rows, patient_days_in_export, read_export, write_export, write_export_part, ExportError, ExportFormat, ExportRow,
    ExportScope, ImportReport, EXPORT_COLUMNS,
};
pub use jobs::{Job, JobEvent, JobEventKind, JobState, Lease, Stage};
pub use journal::SyncMode;
pub use query::{statistic, CohortAggregate, Statistic, TimeRange, UnknownStatistic};
pub use state::{ObsKey, Op, Reintegration, ReturnEntry, State};

use journal::{read_journal, sync_dir, Entry, JournalWriter};
use state::{SnapshotBody, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};

pub const JOURNAL_FILE: &str = "journal.lhsj";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line} is corrupt: {detail}")]
    Corrupt { line: usize, detail: String },
    #[error("unsupported store format {0}")]
    UnsupportedFormat(String),
    #[error("referential integrity: {0}")]
    Integrity(String),
    #[error("observation already stored: {0:?}")]
    AlreadyStored(ObsKey),
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("patient {0} already exists")]
    DuplicatePatient(PatientId),
    #[error("patient {0} was erased")]
    PatientErased(PatientId),
    #[error("device {0} already registered")]
    DuplicateDevice(DeviceId),
    #[error("record {0} already exists")]
    DuplicateRecord(RecordId),
    #[error("record {record_id}: illegal transition {from} -> {to}")]
    IllegalTransition { record_id: RecordId, from: RecordStatus, to: RecordStatus },
    #[error("record {0} was already reintegrated")]
    AlreadyReintegrated(RecordId),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StoreOptions {
    pub sync: SyncMode,
}

enum Backend {
    Memory { blobs: HashMap<ContentHash, Vec<u8>> },
    Dir { root: PathBuf, journal: JournalWriter },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompactionReport {
    pub seq: u64,
    pub journal_bytes_before: u64,
    pub journal_bytes_after: u64,
}

pub struct Store {
    writer: Mutex<Backend>,
    state: RwLock<State>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("seq", &self.state.read().seq()).finish_non_exhaustive()
    }
}

fn blob_path(root: &Path, hash: &ContentHash) -> PathBuf {
    let hex = hash.to_hex();
    root.join(BLOB_DIR).join(&hex[..2]).join(hex)
}

pub fn blob_uri(hash: &ContentHash) -> String {
    format!("blob:{hash}")
}

impl Store {
    /// Volatile store for tests and dry runs.
    pub fn in_memory() -> Self {
        Store { writer: Mutex::new(Backend::Memory { blobs: HashMap::new() }), state: RwLock::new(State::default()) }
    }

    /// Opens or creates a store directory: snapshot first, then every
    /// journal transaction after the snapshot's sequence number.
    pub fn open(root: impl AsRef<Path>, opts: StoreOptions) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join(BLOB_DIR))?;
        let snap_path = root.join(SNAPSHOT_FILE);
        let mut state = if snap_path.exists() {
            let body: SnapshotBody = serde_json::from_reader(std::io::BufReader::new(File::open(&snap_path)?))
                .map_err(|e| StoreError::Snapshot(e.to_string()))?;
            if body.format != SNAPSHOT_FORMAT || body.version != SNAPSHOT_VERSION {
                return Err(StoreError::UnsupportedFormat(format!("{} v{}", body.format, body.version)));
            }
            State::from_snapshot(body)
        } else {
            State::default()
        };
        let jpath = root.join(JOURNAL_FILE);
        let journal = if jpath.exists() {
            let (entries, bytes) = read_journal(&jpath)?;
            for e in entries {
                if e.seq <= state.seq {
                    continue;
                }
                state.seq = e.seq;
                for op in e.ops {
                    state.apply(op);
                }
            }
            JournalWriter::open_append(&jpath, opts.sync, bytes)?
        } else {
            JournalWriter::create(&jpath, opts.sync)?
        };
        Ok(Store { writer: Mutex::new(Backend::Dir { root, journal }), state: RwLock::new(state) })
    }

    pub fn root(&self) -> Option<PathBuf> {
        match &*self.writer.lock() {
            Backend::Dir { root, .. } => Some(root.clone()),
            Backend::Memory { .. } => None,
        }
    }

    /// Consistent read view. Holding it blocks the next commit from
    /// becoming visible, so keep it short.
    pub fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read()
    }

    /// Validates and durably appends one all-or-nothing transaction.
    pub fn commit(&self, ops: Vec<Op>) -> Result<u64, StoreError> {
        if ops.is_empty() {
            return Ok(self.state.read().seq());
        }
        let mut backend = self.writer.lock();
        let seq = {
            let st = self.state.read();
            st.check(&ops)?;
            st.seq() + 1
        };
        let entry = Entry { seq, ops };
        if let Backend::Dir { journal, .. } = &mut *backend {
            journal.append(&entry)?;
        }
        let mut st = self.state.write();
        st.seq = seq;
        for op in entry.ops {
            st.apply(op);
        }
        Ok(seq)
    }

    pub fn put_patient(&self, patient: PatientRecord) -> Result<u64, StoreError> {
        self.commit(vec![Op::PutPatient { patient }])
    }

    pub fn put_device(&self, device: DeviceDescriptor) -> Result<u64, StoreError> {
        self.commit(vec![Op::PutDevice { device }])
    }

    pub fn put_record(&self, record: AssessmentRecord) -> Result<u64, StoreError> {
        self.commit(vec![Op::PutRecord { record }])
    }

    pub fn set_status(&self, record_id: RecordId, status: RecordStatus, at: DateTime<Utc>) -> Result<u64, StoreError> {
        self.commit(vec![Op::SetStatus { record_id, status, at }])
    }

    pub fn put_observation(&self, observation: ObservationResult) -> Result<u64, StoreError> {
        self.commit(vec![Op::PutObservation { observation }])
    }

    pub fn put_job(&self, job: Job) -> Result<u64, StoreError> {
        self.commit(vec![Op::PutJob { job }])
    }

    /// Removes a patient and everything derived from them. The journal
    /// keeps the history until the next [`Store::compact`]; blobs are
    /// deleted at once.
    pub fn erase_patient(&self, patient_id: &PatientId, at: DateTime<Utc>) -> Result<u64, StoreError> {
        let blobs = self.read().blobs_of_patient(patient_id);
        let seq = self.commit(vec![Op::ErasePatient { patient_id: patient_id.clone(), at }])?;
        let still_used: Vec<bool> = {
            let st = self.read();
            blobs.iter().map(|h| st.blob_referenced(h)).collect()
        };
        for (h, used) in blobs.iter().zip(still_used) {
            if !used {
                self.delete_blob(h)?;
            }
        }
        Ok(seq)
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<ContentHash, StoreError> {
        let hash = ContentHash::of(bytes);
        match &mut *self.writer.lock() {
            Backend::Memory { blobs } => {
                blobs.entry(hash).or_insert_with(|| bytes.to_vec());
            }
            Backend::Dir { root, .. } => {
                let path = blob_path(root, &hash);
                if !path.exists() {
                    std::fs::create_dir_all(path.parent().unwrap())?;
                    let tmp = path.with_extension("tmp");
                    let mut f = File::create(&tmp)?;
                    f.write_all(bytes)?;
                    f.sync_all()?;
                    std::fs::rename(&tmp, &path)?;
                    sync_dir(&path);
                }
            }
        }
        Ok(hash)
    }

    /// Blob bytes, verified against their digest.
    pub fn get_blob(&self, hash: &ContentHash) -> Result<Option<Vec<u8>>, StoreError> {
        let bytes = match &*self.writer.lock() {
            Backend::Memory { blobs } => blobs.get(hash).cloned(),
            Backend::Dir { root, .. } => match std::fs::read(blob_path(root, hash)) {
                Ok(b) => Some(b),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => return Err(e.into()),
            },
        };
        match bytes {
            Some(b) if ContentHash::of(&b) != *hash => Err(StoreError::Integrity(format!("blob {hash} does not match its digest"))),
            other => Ok(other),
        }
    }

    pub fn delete_blob(&self, hash: &ContentHash) -> Result<(), StoreError> {
        match &mut *self.writer.lock() {
            Backend::Memory { blobs } => {
                blobs.remove(hash);
            }
            Backend::Dir { root, .. } => match std::fs::remove_file(blob_path(root, hash)) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            },
        }
        Ok(())
    }

    /// Writes a snapshot of the current state and truncates the journal to
    /// its header. A crash between the two steps is harmless: on open,
    /// transactions at or below the snapshot sequence are skipped.
    pub fn compact(&self) -> Result<CompactionReport, StoreError> {
        let mut backend = self.writer.lock();
        let Backend::Dir { root, journal } = &mut *backend else {
            let seq = self.state.read().seq();
            return Ok(CompactionReport { seq, journal_bytes_before: 0, journal_bytes_after: 0 });
        };
        let before = journal.bytes;
        let st = self.state.read();
        let snap = root.join(SNAPSHOT_FILE);
        let tmp = snap.with_extension("tmp");
        {
            let mut w = std::io::BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, &st.to_snapshot()).map_err(|e| StoreError::Snapshot(e.to_string()))?;
            w.write_all(b"\n")?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        std::fs::rename(&tmp, &snap)?;
        sync_dir(&snap);
        let sync = journal.sync_mode();
        *journal = JournalWriter::create(&root.join(JOURNAL_FILE), sync)?;
        Ok(CompactionReport { seq: st.seq(), journal_bytes_before: before, journal_bytes_after: journal.bytes })
    }

    pub fn journal_path(&self) -> Option<PathBuf> {
        match &*self.writer.lock() {
            Backend::Dir { journal, .. } => Some(journal.path().to_path_buf()),
            Backend::Memory { .. } => None,
        }
    }
}
