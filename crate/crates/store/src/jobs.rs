//! Pipeline job records persisted alongside the clinical data so that a
//! restarted orchestrator resumes where it stopped.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use lhs_core::{ContentHash, RecordId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decrypt,
    Process,
    Reintegrate,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Decrypt, Stage::Process, Stage::Reintegrate];

    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Decrypt => Some(Stage::Process),
            Stage::Process => Some(Stage::Reintegrate),
            Stage::Reintegrate => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Decrypt => "decrypt",
            Stage::Process => "process",
            Stage::Reintegrate => "reintegrate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    /// Last attempt failed; a retry is scheduled at `next_run_at`.
    Failed,
    DeadLettered,
}

impl JobState {
    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Succeeded => "succeeded",
            JobState::Failed => "failed",
            JobState::DeadLettered => "dead_lettered",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::DeadLettered)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub worker: String,
    pub until: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobEventKind {
    Queued,
    Started,
    StageSucceeded,
    StageFailed,
    Completed,
    DeadLettered,
    Redriven,
    LeaseExpired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobEvent {
    pub at: DateTime<Utc>,
    pub stage: Stage,
    pub kind: JobEventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub record_id: RecordId,
    /// Blob holding the sealed envelope this job decrypts.
    pub envelope_blob: Option<ContentHash>,
    /// Decrypted payload bundle written by the decrypt stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_blob: Option<ContentHash>,
    pub stage: Stage,
    pub state: JobState,
    pub attempts: BTreeMap<Stage, u32>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub next_run_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease: Option<Lease>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub history: Vec<JobEvent>,
}

impl Job {
    pub fn new(job_id: String, record_id: RecordId, envelope_blob: Option<ContentHash>, at: DateTime<Utc>) -> Self {
        Job {
            job_id,
            record_id,
            envelope_blob,
            bundle_blob: None,
            stage: Stage::Decrypt,
            state: JobState::Queued,
            attempts: BTreeMap::new(),
            created_at: at,
            updated_at: at,
            next_run_at: at,
            lease: None,
            last_error: None,
            completed_at: None,
            history: vec![JobEvent { at, stage: Stage::Decrypt, kind: JobEventKind::Queued, detail: None }],
        }
    }

    pub fn attempts_at(&self, stage: Stage) -> u32 {
        self.attempts.get(&stage).copied().unwrap_or(0)
    }

    pub fn blobs(&self) -> impl Iterator<Item = &ContentHash> {
        self.envelope_blob.iter().chain(self.bundle_blob.iter())
    }

    pub fn total_attempts(&self) -> u32 {
        self.attempts.values().sum()
    }
}
