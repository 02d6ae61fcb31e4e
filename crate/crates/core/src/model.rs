//! Domain value types shared by every stage of the pipeline.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::registry::AssessmentCode;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(PatientId);
string_id!(RecordId);
string_id!(DeviceId);

/// SHA-256 digest, hex encoded on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(ContentHash(out))
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentHash::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid sha-256 hex"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffectedSide {
    Left,
    Right,
    Unknown,
}

impl AffectedSide {
    pub fn side(self) -> Option<Side> {
        match self {
            AffectedSide::Left => Some(Side::Left),
            AffectedSide::Right => Some(Side::Right),
            AffectedSide::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("patient id must not be empty")]
    EmptyPatientId,
    #[error("discharge date {discharge} precedes admission date {admission}")]
    DischargeBeforeAdmission { admission: NaiveDate, discharge: NaiveDate },
    #[error("trajectory timestamps must be strictly increasing")]
    UnorderedSeries,
    #[error("payload byte length must be positive")]
    EmptyPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub affected_side: AffectedSide,
    pub admission_date: NaiveDate,
    #[serde(default)]
    pub discharge_date: Option<NaiveDate>,
    #[serde(default)]
    pub cohort_tags: BTreeSet<String>,
}

impl PatientRecord {
    pub fn new(patient_id: PatientId, affected_side: AffectedSide, admission_date: NaiveDate) -> Self {
        PatientRecord {
            patient_id,
            affected_side,
            admission_date,
            discharge_date: None,
            cohort_tags: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patient_id.0.trim().is_empty() {
            return Err(ModelError::EmptyPatientId);
        }
        if let Some(discharge) = self.discharge_date {
            if discharge < self.admission_date {
                return Err(ModelError::DischargeBeforeAdmission {
                    admission: self.admission_date,
                    discharge,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    ImuStream,
    QuestionnaireItems,
    AudioBlob,
    VideoBlob,
    ManualScores,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 5] = [
        PayloadKind::ImuStream,
        PayloadKind::QuestionnaireItems,
        PayloadKind::AudioBlob,
        PayloadKind::VideoBlob,
        PayloadKind::ManualScores,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::ImuStream => "imu_stream",
            PayloadKind::QuestionnaireItems => "questionnaire_items",
            PayloadKind::AudioBlob => "audio_blob",
            PayloadKind::VideoBlob => "video_blob",
            PayloadKind::ManualScores => "manual_scores",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Self> {
        PayloadKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadRef {
    pub payload_id: String,
    pub kind: PayloadKind,
    pub content_hash: ContentHash,
    pub byte_length: u64,
    pub uri: String,
}

impl PayloadRef {
    pub fn verify(&self, bytes: &[u8]) -> bool {
        bytes.len() as u64 == self.byte_length && ContentHash::of(bytes) == self.content_hash
    }
}

/// Record lifecycle.
///
/// ```text
/// captured -> encrypted -> processing -> processed -> reintegrated
///                              ^   \          |
///                              |    v         v
///                              +-- failed <---+
///                              |     |
///                              |     v
///                              +- dead_lettered
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Captured,
    Encrypted,
    Processing,
    Processed,
    Reintegrated,
    Failed,
    DeadLettered,
}

impl RecordStatus {
    pub const ALL: [RecordStatus; 7] = [
        RecordStatus::Captured,
        RecordStatus::Encrypted,
        RecordStatus::Processing,
        RecordStatus::Processed,
        RecordStatus::Reintegrated,
        RecordStatus::Failed,
        RecordStatus::DeadLettered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Captured => "captured",
            RecordStatus::Encrypted => "encrypted",
            RecordStatus::Processing => "processing",
            RecordStatus::Processed => "processed",
            RecordStatus::Reintegrated => "reintegrated",
            RecordStatus::Failed => "failed",
            RecordStatus::DeadLettered => "dead_lettered",
        }
    }
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True iff `from -> to` is an edge of the record lifecycle.
///
/// `processed -> failed` covers a failed reintegration attempt and
/// `dead_lettered -> processing` is the operator redrive.
pub fn validate_transition(from: RecordStatus, to: RecordStatus) -> bool {
    use RecordStatus::*;
    matches!(
        (from, to),
        (Captured, Encrypted)
            | (Encrypted, Processing)
            | (Processing, Processed)
            | (Processing, Failed)
            | (Processed, Reintegrated)
            | (Processed, Failed)
            | (Failed, Processing)
            | (Failed, DeadLettered)
            | (DeadLettered, Processing)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusChange {
    pub status: RecordStatus,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransitionError {
    #[error("illegal status transition {from} -> {to}")]
    Illegal { from: RecordStatus, to: RecordStatus },
    #[error("status timestamp {at} precedes previous change at {previous}")]
    NonMonotone { previous: DateTime<Utc>, at: DateTime<Utc> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub record_id: RecordId,
    pub patient_id: PatientId,
    pub code: AssessmentCode,
    /// Capture time with the device's local offset preserved.
    pub captured_at: DateTime<FixedOffset>,
    pub device_id: DeviceId,
    pub payloads: Vec<PayloadRef>,
    pub status: RecordStatus,
    pub status_history: Vec<StatusChange>,
    /// Earlier record with byte-identical payloads, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<RecordId>,
}

impl AssessmentRecord {
    /// Clinic-local calendar day of the capture.
    pub fn local_date(&self) -> NaiveDate {
        self.captured_at.date_naive()
    }

    pub fn transition(&mut self, to: RecordStatus, at: DateTime<Utc>) -> Result<(), TransitionError> {
        if !validate_transition(self.status, to) {
            return Err(TransitionError::Illegal { from: self.status, to });
        }
        if let Some(last) = self.status_history.last() {
            if at < last.at {
                return Err(TransitionError::NonMonotone { previous: last.at, at });
            }
        }
        self.status = to;
        self.status_history.push(StatusChange { status: to, at });
        Ok(())
    }

    /// Replays the history through [`validate_transition`].
    pub fn history_is_valid(&self) -> bool {
        let mut iter = self.status_history.iter();
        let Some(first) = iter.next() else { return false };
        if first.status != RecordStatus::Captured {
            return false;
        }
        let mut prev = first;
        for change in iter {
            if !validate_transition(prev.status, change.status) || change.at < prev.at {
                return false;
            }
            prev = change;
        }
        prev.status == self.status
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationResult {
    pub patient_id: PatientId,
    pub source_record_id: RecordId,
    pub metric_code: String,
    pub value: f64,
    pub unit: String,
    pub computed_at: DateTime<Utc>,
    pub derivation_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub at: DateTime<FixedOffset>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySeries {
    pub patient_id: PatientId,
    pub metric_code: String,
    pub unit: Option<String>,
    pub points: Vec<SeriesPoint>,
}

impl TrajectorySeries {
    pub fn new(
        patient_id: PatientId,
        metric_code: impl Into<String>,
        unit: Option<String>,
        points: Vec<SeriesPoint>,
    ) -> Result<Self, ModelError> {
        if points.windows(2).any(|w| w[0].at >= w[1].at) {
            return Err(ModelError::UnorderedSeries);
        }
        Ok(TrajectorySeries { patient_id, metric_code: metric_code.into(), unit, points })
    }
}
