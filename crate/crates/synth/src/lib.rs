//! Deterministic synthetic cohorts with planted ground truth.
//!
//! The same spec always yields byte-identical submissions and planting
//! record. Every generated sample is covered by a planted label, and planted
//! features stay a configurable margin away from classification thresholds
//! unless adversarial mode asks for exact ties.

pub mod expected;
pub mod generate;
pub mod planting;
pub mod signal;
pub mod spec;

pub use generate::{arat_items, generate, patient_id, weekdays, write_cohort, Cohort, Submission};
pub use planting::{PamPlanting, PatientPlanting, PlantedCapture, PlantingRecord, Recovery, ScheduledSlot};
pub use spec::{CohortSpec, RecoverySpec};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Sink(String),
}
