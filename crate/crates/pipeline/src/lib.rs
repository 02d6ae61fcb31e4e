//! The path from capture to clinical systems: ingestion gateway, encryption
//! node, staged orchestrator and result return to the EHR.

pub mod deadletter;
pub mod drive;
pub mod gateway;
pub mod node;
pub mod orchestrator;
pub mod returns;

pub use deadletter::{write_dead_letters, DEAD_LETTER_COLUMNS};
pub use drive::{ingest_dir, process_pending, submission_files, DriveOptions, DriveReport, DropReport, ROSTER_FILES};
pub use gateway::{parse_submission, schedule_compliance, Compliance, ComplianceRow, Gateway, GatewayError, SubmissionReceipt};
pub use node::{intake, ship_captured, ship_captured_batch, EncryptionNode, IntakeReport, NodeError, ShipReport};
pub use orchestrator::{
    pipeline_report, AllFaults, Faults, NoFaults, Orchestrator, OrchestratorConfig, OrchestratorError, PermanentFaults,
    PipelineReport, RandomFaults, RunSummary, ScriptedFault, StepOutcome, ALERT_MIN_SAMPLE, ALERT_THRESHOLD,
};
pub use returns::{
    candidate_rows, daily_control_id, daily_oru, extract_weekly, import_candidates, return_daily, CandidateImport,
    DailyReturnReport,
};
