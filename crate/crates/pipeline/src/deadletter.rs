//! Dead-letter queue export as delimited text.

use std::io::Write;

use chrono::SecondsFormat;
use lhs_store::{JobEventKind, JobState, State};

pub const DEAD_LETTER_COLUMNS: [&str; 8] =
    ["job_id", "record_id", "patient_id", "assessment_code", "stage", "attempts", "dead_lettered_at", "last_error"];

/// Comma-separated, header first, LF line ends, RFC 4180 quoting; rows in
/// job id order.
pub fn write_dead_letters<W: Write>(state: &State, out: W) -> csv::Result<usize> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(DEAD_LETTER_COLUMNS)?;
    let mut n = 0;
    for job in state.jobs().filter(|j| j.state == JobState::DeadLettered) {
        let record = state.record(&job.record_id);
        let at = job
            .history
            .iter()
            .rev()
            .find(|e| e.kind == JobEventKind::DeadLettered)
            .map(|e| e.at.to_rfc3339_opts(SecondsFormat::AutoSi, true))
            .unwrap_or_default();
        w.write_record([
            job.job_id.as_str(),
            job.record_id.as_str(),
            record.map(|r| r.patient_id.as_str()).unwrap_or(""),
            record.map(|r| r.code.as_str()).unwrap_or(""),
            job.stage.as_str(),
            &job.attempts_at(job.stage).to_string(),
            &at,
            job.last_error.as_deref().unwrap_or(""),
        ])?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}
