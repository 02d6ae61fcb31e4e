//! Weekly extraction: pull a week from the EHR, extract observation groups
//! and hand each candidate to the relay.

use lhs_core::IsoWeekId;
use serde::{Deserialize, Serialize};

use crate::ehr::{EhrEndpoint, EndpointError};
use crate::message::parse_er7;
use crate::oru::{extract_batch, ExtractWarning, RecordCandidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyReport {
    pub week: IsoWeekId,
    pub pulled: usize,
    pub unparseable: usize,
    pub groups: usize,
    pub records: usize,
    pub skipped_groups: usize,
    pub forwarded: usize,
    pub forward_failures: usize,
    pub warnings: Vec<ExtractWarning>,
}

/// Pulls everything first so an unreachable endpoint leaves no partial
/// state behind; per-message and per-candidate problems become warnings.
pub fn weekly_extraction_job(
    source: &dyn EhrEndpoint,
    week: IsoWeekId,
    forward: &mut dyn FnMut(&RecordCandidate) -> Result<(), String>,
) -> Result<WeeklyReport, EndpointError> {
    let raw = source.pull_week(week)?;
    let mut warnings = Vec::new();
    let mut messages = Vec::with_capacity(raw.len());
    for (i, bytes) in raw.iter().enumerate() {
        match parse_er7(bytes) {
            Ok(m) => messages.push(m),
            Err(e) => warnings.push(ExtractWarning { message_index: i, control_id: String::new(), detail: e.to_string() }),
        }
    }
    let unparseable = warnings.len();
    let batch = extract_batch(&messages);
    warnings.extend(batch.warnings);
    let mut forwarded = 0;
    let mut forward_failures = 0;
    for c in &batch.records {
        match forward(c) {
            Ok(()) => forwarded += 1,
            Err(e) => {
                forward_failures += 1;
                warnings.push(ExtractWarning {
                    message_index: usize::MAX,
                    control_id: c.message_control_id.clone(),
                    detail: format!("forwarding {} failed: {e}", c.source_record_id),
                });
            }
        }
    }
    Ok(WeeklyReport {
        week,
        pulled: raw.len(),
        unparseable,
        groups: batch.groups,
        records: batch.records.len(),
        skipped_groups: batch.skipped_groups,
        forwarded,
        forward_failures,
        warnings,
    })
}
