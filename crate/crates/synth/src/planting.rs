//! Ground truth written next to a generated cohort.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, FixedOffset, NaiveDate};
use lhs_core::{AffectedSide, AssessmentCode, IsoWeekId, PatientId};
use serde::{Deserialize, Serialize};

use crate::expected::Expected;
use crate::spec::CohortSpec;

pub const PLANTING_FORMAT: &str = "lhs-planting";
pub const PLANTING_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub baseline: f64,
    pub plateau: f64,
    pub rate: f64,
    /// Study day (0-based) at which recovery is half way.
    pub midpoint_day: f64,
}

impl Recovery {
    /// Planted ARAT total on study day `day`.
    pub fn arat_total(&self, day: u32) -> i64 {
        let x = self.baseline + (self.plateau - self.baseline) / (1.0 + (-self.rate * (f64::from(day) - self.midpoint_day)).exp());
        (x.round() as i64).clamp(0, 57)
    }
}

/// Labels behind one wrist recording. `epochs` has one symbol per 30 s
/// epoch (`-` non-wear, `L`, `M`, `V`); the arm strings have one symbol per
/// 2 s sub-epoch (`0` inactive, `1` active, `t` active exactly at the
/// threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamPlanting {
    pub sample_rate_hz: u32,
    pub worn_intervals_ms: Vec<(i64, i64)>,
    pub epochs: String,
    pub enmo_mg: Vec<i64>,
    pub left_active: String,
    pub right_active: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCapture {
    pub seq: u64,
    pub code: AssessmentCode,
    pub captured_at: DateTime<FixedOffset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk_duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pam: Option<PamPlanting>,
    /// Metric code to value. Empty for captures with nothing computable.
    pub expected: Expected,
}

impl PlantedCapture {
    pub fn local_date(&self) -> NaiveDate {
        self.captured_at.date_naive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSlot {
    pub date: NaiveDate,
    pub code: AssessmentCode,
    /// Sequence number of the capture, absent when the slot was missed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPlanting {
    pub patient_id: PatientId,
    pub affected_side: AffectedSide,
    pub recovery: Recovery,
    /// Usability rating of the capture apps. Not submitted: it belongs to
    /// no battery row.
    pub sus_items: Vec<i64>,
    pub sus_score: f64,
    pub schedule: Vec<ScheduledSlot>,
    pub captures: Vec<PlantedCapture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantingRecord {
    pub format: String,
    pub version: u32,
    pub spec: CohortSpec,
    pub patients: Vec<PatientPlanting>,
}

impl PlantingRecord {
    pub fn captures(&self) -> impl Iterator<Item = (&PatientPlanting, &PlantedCapture)> {
        self.patients.iter().flat_map(|p| p.captures.iter().map(move |c| (p, c)))
    }

    /// Distinct (patient, clinic-local day) pairs with a wrist recording.
    pub fn patient_days(&self) -> BTreeSet<(PatientId, NaiveDate)> {
        self.captures()
            .filter(|(_, c)| c.code.is_pam())
            .map(|(p, c)| (p.patient_id.clone(), c.local_date()))
            .collect()
    }

    /// Scheduled and captured counts per (patient, week, code).
    pub fn schedule_counts(&self) -> BTreeMap<(PatientId, IsoWeekId, AssessmentCode), (u32, u32)> {
        let mut out: BTreeMap<_, (u32, u32)> = BTreeMap::new();
        for p in &self.patients {
            for s in &p.schedule {
                let e = out.entry((p.patient_id.clone(), IsoWeekId::of(s.date), s.code)).or_default();
                e.0 += 1;
                e.1 += u32::from(s.seq.is_some());
            }
        }
        out
    }

    pub fn sus_scores(&self) -> Vec<f64> {
        self.patients.iter().map(|p| p.sus_score).collect()
    }
}
