//! Cohort specification, read from TOML or JSON.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::SynthError;

/// Ranges from which each patient's ARAT recovery curve is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverySpec {
    pub baseline: [f64; 2],
    pub plateau: [f64; 2],
    /// Logistic rate per day.
    pub rate: [f64; 2],
}

impl Default for RecoverySpec {
    fn default() -> Self {
        RecoverySpec { baseline: [5.0, 25.0], plateau: [35.0, 57.0], rate: [0.2, 0.8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub seed: u64,
    pub n_patients: usize,
    pub days: u32,
    pub start_date: NaiveDate,
    /// Clinic offset from UTC.
    pub utc_offset_minutes: i32,
    /// Probability that a scheduled capture happens.
    pub adherence: f64,
    /// Daily wear time is uniform in this range.
    pub wear_hours: [f64; 2],
    pub sample_rate_hz: u32,
    /// Minimum distance of every planted feature from its threshold.
    pub margin_mg: f64,
    pub recovery: RecoverySpec,
    /// Plants features exactly on thresholds to exercise tie rules.
    pub adversarial: bool,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            seed: 1,
            n_patients: 25,
            days: 14,
            start_date: NaiveDate::from_ymd_opt(2025, 1, 6).unwrap(),
            utc_offset_minutes: 60,
            adherence: 1.0,
            wear_hours: [8.0, 14.0],
            sample_rate_hz: 1,
            margin_mg: 10.0,
            recovery: RecoverySpec::default(),
            adversarial: false,
        }
    }
}

fn ordered(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<(), SynthError> {
    if !(r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi) {
        return Err(SynthError::InvalidSpec(format!("{name} must be an ordered range within [{lo}, {hi}]")));
    }
    Ok(())
}

impl CohortSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: CohortSpec = toml::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: CohortSpec = serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_patients == 0 || self.n_patients > 9999 {
            return bad("n_patients must be in 1..=9999");
        }
        if self.days == 0 || self.days > 3660 {
            return bad("days must be in 1..=3660");
        }
        if !(0.0..=1.0).contains(&self.adherence) {
            return bad("adherence must be in [0, 1]");
        }
        // Even sample count per 2 s sub-epoch, integer sample period.
        if !matches!(self.sample_rate_hz, 1 | 2 | 4 | 5 | 10 | 20 | 25 | 50) {
            return bad("sample_rate_hz must be one of 1, 2, 4, 5, 10, 20, 25, 50");
        }
        if !(0.0..=crate::signal::MAX_MARGIN_MG).contains(&self.margin_mg) {
            return bad("margin_mg must be in [0, 12]");
        }
        if chrono::FixedOffset::east_opt(self.utc_offset_minutes * 60).is_none() {
            return bad("utc_offset_minutes out of range");
        }
        ordered("wear_hours", self.wear_hours, 0.5, 22.0)?;
        ordered("recovery.baseline", self.recovery.baseline, 0.0, 57.0)?;
        ordered("recovery.plateau", self.recovery.plateau, 0.0, 57.0)?;
        ordered("recovery.rate", self.recovery.rate, 0.0, 10.0)?;
        Ok(())
    }
}
