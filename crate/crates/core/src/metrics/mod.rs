//! Metric derivations for every computable battery row.

pub mod config;
pub mod imu;
pub mod scoring;

use chrono::{DateTime, Utc};

use crate::model::{AffectedSide, ObservationResult, PayloadKind, Side};
use crate::payload::imu::{parse_imu, ImuError, ImuRecording};
use crate::payload::questionnaire::{parse_tablet_payload, ItemError, TabletPayload};
use crate::payload::BundlePart;
use crate::registry::{registry, AssessmentCode};
use crate::model::AssessmentRecord;

pub use config::DerivationConfig;
pub use imu::{ActivityMinutes, ArmUse, ImuMetricError, Interval, WearTime};
pub use scoring::{MetricValue, ScoringError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeriveError {
    #[error("imu payload: {0}")]
    ImuPayload(#[from] ImuError),
    #[error("imu metrics: {0}")]
    Imu(#[from] ImuMetricError),
    #[error("tablet payload: {0}")]
    Items(#[from] ItemError),
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("{code} record has no {needed} payload")]
    MissingPayload { code: AssessmentCode, needed: &'static str },
    #[error("{code} record carries {found} items")]
    InstrumentMismatch { code: AssessmentCode, found: String },
    #[error("walk distance {0} m differs from the configured test distance")]
    WalkDistance(f64),
    #[error("metric {code} value {value} outside its registered range")]
    OutOfRange { code: String, value: f64 },
    #[error("metric {0} is not registered")]
    UnregisteredMetric(String),
}

/// Both PAM metric families from one capture.
#[derive(Debug, Clone, PartialEq)]
pub struct PamMetrics {
    pub activity_side: Side,
    pub wear: WearTime,
    pub activity: ActivityMinutes,
    pub arm_use: ArmUse,
}

/// Activity and wear come from the unaffected wrist (right when unknown).
pub fn activity_side(affected: AffectedSide) -> Side {
    affected.side().map(Side::other).unwrap_or(Side::Right)
}

pub fn compute_pam(
    rec: &ImuRecording,
    affected: AffectedSide,
    cfg: &DerivationConfig,
    therapy_sessions: Option<&[Interval]>,
) -> Result<PamMetrics, DeriveError> {
    let side = activity_side(affected);
    let stream = rec.stream(side);
    let wear = imu::detect_wear_time(stream, &cfg.imu)?;
    let activity = imu::classify_activity(stream, &wear.worn_intervals, &cfg.imu)?;
    let arm_use = imu::compute_arm_use(&rec.left, &rec.right, affected, &cfg.imu, therapy_sessions)?;
    Ok(PamMetrics { activity_side: side, wear, activity, arm_use })
}

impl PamMetrics {
    pub fn metric_values(&self) -> Vec<MetricValue> {
        let mut out = vec![
            MetricValue { code: "WEAR_HOURS", value: self.wear.total_hours },
            MetricValue { code: "ACT_LOW_MIN", value: self.activity.low_min },
            MetricValue { code: "ACT_MODERATE_MIN", value: self.activity.moderate_min },
            MetricValue { code: "ACT_VIGOROUS_MIN", value: self.activity.vigorous_min },
            MetricValue { code: "ARM_ACTIVE_S_LEFT", value: self.arm_use.active_s_left },
            MetricValue { code: "ARM_ACTIVE_S_RIGHT", value: self.arm_use.active_s_right },
        ];
        if let Some(r) = self.arm_use.use_ratio {
            out.push(MetricValue { code: "ARM_USE_RATIO", value: r });
        }
        if let Some(l) = self.arm_use.laterality {
            out.push(MetricValue { code: "LATERALITY", value: l });
        }
        out
    }
}

fn tablet_payload<'a>(parts: &'a [BundlePart]) -> impl Iterator<Item = &'a BundlePart> {
    parts
        .iter()
        .filter(|p| matches!(p.kind, PayloadKind::QuestionnaireItems | PayloadKind::ManualScores))
}

/// Metric values for one record's decrypted payloads. Records whose
/// payloads carry nothing computable (speech ratings, ARAT video without
/// therapist items) yield an empty list.
pub fn derive_values(
    code: AssessmentCode,
    affected: AffectedSide,
    parts: &[BundlePart],
    cfg: &DerivationConfig,
) -> Result<Vec<MetricValue>, DeriveError> {
    use AssessmentCode as C;
    let values = match code {
        C::PamActivity | C::PamArmUse => {
            let imu = parts
                .iter()
                .find(|p| p.kind == PayloadKind::ImuStream)
                .ok_or(DeriveError::MissingPayload { code, needed: "imu_stream" })?;
            let rec = parse_imu(&imu.bytes)?;
            compute_pam(&rec, affected, cfg, None)?.metric_values()
        }
        C::Fda | C::Bodys => Vec::new(),
        C::Walk10m => {
            let mut out = Vec::new();
            for p in tablet_payload(parts) {
                match parse_tablet_payload(&p.bytes)? {
                    TabletPayload::Walk(w) => {
                        if (w.distance_m - cfg.walk.distance_m).abs() > 1e-9 {
                            return Err(DeriveError::WalkDistance(w.distance_m));
                        }
                        let v = scoring::walking_speed(w.distance_m, w.duration_s)?;
                        out.push(MetricValue { code: "WALK_SPEED", value: v });
                    }
                    other => {
                        return Err(DeriveError::InstrumentMismatch { code, found: other.instrument_code().into() })
                    }
                }
            }
            out
        }
        _ => {
            let mut out = Vec::new();
            for p in tablet_payload(parts) {
                match parse_tablet_payload(&p.bytes)? {
                    TabletPayload::Items(v) if v.instrument().as_str() == code.as_str() => {
                        out.extend(scoring::score_questionnaire(&v, cfg));
                    }
                    other => {
                        return Err(DeriveError::InstrumentMismatch { code, found: other.instrument_code().into() })
                    }
                }
            }
            if out.is_empty() && code != C::Arat {
                return Err(DeriveError::MissingPayload { code, needed: "questionnaire_items" });
            }
            out
        }
    };
    Ok(values)
}

/// Wraps metric values into range-checked observations for `record`.
pub fn to_observations(
    record: &AssessmentRecord,
    values: &[MetricValue],
    cfg: &DerivationConfig,
    computed_at: DateTime<Utc>,
) -> Result<Vec<ObservationResult>, DeriveError> {
    let reg = registry();
    values
        .iter()
        .map(|m| {
            let def = reg.metric(m.code).ok_or_else(|| DeriveError::UnregisteredMetric(m.code.into()))?;
            if !def.contains(m.value) {
                return Err(DeriveError::OutOfRange { code: m.code.into(), value: m.value });
            }
            Ok(ObservationResult {
                patient_id: record.patient_id.clone(),
                source_record_id: record.record_id.clone(),
                metric_code: m.code.to_string(),
                value: m.value,
                unit: def.unit.clone(),
                computed_at,
                derivation_version: cfg.version.clone(),
            })
        })
        .collect()
}

pub fn derive_observations(
    record: &AssessmentRecord,
    affected: AffectedSide,
    parts: &[BundlePart],
    cfg: &DerivationConfig,
    computed_at: DateTime<Utc>,
) -> Result<Vec<ObservationResult>, DeriveError> {
    let values = derive_values(record.code, affected, parts, cfg)?;
    to_observations(record, &values, cfg, computed_at)
}
