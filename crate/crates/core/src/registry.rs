//! Assessment battery and metric registry.
//!
//! The registry is loaded from a versioned TOML file (see
//! `config/battery.toml`, documented in `docs/registry.md`). The shipped copy
//! is embedded at compile time and parsed once; callers that need a custom
//! registry can parse one with [`Registry::from_toml_str`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::model::PayloadKind;

pub const BATTERY_TOML: &str = include_str!("../config/battery.toml");
pub const REGISTRY_SCHEMA: &str = "lhs-battery";

static SHIPPED: LazyLock<Registry> = LazyLock::new(|| {
    Registry::from_toml_str(BATTERY_TOML).expect("shipped battery registry is valid")
});

/// The shipped registry.
pub fn registry() -> &'static Registry {
    &SHIPPED
}

/// All battery rows of the shipped registry, in file order.
pub fn battery_registry() -> Vec<AssessmentDefinition> {
    SHIPPED.assessments.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssessmentCode {
    #[serde(rename = "ARAT")]
    Arat,
    #[serde(rename = "PAM_ACTIVITY")]
    PamActivity,
    #[serde(rename = "PAM_ARM_USE")]
    PamArmUse,
    #[serde(rename = "FDA")]
    Fda,
    #[serde(rename = "BODYS")]
    Bodys,
    #[serde(rename = "WALK10M")]
    Walk10m,
    #[serde(rename = "FSS")]
    Fss,
    #[serde(rename = "HADS")]
    Hads,
    #[serde(rename = "BDI2")]
    Bdi2,
    #[serde(rename = "ESS")]
    Ess,
    #[serde(rename = "FSMC")]
    Fsmc,
}

impl AssessmentCode {
    pub const ALL: [AssessmentCode; 11] = [
        AssessmentCode::Arat,
        AssessmentCode::PamActivity,
        AssessmentCode::PamArmUse,
        AssessmentCode::Fda,
        AssessmentCode::Bodys,
        AssessmentCode::Walk10m,
        AssessmentCode::Fss,
        AssessmentCode::Hads,
        AssessmentCode::Bdi2,
        AssessmentCode::Ess,
        AssessmentCode::Fsmc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssessmentCode::Arat => "ARAT",
            AssessmentCode::PamActivity => "PAM_ACTIVITY",
            AssessmentCode::PamArmUse => "PAM_ARM_USE",
            AssessmentCode::Fda => "FDA",
            AssessmentCode::Bodys => "BODYS",
            AssessmentCode::Walk10m => "WALK10M",
            AssessmentCode::Fss => "FSS",
            AssessmentCode::Hads => "HADS",
            AssessmentCode::Bdi2 => "BDI2",
            AssessmentCode::Ess => "ESS",
            AssessmentCode::Fsmc => "FSMC",
        }
    }

    /// Both physical-activity-monitoring rows share one wrist capture.
    pub fn is_pam(self) -> bool {
        matches!(self, AssessmentCode::PamActivity | AssessmentCode::PamArmUse)
    }
}

impl fmt::Display for AssessmentCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown assessment code `{0}`")]
pub struct UnknownCode(pub String);

impl FromStr for AssessmentCode {
    type Err = UnknownCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AssessmentCode::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownCode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Imu,
    Video,
    Audio,
    Tablet,
}

impl Modality {
    /// Payload kinds a capture channel may deliver.
    pub fn payload_kinds(self) -> &'static [PayloadKind] {
        match self {
            Modality::Imu => &[PayloadKind::ImuStream],
            Modality::Video => &[PayloadKind::VideoBlob],
            Modality::Audio => &[PayloadKind::AudioBlob],
            Modality::Tablet => &[PayloadKind::QuestionnaireItems, PayloadKind::ManualScores],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentDefinition {
    pub code: AssessmentCode,
    pub outcome_domain: String,
    pub test_name: String,
    pub measure_text: String,
    pub traditional_scoring: String,
    pub per_week: u32,
    pub modalities: BTreeSet<Modality>,
}

impl AssessmentDefinition {
    /// Payload kinds accepted for this assessment. Therapist-rated tests
    /// (ARAT, 10 m walk) additionally accept manually entered scores.
    pub fn allowed_payload_kinds(&self) -> BTreeSet<PayloadKind> {
        let mut kinds: BTreeSet<PayloadKind> = self
            .modalities
            .iter()
            .flat_map(|m| m.payload_kinds().iter().copied())
            .collect();
        if matches!(self.code, AssessmentCode::Arat | AssessmentCode::Walk10m) {
            kinds.insert(PayloadKind::ManualScores);
        }
        kinds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinition {
    pub code: String,
    pub label: String,
    #[serde(default)]
    pub assessment: Option<AssessmentCode>,
    pub panel: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
}

impl MetricDefinition {
    pub fn contains(&self, value: f64) -> bool {
        value.is_finite() && value >= self.min && value <= self.max
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("registry parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unexpected registry schema `{0}`")]
    Schema(String),
    #[error("invalid registry: {0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    schema: String,
    version: String,
    assessment: Vec<AssessmentDefinition>,
    metric: Vec<MetricDefinition>,
}

#[derive(Debug, Clone)]
pub struct Registry {
    pub version: String,
    assessments: Vec<AssessmentDefinition>,
    metrics: BTreeMap<String, MetricDefinition>,
}

impl Registry {
    pub fn from_toml_str(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = toml::from_str(text)?;
        if file.schema != REGISTRY_SCHEMA {
            return Err(RegistryError::Schema(file.schema));
        }
        let mut seen = BTreeSet::new();
        for def in &file.assessment {
            if !seen.insert(def.code) {
                return Err(RegistryError::Invalid(format!("duplicate assessment {}", def.code)));
            }
            if ![2, 3, 5].contains(&def.per_week) {
                return Err(RegistryError::Invalid(format!(
                    "{}: per_week {} not in {{2, 3, 5}}",
                    def.code, def.per_week
                )));
            }
            if def.modalities.is_empty() {
                return Err(RegistryError::Invalid(format!("{}: no modalities", def.code)));
            }
        }
        if seen.len() != AssessmentCode::ALL.len() {
            return Err(RegistryError::Invalid(format!(
                "expected {} assessments, found {}",
                AssessmentCode::ALL.len(),
                seen.len()
            )));
        }
        let mut metrics = BTreeMap::new();
        for m in file.metric {
            if !(m.min <= m.max) {
                return Err(RegistryError::Invalid(format!("{}: empty range", m.code)));
            }
            if m.unit.is_empty() {
                return Err(RegistryError::Invalid(format!("{}: empty unit", m.code)));
            }
            let code = m.code.clone();
            if metrics.insert(code.clone(), m).is_some() {
                return Err(RegistryError::Invalid(format!("duplicate metric {code}")));
            }
        }
        Ok(Registry { version: file.version, assessments: file.assessment, metrics })
    }

    pub fn assessments(&self) -> &[AssessmentDefinition] {
        &self.assessments
    }

    /// Total over [`AssessmentCode`]: construction rejects registries that
    /// miss a code.
    pub fn assessment(&self, code: AssessmentCode) -> &AssessmentDefinition {
        self.assessments
            .iter()
            .find(|d| d.code == code)
            .expect("registry is total over assessment codes")
    }

    pub fn metric(&self, code: &str) -> Option<&MetricDefinition> {
        self.metrics.get(code)
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricDefinition> {
        self.metrics.values()
    }

    /// Test name shown for a metric panel.
    pub fn panel_text(&self, panel: &str) -> String {
        if let Ok(code) = panel.parse::<AssessmentCode>() {
            return self.assessment(code).test_name.clone();
        }
        match panel {
            "PAM" => self.assessment(AssessmentCode::PamActivity).test_name.clone(),
            "SUS" => "System Usability Scale".to_string(),
            other => other.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_registry_has_eleven_rows() {
        assert_eq!(battery_registry().len(), 11);
    }

    #[test]
    fn arat_frequency_and_modalities() {
        let arat = registry().assessment(AssessmentCode::Arat);
        assert_eq!(arat.per_week, 2);
        assert_eq!(arat.modalities, BTreeSet::from([Modality::Imu, Modality::Video]));
    }

    #[test]
    fn fss_frequency_and_modalities() {
        let fss = registry().assessment(AssessmentCode::Fss);
        assert_eq!(fss.per_week, 5);
        assert_eq!(fss.modalities, BTreeSet::from([Modality::Tablet]));
    }

    #[test]
    fn walk_test_is_video_only() {
        let walk = registry().assessment(AssessmentCode::Walk10m);
        assert_eq!(walk.modalities, BTreeSet::from([Modality::Video]));
        assert_eq!(walk.per_week, 3);
    }

    #[test]
    fn full_frequency_table() {
        let expected = [
            (AssessmentCode::Arat, 2),
            (AssessmentCode::PamActivity, 3),
            (AssessmentCode::PamArmUse, 3),
            (AssessmentCode::Fda, 3),
            (AssessmentCode::Bodys, 3),
            (AssessmentCode::Walk10m, 3),
            (AssessmentCode::Fss, 5),
            (AssessmentCode::Hads, 5),
            (AssessmentCode::Bdi2, 5),
            (AssessmentCode::Ess, 5),
            (AssessmentCode::Fsmc, 5),
        ];
        for (code, per_week) in expected {
            assert_eq!(registry().assessment(code).per_week, per_week, "{code}");
        }
    }

    #[test]
    fn every_code_resolves_exactly_once() {
        for code in AssessmentCode::ALL {
            let n = battery_registry().iter().filter(|d| d.code == code).count();
            assert_eq!(n, 1, "{code}");
            assert_eq!(code.as_str().parse::<AssessmentCode>().unwrap(), code);
        }
    }

    #[test]
    fn arat_accepts_manual_scores_but_not_audio() {
        let kinds = registry().assessment(AssessmentCode::Arat).allowed_payload_kinds();
        assert!(kinds.contains(&PayloadKind::ManualScores));
        assert!(kinds.contains(&PayloadKind::ImuStream));
        assert!(!kinds.contains(&PayloadKind::AudioBlob));
    }

    #[test]
    fn rejects_bad_frequency() {
        let text = BATTERY_TOML.replacen("per_week = 2", "per_week = 4", 1);
        assert!(matches!(Registry::from_toml_str(&text), Err(RegistryError::Invalid(_))));
    }

    #[test]
    fn rejects_missing_row() {
        let cut = BATTERY_TOML.find("[[assessment]]\ncode = \"FSMC\"").unwrap();
        let end = BATTERY_TOML[cut..].find("# Metrics").unwrap() + cut;
        let text = format!("{}{}", &BATTERY_TOML[..cut], &BATTERY_TOML[end..]);
        assert!(matches!(Registry::from_toml_str(&text), Err(RegistryError::Invalid(_))));
    }

    #[test]
    fn metric_ranges_cover_declared_bounds() {
        let reg = registry();
        assert_eq!(reg.metric("HADS_A").map(|m| (m.min, m.max)), Some((0.0, 21.0)));
        assert_eq!(reg.metric("ARAT_TOTAL").map(|m| (m.min, m.max)), Some((0.0, 57.0)));
        assert_eq!(reg.metric("LATERALITY").map(|m| (m.min, m.max)), Some((-1.0, 1.0)));
        assert_eq!(reg.metric("WALK_SPEED").unwrap().unit, "m/s");
        assert!(!reg.metric("HADS_A").unwrap().contains(21.5));
        assert!(!reg.metric("HADS_A").unwrap().contains(f64::NAN));
    }
}
