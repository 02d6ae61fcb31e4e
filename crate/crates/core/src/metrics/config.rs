use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

pub const DERIVATION_TOML: &str = include_str!("../../config/derivation.toml");
pub const DERIVATION_SCHEMA: &str = "lhs-derivation";

static SHIPPED: LazyLock<DerivationConfig> = LazyLock::new(|| {
    DerivationConfig::from_toml_str(DERIVATION_TOML).expect("shipped derivation config is valid")
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuParams {
    pub epoch_ms: i64,
    pub sub_epoch_ms: i64,
    pub non_wear_min_epochs: usize,
    pub non_wear_stddev_mg: f64,
    pub active_stddev_mg: f64,
    pub moderate_mg: f64,
    pub vigorous_mg: f64,
    pub feature_resolution_mg: f64,
    pub typical_wear_hours: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AratMap {
    pub grasp: Vec<usize>,
    pub grip: Vec<usize>,
    pub pinch: Vec<usize>,
    pub gross: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HadsMap {
    pub anxiety: Vec<usize>,
    pub depression: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmcMap {
    pub cognitive: Vec<usize>,
    pub motor: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationConfig {
    pub schema: String,
    pub version: String,
    pub imu: ImuParams,
    pub walk: WalkParams,
    pub arat: AratMap,
    pub hads: HadsMap,
    pub fsmc: FsmcMap,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("derivation config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid derivation config: {0}")]
    Invalid(String),
}

impl DerivationConfig {
    pub fn shipped() -> &'static DerivationConfig {
        &SHIPPED
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: DerivationConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema != DERIVATION_SCHEMA {
            return bad(format!("unexpected schema `{}`", self.schema));
        }
        let imu = &self.imu;
        if imu.epoch_ms <= 0 || imu.sub_epoch_ms <= 0 || imu.epoch_ms % imu.sub_epoch_ms != 0 {
            return bad("epoch_ms must be a positive multiple of sub_epoch_ms".into());
        }
        if imu.non_wear_min_epochs == 0 {
            return bad("non_wear_min_epochs must be positive".into());
        }
        if !(0.0 < imu.moderate_mg && imu.moderate_mg < imu.vigorous_mg) {
            return bad("need 0 < moderate_mg < vigorous_mg".into());
        }
        if !(imu.feature_resolution_mg > 0.0) {
            return bad("feature_resolution_mg must be positive".into());
        }
        if !(self.walk.distance_m > 0.0) {
            return bad("walk distance must be positive".into());
        }
        check_partition("arat", 19, &[&self.arat.grasp, &self.arat.grip, &self.arat.pinch, &self.arat.gross])?;
        check_partition("hads", 14, &[&self.hads.anxiety, &self.hads.depression])?;
        check_partition("fsmc", 20, &[&self.fsmc.cognitive, &self.fsmc.motor])?;
        if self.hads.anxiety.len() != 7 || self.fsmc.motor.len() != 10 {
            return bad("hads subscales need 7 items and fsmc subscales 10".into());
        }
        Ok(())
    }
}

/// Every position 1..=n appears in exactly one group.
fn check_partition(name: &str, n: usize, groups: &[&Vec<usize>]) -> Result<(), ConfigError> {
    let mut seen = vec![false; n];
    for g in groups {
        for &pos in g.iter() {
            if pos == 0 || pos > n || std::mem::replace(&mut seen[pos - 1], true) {
                return Err(ConfigError::Invalid(format!("{name}: item {pos} invalid or repeated")));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(ConfigError::Invalid(format!("{name}: map does not cover all {n} items")));
    }
    Ok(())
}
