//! Wrist IMU day synthesis from planted labels.
//!
//! A recording is a sequence of 30 s epochs, each made of fifteen 2 s
//! sub-epochs, with all acceleration on the z axis. Non-wear epochs are a
//! still 1 g. In a worn epoch every sample is `1 g + e + d_j ± a`:
//!
//! - `e` is the planted ENMO level of the epoch;
//! - `d_j` is +30 mg for sub-epochs 0..7, -30 mg for 7..14 and 0 for the
//!   last one, which keeps the epoch's standard deviation well above the
//!   wear threshold without moving its mean;
//! - `a` alternates sign sample by sample inside active sub-epochs only, so
//!   a sub-epoch's standard deviation is exactly `a` or exactly 0.
//!
//! No sample drops below 1 g, so the epoch ENMO mean is exactly `e`.

use lhs_core::payload::imu::{ImuSample, ImuWriter};
use lhs_core::{AffectedSide, Side};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const EPOCH_MS: i64 = 30_000;
pub const SUB_EPOCH_MS: i64 = 2_000;
pub const SUBS_PER_EPOCH: usize = 15;
pub const EPOCHS_PER_HOUR: f64 = 120.0;

pub const MODERATE_MG: i64 = 100;
pub const VIGOROUS_MG: i64 = 400;
pub const ACTIVE_STDDEV_MG: i64 = 13;
pub const MAX_MARGIN_MG: f64 = 12.0;
const SPREAD_MG: i64 = 30;
const VIGOROUS_TOP_MG: i64 = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochClass {
    NonWear,
    Low,
    Moderate,
    Vigorous,
}

impl EpochClass {
    pub fn symbol(self) -> char {
        match self {
            EpochClass::NonWear => '-',
            EpochClass::Low => 'L',
            EpochClass::Moderate => 'M',
            EpochClass::Vigorous => 'V',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochPlan {
    pub class: EpochClass,
    pub enmo_mg: i64,
}

/// Everything needed to synthesize one recording, and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DayPlan {
    pub epochs: Vec<EpochPlan>,
    /// Per-sub-epoch active amplitude; 0 where inactive.
    pub left: Vec<i64>,
    pub right: Vec<i64>,
}

/// Integer mg bands for each class, at least `margin` from every threshold.
pub fn class_band(class: EpochClass, margin_mg: f64) -> (i64, i64) {
    let m = margin_mg.ceil() as i64;
    // Lower thresholds are closed, so a class never reaches the next one.
    let below = m.max(1);
    match class {
        EpochClass::NonWear => (0, 0),
        EpochClass::Low => (low_floor(margin_mg), MODERATE_MG - below),
        EpochClass::Moderate => (MODERATE_MG + m, VIGOROUS_MG - below),
        EpochClass::Vigorous => (VIGOROUS_MG + m, VIGOROUS_TOP_MG),
    }
}

/// Active amplitude used away from the threshold.
pub fn active_amplitude(margin_mg: f64) -> i64 {
    ACTIVE_STDDEV_MG + margin_mg.ceil() as i64 + 2
}

// Keeps 1 g + e - d - a at or above 1 g.
fn low_floor(margin_mg: f64) -> i64 {
    SPREAD_MG + active_amplitude(margin_mg) + 3
}

fn spread(sub: usize) -> i64 {
    match sub {
        0..=6 => SPREAD_MG,
        7..=13 => -SPREAD_MG,
        _ => 0,
    }
}

pub struct PlanParams {
    pub worn_epochs: usize,
    pub margin_mg: f64,
    pub adversarial: bool,
    pub affected: AffectedSide,
}

/// Lays out non-wear, two worn blocks split by a gap, and non-wear again;
/// fills worn epochs with class runs and both arms with activity.
pub fn plan_day<R: Rng>(rng: &mut R, p: &PlanParams) -> DayPlan {
    let lead = rng.random_range(40..=60);
    let gap = rng.random_range(30..=60);
    let trail = rng.random_range(30..=40);
    let block_a = (p.worn_epochs as f64 * rng.random_range(0.3..0.7)).round() as usize;
    let block_b = p.worn_epochs - block_a;

    let mut epochs = Vec::with_capacity(lead + gap + trail + p.worn_epochs);
    let off = EpochPlan { class: EpochClass::NonWear, enmo_mg: 0 };
    epochs.extend(std::iter::repeat(off).take(lead));
    worn_block(rng, p, block_a, &mut epochs);
    epochs.extend(std::iter::repeat(off).take(gap));
    worn_block(rng, p, block_b, &mut epochs);
    epochs.extend(std::iter::repeat(off).take(trail));

    let p_unaffected = rng.random_range(0.25..0.6);
    let p_affected = p_unaffected * rng.random_range(0.2..1.0);
    let (p_left, p_right) = match p.affected {
        AffectedSide::Left => (p_affected, p_unaffected),
        AffectedSide::Right => (p_unaffected, p_affected),
        AffectedSide::Unknown => (p_unaffected, p_unaffected),
    };
    let amp = active_amplitude(p.margin_mg);
    let mut arm = |prob: f64| -> Vec<i64> {
        epochs
            .iter()
            .flat_map(|e| std::iter::repeat(e.class != EpochClass::NonWear).take(SUBS_PER_EPOCH))
            .map(|worn| {
                if !worn || !rng.random_bool(prob) {
                    0
                } else if p.adversarial && rng.random_bool(0.05) {
                    ACTIVE_STDDEV_MG
                } else {
                    amp
                }
            })
            .collect()
    };
    let left = arm(p_left);
    let right = arm(p_right);
    DayPlan { epochs, left, right }
}

fn worn_block<R: Rng>(rng: &mut R, p: &PlanParams, len: usize, out: &mut Vec<EpochPlan>) {
    let mut left = len;
    while left > 0 {
        let run = rng.random_range(2..=40).min(left);
        let u: f64 = rng.random();
        let class = if u < 0.6 {
            EpochClass::Low
        } else if u < 0.9 {
            EpochClass::Moderate
        } else {
            EpochClass::Vigorous
        };
        for _ in 0..run {
            let (lo, hi) = class_band(class, p.margin_mg);
            let mut e = EpochPlan { class, enmo_mg: rng.random_range(lo..=hi) };
            if p.adversarial && rng.random_bool(0.05) {
                // Exactly on a threshold: the closed lower bound wins.
                e = if rng.random_bool(0.5) {
                    EpochPlan { class: EpochClass::Moderate, enmo_mg: MODERATE_MG }
                } else {
                    EpochPlan { class: EpochClass::Vigorous, enmo_mg: VIGOROUS_MG }
                };
            }
            out.push(e);
        }
        left -= run;
    }
}

impl DayPlan {
    pub fn arm(&self, side: Side) -> &[i64] {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn duration_ms(&self) -> i64 {
        self.epochs.len() as i64 * EPOCH_MS
    }

    /// The recording in the IMU text format, left wrist first.
    pub fn synthesize(&self, rate_hz: u32) -> Vec<u8> {
        let per_sub = (2 * rate_hz) as usize;
        let period = 1000 / rate_hz as i64;
        let lines = 2 * self.epochs.len() * SUBS_PER_EPOCH * per_sub;
        let mut w = ImuWriter::with_capacity(f64::from(rate_hz), lines);
        for side in [Side::Left, Side::Right] {
            let amps = self.arm(side);
            for (k, e) in self.epochs.iter().enumerate() {
                for j in 0..SUBS_PER_EPOCH {
                    let a = amps[k * SUBS_PER_EPOCH + j];
                    for n in 0..per_sub {
                        let t_ms = k as i64 * EPOCH_MS + j as i64 * SUB_EPOCH_MS + n as i64 * period;
                        let mg = if e.class == EpochClass::NonWear {
                            1000
                        } else {
                            1000 + e.enmo_mg + spread(j) + if n % 2 == 0 { a } else { -a }
                        };
                        let az = mg as f64 / 1000.0;
                        w.push(side, &ImuSample { t_ms, accel: [0.0, 0.0, az], gyro: [0.0; 3] });
                    }
                }
            }
        }
        w.finish()
    }
}
