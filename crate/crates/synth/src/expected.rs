//! Expected metric values written into the planting record. Computed here,
//! straight from the planted labels and item vectors, without going through
//! the metrics engine.

use std::collections::BTreeMap;

use lhs_core::{AffectedSide, Side};

use crate::signal::{DayPlan, EpochClass};

pub type Expected = BTreeMap<String, f64>;

fn sum(items: &[i64], positions: &[usize]) -> f64 {
    positions.iter().map(|p| items[p - 1]).sum::<i64>() as f64
}

pub fn arat(items: &[i64]) -> Expected {
    let mut e = Expected::new();
    e.insert("ARAT_GRASP".into(), sum(items, &[1, 2, 3, 4, 5, 6]));
    e.insert("ARAT_GRIP".into(), sum(items, &[7, 8, 9, 10]));
    e.insert("ARAT_PINCH".into(), sum(items, &[11, 12, 13, 14, 15, 16]));
    e.insert("ARAT_GROSS".into(), sum(items, &[17, 18, 19]));
    e.insert("ARAT_TOTAL".into(), items.iter().sum::<i64>() as f64);
    e
}

pub fn fss(items: &[i64]) -> Expected {
    Expected::from([("FSS_SCORE".to_string(), items.iter().sum::<i64>() as f64 / 9.0)])
}

pub fn hads(items: &[i64]) -> Expected {
    Expected::from([
        ("HADS_A".to_string(), sum(items, &[1, 3, 5, 7, 9, 11, 13])),
        ("HADS_D".to_string(), sum(items, &[2, 4, 6, 8, 10, 12, 14])),
    ])
}

pub fn bdi2(items: &[i64]) -> Expected {
    Expected::from([("BDI2_TOTAL".to_string(), items.iter().sum::<i64>() as f64)])
}

pub fn ess(items: &[i64]) -> Expected {
    Expected::from([("ESS_TOTAL".to_string(), items.iter().sum::<i64>() as f64)])
}

pub fn fsmc(items: &[i64]) -> Expected {
    let cog = sum(items, &[1, 2, 5, 7, 11, 12, 13, 15, 18, 19]);
    let motor = sum(items, &[3, 4, 6, 8, 9, 10, 14, 16, 17, 20]);
    Expected::from([
        ("FSMC_COG".to_string(), cog),
        ("FSMC_MOTOR".to_string(), motor),
        ("FSMC_TOTAL".to_string(), cog + motor),
    ])
}

pub fn sus(items: &[i64]) -> f64 {
    let odd: i64 = items.iter().step_by(2).map(|x| x - 1).sum();
    let even: i64 = items.iter().skip(1).step_by(2).map(|x| 5 - x).sum();
    (odd + even) as f64 * 2.5
}

pub fn walk(duration_s: f64) -> Expected {
    Expected::from([("WALK_SPEED".to_string(), 10.0 / duration_s)])
}

/// PAM values from the planted labels: activity and wear from the
/// unaffected wrist (right when unknown), arm use from both.
pub fn pam(plan: &DayPlan, affected: AffectedSide) -> Expected {
    let count = |c: EpochClass| plan.epochs.iter().filter(|e| e.class == c).count();
    let worn = plan.epochs.len() - count(EpochClass::NonWear);
    let active = |side: Side| plan.arm(side).iter().filter(|a| **a > 0).count() as f64 * 2.0;
    let (left, right) = (active(Side::Left), active(Side::Right));
    let mut e = Expected::from([
        ("WEAR_HOURS".to_string(), worn as f64 * 30_000.0 / 3_600_000.0),
        ("ACT_LOW_MIN".to_string(), count(EpochClass::Low) as f64 * 0.5),
        ("ACT_MODERATE_MIN".to_string(), count(EpochClass::Moderate) as f64 * 0.5),
        ("ACT_VIGOROUS_MIN".to_string(), count(EpochClass::Vigorous) as f64 * 0.5),
        ("ARM_ACTIVE_S_LEFT".to_string(), left),
        ("ARM_ACTIVE_S_RIGHT".to_string(), right),
    ]);
    let (aff, unaff) = match affected {
        AffectedSide::Left => (left, right),
        AffectedSide::Right => (right, left),
        AffectedSide::Unknown => return e,
    };
    if unaff > 0.0 {
        e.insert("ARM_USE_RATIO".into(), aff / unaff);
    }
    let lat = if aff + unaff > 0.0 { (unaff - aff) / (unaff + aff) } else { 0.0 };
    e.insert("LATERALITY".into(), lat);
    e
}
