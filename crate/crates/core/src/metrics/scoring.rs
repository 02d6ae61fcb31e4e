//! Item-based scoring: ARAT, walking speed and the questionnaire instruments.

use serde::{Deserialize, Serialize};

use crate::metrics::config::DerivationConfig;
use crate::payload::questionnaire::{Instrument, ItemError, ItemVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error(transparent)]
    Items(#[from] ItemError),
    #[error("expected {expected} items, got {actual}")]
    WrongInstrument { expected: Instrument, actual: Instrument },
    #[error("walking duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("walking distance must be positive, got {0}")]
    NonPositiveDistance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub code: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AratScore {
    pub total: u32,
    pub grasp: u32,
    pub grip: u32,
    pub pinch: u32,
    pub gross: u32,
}

fn sum_positions(items: &[u8], positions: &[usize]) -> u32 {
    positions.iter().map(|&p| u32::from(items[p - 1])).sum()
}

fn expect(items: &ItemVector, inst: Instrument) -> Result<(), ScoringError> {
    if items.instrument() != inst {
        return Err(ScoringError::WrongInstrument { expected: inst, actual: items.instrument() });
    }
    Ok(())
}

pub fn score_arat(items: &ItemVector, cfg: &DerivationConfig) -> Result<AratScore, ScoringError> {
    expect(items, Instrument::Arat)?;
    let v = items.items();
    let m = &cfg.arat;
    Ok(AratScore {
        total: v.iter().map(|&x| u32::from(x)).sum(),
        grasp: sum_positions(v, &m.grasp),
        grip: sum_positions(v, &m.grip),
        pinch: sum_positions(v, &m.pinch),
        gross: sum_positions(v, &m.gross),
    })
}

/// Raw items in, ARAT score out; arity and range checked.
pub fn score_arat_items(items: &[i64], cfg: &DerivationConfig) -> Result<AratScore, ScoringError> {
    score_arat(&ItemVector::new(Instrument::Arat, items)?, cfg)
}

pub fn walking_speed(distance_m: f64, duration_s: f64) -> Result<f64, ScoringError> {
    if !(duration_s > 0.0) {
        return Err(ScoringError::NonPositiveDuration(duration_s));
    }
    if !(distance_m > 0.0) {
        return Err(ScoringError::NonPositiveDistance(distance_m));
    }
    Ok(distance_m / duration_s)
}

/// Scores any item vector into its metric values, in registry order.
pub fn score_questionnaire(items: &ItemVector, cfg: &DerivationConfig) -> Vec<MetricValue> {
    let v = items.items();
    let total = v.iter().map(|&x| u32::from(x)).sum::<u32>();
    let mv = |code, value: u32| MetricValue { code, value: f64::from(value) };
    match items.instrument() {
        Instrument::Fss => vec![MetricValue { code: "FSS_SCORE", value: f64::from(total) / 9.0 }],
        Instrument::Hads => vec![
            mv("HADS_A", sum_positions(v, &cfg.hads.anxiety)),
            mv("HADS_D", sum_positions(v, &cfg.hads.depression)),
        ],
        Instrument::Bdi2 => vec![mv("BDI2_TOTAL", total)],
        Instrument::Ess => vec![mv("ESS_TOTAL", total)],
        Instrument::Fsmc => vec![
            mv("FSMC_MOTOR", sum_positions(v, &cfg.fsmc.motor)),
            mv("FSMC_COG", sum_positions(v, &cfg.fsmc.cognitive)),
            mv("FSMC_TOTAL", total),
        ],
        Instrument::Sus => {
            let raw: i32 = v
                .iter()
                .enumerate()
                .map(|(i, &x)| if i % 2 == 0 { i32::from(x) - 1 } else { 5 - i32::from(x) })
                .sum();
            vec![MetricValue { code: "SUS_SCORE", value: f64::from(raw) * 2.5 }]
        }
        Instrument::Arat => {
            let s = score_arat(items, cfg).expect("instrument checked");
            vec![
                mv("ARAT_TOTAL", s.total),
                mv("ARAT_GRASP", s.grasp),
                mv("ARAT_GRIP", s.grip),
                mv("ARAT_PINCH", s.pinch),
                mv("ARAT_GROSS", s.gross),
            ]
        }
    }
}

/// Parses the instrument code, validates the items and scores them.
pub fn score_raw(instrument: &str, items: &[i64], cfg: &DerivationConfig) -> Result<Vec<MetricValue>, ScoringError> {
    let inst: Instrument = instrument.parse()?;
    Ok(score_questionnaire(&ItemVector::new(inst, items)?, cfg))
}
