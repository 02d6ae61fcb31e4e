//! Tablet payloads: questionnaire item vectors and therapist-entered scores.
//!
//! All tablet payloads are JSON objects keyed by `instrument`:
//!
//! ```text
//! {"instrument":"FSS","item_count":9,"items":[4,5,3,6,2,4,5,3,4]}
//! {"instrument":"ARAT","item_count":19,"items":[3,3,2,...]}
//! {"instrument":"WALK10M","distance_m":10,"duration_s":8.0}
//! {"instrument":"FDA","item_count":28,"items":[...]}
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Instrument {
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
    #[serde(rename = "SUS")]
    Sus,
    #[serde(rename = "ARAT")]
    Arat,
}

impl Instrument {
    pub const ALL: [Instrument; 7] = [
        Instrument::Fss,
        Instrument::Hads,
        Instrument::Bdi2,
        Instrument::Ess,
        Instrument::Fsmc,
        Instrument::Sus,
        Instrument::Arat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Instrument::Fss => "FSS",
            Instrument::Hads => "HADS",
            Instrument::Bdi2 => "BDI2",
            Instrument::Ess => "ESS",
            Instrument::Fsmc => "FSMC",
            Instrument::Sus => "SUS",
            Instrument::Arat => "ARAT",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Instrument::Fss => 9,
            Instrument::Hads => 14,
            Instrument::Bdi2 => 21,
            Instrument::Ess => 8,
            Instrument::Fsmc => 20,
            Instrument::Sus => 10,
            Instrument::Arat => 19,
        }
    }

    /// Closed per-item range.
    pub fn item_range(self) -> (u8, u8) {
        match self {
            Instrument::Fss => (1, 7),
            Instrument::Hads | Instrument::Bdi2 | Instrument::Ess | Instrument::Arat => (0, 3),
            Instrument::Fsmc | Instrument::Sus => (1, 5),
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ItemError {
    #[error("unknown instrument `{0}`")]
    UnknownInstrument(String),
    #[error("{instrument} expects {expected} items, got {actual}")]
    ArityError { instrument: String, expected: usize, actual: usize },
    #[error("{instrument} item {position} = {value} outside [{min}, {max}]")]
    RangeError { instrument: String, position: usize, value: i64, min: u8, max: u8 },
    #[error("malformed tablet payload: {0}")]
    Malformed(String),
}

impl FromStr for Instrument {
    type Err = ItemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ItemError::UnknownInstrument(s.to_string()))
    }
}

/// Validated item vector. Construction enforces arity and per-item range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemVector {
    instrument: Instrument,
    items: Vec<u8>,
}

impl ItemVector {
    pub fn new(instrument: Instrument, items: &[i64]) -> Result<Self, ItemError> {
        if items.len() != instrument.arity() {
            return Err(ItemError::ArityError {
                instrument: instrument.to_string(),
                expected: instrument.arity(),
                actual: items.len(),
            });
        }
        let (min, max) = instrument.item_range();
        let mut out = Vec::with_capacity(items.len());
        for (i, &v) in items.iter().enumerate() {
            if v < i64::from(min) || v > i64::from(max) {
                return Err(ItemError::RangeError {
                    instrument: instrument.to_string(),
                    position: i + 1,
                    value: v,
                    min,
                    max,
                });
            }
            out.push(v as u8);
        }
        Ok(ItemVector { instrument, items: out })
    }

    pub fn instrument(&self) -> Instrument {
        self.instrument
    }

    pub fn items(&self) -> &[u8] {
        &self.items
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let raw = RawItems {
            instrument: self.instrument.as_str().to_string(),
            item_count: self.items.len(),
            items: self.items.iter().map(|&v| i64::from(v)).collect(),
        };
        serde_json::to_vec(&raw).expect("item payload serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkTiming {
    pub distance_m: f64,
    pub duration_s: f64,
}

impl WalkTiming {
    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(&serde_json::json!({
            "instrument": "WALK10M",
            "distance_m": self.distance_m,
            "duration_s": self.duration_s,
        }))
        .expect("walk payload serializes")
    }
}

/// Therapist rating sheet for instruments without computed metrics (FDA, BoDyS).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSheet {
    pub instrument: String,
    pub items: Vec<i64>,
}

impl RatingSheet {
    pub fn to_payload(&self) -> Vec<u8> {
        let raw = RawItems {
            instrument: self.instrument.clone(),
            item_count: self.items.len(),
            items: self.items.clone(),
        };
        serde_json::to_vec(&raw).expect("rating payload serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TabletPayload {
    Items(ItemVector),
    Walk(WalkTiming),
    Rating(RatingSheet),
}

impl TabletPayload {
    pub fn instrument_code(&self) -> &str {
        match self {
            TabletPayload::Items(v) => v.instrument().as_str(),
            TabletPayload::Walk(_) => "WALK10M",
            TabletPayload::Rating(r) => &r.instrument,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawItems {
    instrument: String,
    item_count: usize,
    items: Vec<i64>,
}

#[derive(Debug, Deserialize)]
struct Head {
    instrument: String,
}

pub fn parse_tablet_payload(bytes: &[u8]) -> Result<TabletPayload, ItemError> {
    let malformed = |e: serde_json::Error| ItemError::Malformed(e.to_string());
    let head: Head = serde_json::from_slice(bytes).map_err(malformed)?;
    match head.instrument.to_ascii_uppercase().as_str() {
        "WALK10M" => {
            let walk: WalkTiming = serde_json::from_slice(bytes).map_err(malformed)?;
            Ok(TabletPayload::Walk(walk))
        }
        "FDA" | "BODYS" => {
            let raw: RawItems = serde_json::from_slice(bytes).map_err(malformed)?;
            check_count(&raw)?;
            Ok(TabletPayload::Rating(RatingSheet {
                instrument: raw.instrument.to_ascii_uppercase(),
                items: raw.items,
            }))
        }
        other => {
            let instrument: Instrument = other.parse()?;
            let raw: RawItems = serde_json::from_slice(bytes).map_err(malformed)?;
            check_count(&raw)?;
            Ok(TabletPayload::Items(ItemVector::new(instrument, &raw.items)?))
        }
    }
}

fn check_count(raw: &RawItems) -> Result<(), ItemError> {
    if raw.item_count != raw.items.len() {
        return Err(ItemError::ArityError {
            instrument: raw.instrument.clone(),
            expected: raw.item_count,
            actual: raw.items.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_and_range_per_instrument() {
        for inst in Instrument::ALL {
            let (min, max) = inst.item_range();
            let ok = vec![i64::from(min); inst.arity()];
            assert!(ItemVector::new(inst, &ok).is_ok());
            let short = vec![i64::from(min); inst.arity() - 1];
            assert!(matches!(ItemVector::new(inst, &short), Err(ItemError::ArityError { .. })));
            let mut high = ok.clone();
            high[0] = i64::from(max) + 1;
            assert!(matches!(
                ItemVector::new(inst, &high),
                Err(ItemError::RangeError { position: 1, .. })
            ));
            let mut low = ok;
            low[inst.arity() - 1] = i64::from(min) - 1;
            assert!(matches!(ItemVector::new(inst, &low), Err(ItemError::RangeError { .. })));
        }
    }

    #[test]
    fn declared_arities() {
        let arities: Vec<_> = Instrument::ALL.iter().map(|i| (i.as_str(), i.arity())).collect();
        assert_eq!(
            arities,
            [("FSS", 9), ("HADS", 14), ("BDI2", 21), ("ESS", 8), ("FSMC", 20), ("SUS", 10), ("ARAT", 19)]
        );
    }

    #[test]
    fn payload_roundtrip() {
        let v = ItemVector::new(Instrument::Fss, &[4, 5, 3, 6, 2, 4, 5, 3, 4]).unwrap();
        assert_eq!(parse_tablet_payload(&v.to_payload()).unwrap(), TabletPayload::Items(v));
        let w = WalkTiming { distance_m: 10.0, duration_s: 8.0 };
        assert_eq!(parse_tablet_payload(&w.to_payload()).unwrap(), TabletPayload::Walk(w));
        let r = RatingSheet { instrument: "FDA".into(), items: vec![1, 2, 3] };
        assert_eq!(parse_tablet_payload(&r.to_payload()).unwrap(), TabletPayload::Rating(r));
    }

    #[test]
    fn count_mismatch_and_unknown_instrument() {
        let bad = br#"{"instrument":"FSS","item_count":8,"items":[1,1,1,1,1,1,1,1,1]}"#;
        assert!(matches!(parse_tablet_payload(bad), Err(ItemError::ArityError { .. })));
        let unknown = br#"{"instrument":"MOCA","item_count":1,"items":[1]}"#;
        assert!(matches!(parse_tablet_payload(unknown), Err(ItemError::UnknownInstrument(_))));
        assert!(matches!(parse_tablet_payload(b"not json"), Err(ItemError::Malformed(_))));
    }
}
