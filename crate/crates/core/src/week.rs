use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// ISO 8601 week, written `2025-W02`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IsoWeekId {
    pub year: i32,
    pub week: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid ISO week `{0}`, expected YYYY-Www")]
pub struct BadIsoWeek(pub String);

impl IsoWeekId {
    pub fn new(year: i32, week: u32) -> Option<Self> {
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).map(|_| IsoWeekId { year, week })
    }

    pub fn of(date: NaiveDate) -> Self {
        let w = date.iso_week();
        IsoWeekId { year: w.year(), week: w.week() }
    }

    pub fn monday(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon).expect("validated week")
    }

    pub fn contains(self, date: NaiveDate) -> bool {
        IsoWeekId::of(date) == self
    }

    pub fn days(self) -> impl Iterator<Item = NaiveDate> {
        let m = self.monday();
        (0..7).map(move |i| m + chrono::Duration::days(i))
    }
}

impl fmt::Display for IsoWeekId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-W{:02}", self.year, self.week)
    }
}

impl FromStr for IsoWeekId {
    type Err = BadIsoWeek;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadIsoWeek(s.to_string());
        let (y, w) = s.split_once("-W").ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let week = w.parse().map_err(|_| bad())?;
        IsoWeekId::new(year, week).ok_or_else(bad)
    }
}

impl Serialize for IsoWeekId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IsoWeekId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
