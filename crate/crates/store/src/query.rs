//! Read-side queries over a consistent [`State`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use lhs_core::registry::registry;
use lhs_core::submission::DeviceDescriptor;
use lhs_core::{
    AssessmentRecord, DeviceId, IsoWeekId, ObservationResult, PatientId, PatientRecord, RecordId, SeriesPoint,
    TrajectorySeries,
};
use serde::{Deserialize, Serialize};

use crate::jobs::Job;
use crate::state::{ObsKey, Reintegration, ReturnEntry, State};
use crate::StoreError;

/// Inclusive instant range; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl TimeRange {
    pub fn all() -> Self {
        TimeRange::default()
    }

    pub fn contains<Tz: chrono::TimeZone>(&self, t: &DateTime<Tz>) -> bool {
        let t = t.with_timezone(&Utc);
        self.from.map_or(true, |f| t >= f) && self.to.map_or(true, |e| t <= e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Median,
    Count,
    Stddev,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Count => "count",
            Statistic::Stddev => "stddev",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown statistic {0:?} (expected mean, median, count or stddev)")]
pub struct UnknownStatistic(pub String);

impl FromStr for Statistic {
    type Err = UnknownStatistic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            "count" => Ok(Statistic::Count),
            "stddev" => Ok(Statistic::Stddev),
            other => Err(UnknownStatistic(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAggregate {
    pub metric_code: String,
    pub statistic: Statistic,
    /// Null for mean, median and stddev over zero patients.
    pub value: Option<f64>,
    pub n: usize,
}

/// Mean, median, count or population standard deviation.
pub fn statistic(values: &[f64], stat: Statistic) -> Option<f64> {
    let n = values.len();
    if stat == Statistic::Count {
        return Some(n as f64);
    }
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    Some(match stat {
        Statistic::Mean => mean,
        Statistic::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        }
        Statistic::Stddev => (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt(),
        Statistic::Count => unreachable!(),
    })
}

impl State {
    pub fn patient(&self, id: &PatientId) -> Option<&PatientRecord> {
        self.patients.get(id)
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.values()
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceDescriptor> {
        self.devices.get(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceDescriptor> {
        self.devices.values()
    }

    pub fn record(&self, id: &RecordId) -> Option<&AssessmentRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &AssessmentRecord> {
        self.records.values()
    }

    pub fn records_of(&self, patient: &PatientId) -> impl Iterator<Item = &AssessmentRecord> {
        self.records_by_patient.get(patient).into_iter().flatten().filter_map(|r| self.records.get(r))
    }

    pub fn observations(&self) -> impl Iterator<Item = &ObservationResult> {
        self.observations.values()
    }

    pub fn observation_count(&self) -> usize {
        self.observations.len()
    }

    pub fn observation(&self, key: &ObsKey) -> Option<&ObservationResult> {
        self.observations.get(key)
    }

    pub fn observations_of_record<'a>(&'a self, record: &'a RecordId) -> impl Iterator<Item = &'a ObservationResult> + 'a {
        let start = ObsKey { record_id: record.clone(), metric_code: String::new(), derivation_version: String::new() };
        self.observations.range(start..).take_while(move |(k, _)| &k.record_id == record).map(|(_, v)| v)
    }

    /// First record whose payload digests equal `hashes` (order-insensitive).
    pub fn record_with_payloads(&self, hashes: &[lhs_core::ContentHash]) -> Option<&RecordId> {
        let mut k = hashes.to_vec();
        k.sort();
        self.first_by_payloads.get(&k)
    }

    pub fn job(&self, id: &str) -> Option<&Job> {
        self.jobs.get(id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values()
    }

    pub fn job_for_record(&self, record: &RecordId) -> Option<&Job> {
        self.job_by_record.get(record).and_then(|j| self.jobs.get(j))
    }

    pub fn reintegration(&self, record: &RecordId) -> Option<&Reintegration> {
        self.reintegrations.get(record)
    }

    pub fn reintegrations(&self) -> impl Iterator<Item = &Reintegration> {
        self.reintegrations.values()
    }

    pub fn returns(&self) -> &[ReturnEntry] {
        &self.returns
    }

    pub fn is_returned(&self, key: &ObsKey) -> bool {
        self.returned.contains(key)
    }

    pub fn is_erased(&self, patient: &PatientId) -> bool {
        self.erased.contains_key(patient)
    }

    /// One point per record: the value with the latest `computed_at` (then
    /// highest derivation version). Records sharing a capture instant keep
    /// the one with the greater record id so timestamps stay strictly
    /// increasing.
    pub fn series(&self, patient: &PatientId, metric: &str, range: TimeRange) -> Result<TrajectorySeries, StoreError> {
        if !self.patients.contains_key(patient) {
            return Err(StoreError::UnknownPatient(patient.clone()));
        }
        let mut by_instant: BTreeMap<DateTime<Utc>, (&RecordId, DateTime<FixedOffset>, &ObservationResult)> = BTreeMap::new();
        for r in self.records_of(patient) {
            if !range.contains(&r.captured_at) {
                continue;
            }
            let best = self
                .observations_of_record(&r.record_id)
                .filter(|o| o.metric_code == metric)
                .max_by(|a, b| (a.computed_at, &a.derivation_version).cmp(&(b.computed_at, &b.derivation_version)));
            if let Some(o) = best {
                let at = r.captured_at.with_timezone(&Utc);
                match by_instant.get(&at) {
                    Some((rid, _, _)) if *rid > &r.record_id => {}
                    _ => {
                        by_instant.insert(at, (&r.record_id, r.captured_at, o));
                    }
                }
            }
        }
        let points = by_instant.into_values().map(|(_, at, o)| SeriesPoint { at, value: o.value }).collect();
        let unit = registry().metric(metric).map(|m| m.unit.clone());
        TrajectorySeries::new(patient.clone(), metric, unit, points).map_err(|e| StoreError::Integrity(e.to_string()))
    }

    /// Latest value per patient with a capture in `range`.
    pub fn latest_per_patient(&self, metric: &str, range: TimeRange) -> BTreeMap<PatientId, f64> {
        let mut out = BTreeMap::new();
        for p in self.patients.keys() {
            if let Ok(s) = self.series(p, metric, range) {
                if let Some(last) = s.points.last() {
                    out.insert(p.clone(), last.value);
                }
            }
        }
        out
    }

    pub fn cohort_aggregate(&self, metric: &str, stat: Statistic, range: TimeRange) -> CohortAggregate {
        let values: Vec<f64> = self.latest_per_patient(metric, range).into_values().collect();
        CohortAggregate { metric_code: metric.to_string(), statistic: stat, value: statistic(&values, stat), n: values.len() }
    }

    /// Distinct (patient, clinic-local day) pairs with at least one PAM record.
    pub fn patient_days(&self) -> BTreeSet<(PatientId, NaiveDate)> {
        self.records
            .values()
            .filter(|r| r.code.is_pam())
            .map(|r| (r.patient_id.clone(), r.local_date()))
            .collect()
    }

    /// Records captured in the clinic-local ISO week.
    pub fn records_in_week<'a>(&'a self, patient: &'a PatientId, week: IsoWeekId) -> impl Iterator<Item = &'a AssessmentRecord> + 'a {
        self.records_of(patient).filter(move |r| week.contains(r.local_date()))
    }
}
