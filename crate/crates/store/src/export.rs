//! Observation export and import.
//!
//! One row per observation, sorted by patient, capture instant, record,
//! metric and derivation version. CSV is UTF-8, comma separated, LF line
//! endings, header always present, fields quoted only when they contain a
//! comma, quote or newline. NDJSON carries the same fields in the same
//! order, one JSON object per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate, SecondsFormat, Utc};
use lhs_core::registry::registry;
use lhs_core::{
    AffectedSide, AssessmentCode, AssessmentRecord, DeviceId, IsoWeekId, ObservationResult, PatientId,
    PatientRecord, RecordId, RecordStatus, StatusChange,
};
use serde::{Deserialize, Serialize};

use crate::state::{Op, State};
use crate::{Store, StoreError};

pub const EXPORT_COLUMNS: [&str; 10] = [
    "patient_id",
    "record_id",
    "assessment_code",
    "captured_at",
    "local_date",
    "metric_code",
    "value",
    "unit",
    "computed_at",
    "derivation_version",
];

/// Device id given to records recreated by [`import_rows`].
pub const IMPORT_DEVICE: &str = "import";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub patient_id: PatientId,
    pub record_id: RecordId,
    pub assessment_code: AssessmentCode,
    pub captured_at: DateTime<FixedOffset>,
    pub local_date: NaiveDate,
    pub metric_code: String,
    pub value: f64,
    pub unit: String,
    pub computed_at: DateTime<Utc>,
    pub derivation_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExportScope {
    All,
    Patient(PatientId),
    Metric(String),
    Cohort(String),
    Week(IsoWeekId),
}

impl fmt::Display for ExportScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExportScope::All => f.write_str("all"),
            ExportScope::Patient(p) => write!(f, "patient:{p}"),
            ExportScope::Metric(m) => write!(f, "metric:{m}"),
            ExportScope::Cohort(c) => write!(f, "cohort:{c}"),
            ExportScope::Week(w) => write!(f, "week:{w}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("unknown scope {0:?}")]
    UnknownScope(String),
    #[error("unknown format {0:?} (expected csv or ndjson)")]
    UnknownFormat(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl FromStr for ExportScope {
    type Err = ExportError;

    /// `all`, `patient:<id>`, `metric:<code>`, `cohort:<tag>` or `week:<YYYY-Www>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExportError::UnknownScope(s.to_string());
        if s == "all" {
            return Ok(ExportScope::All);
        }
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        if arg.is_empty() {
            return Err(bad());
        }
        match kind {
            "patient" => Ok(ExportScope::Patient(PatientId::new(arg))),
            "metric" if registry().metric(arg).is_some() => Ok(ExportScope::Metric(arg.to_string())),
            "cohort" => Ok(ExportScope::Cohort(arg.to_string())),
            "week" => arg.parse().map(ExportScope::Week).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Ndjson,
}

impl ExportFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Csv => "text/csv; charset=utf-8",
            ExportFormat::Ndjson => "application/x-ndjson",
        }
    }
}

impl FromStr for ExportFormat {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "ndjson" | "jsonl" => Ok(ExportFormat::Ndjson),
            other => Err(ExportError::UnknownFormat(other.to_string())),
        }
    }
}

/// Rows in scope, in export order. Patient scopes must name a live patient.
pub fn export_rows(state: &State, scope: &ExportScope) -> Result<Vec<ExportRow>, ExportError> {
    if let ExportScope::Patient(p) = scope {
        if state.patient(p).is_none() {
            return Err(ExportError::UnknownScope(scope.to_string()));
        }
    }
    let patient_ok = |p: &PatientId| match scope {
        ExportScope::Patient(q) => p == q,
        ExportScope::Cohort(tag) => state.patient(p).is_some_and(|r| r.cohort_tags.contains(tag)),
        _ => true,
    };
    let mut rows = Vec::new();
    for o in state.observations() {
        let Some(r) = state.record(&o.source_record_id) else { continue };
        if !patient_ok(&o.patient_id) {
            continue;
        }
        match scope {
            ExportScope::Metric(m) if &o.metric_code != m => continue,
            ExportScope::Week(w) if !w.contains(r.local_date()) => continue,
            _ => {}
        }
        rows.push(ExportRow {
            patient_id: o.patient_id.clone(),
            record_id: o.source_record_id.clone(),
            assessment_code: r.code,
            captured_at: r.captured_at,
            local_date: r.local_date(),
            metric_code: o.metric_code.clone(),
            value: o.value,
            unit: o.unit.clone(),
            computed_at: o.computed_at,
            derivation_version: o.derivation_version.clone(),
        });
    }
    rows.sort_by(|a, b| {
        (&a.patient_id, a.captured_at.with_timezone(&Utc), &a.record_id, &a.metric_code, &a.derivation_version).cmp(&(
            &b.patient_id,
            b.captured_at.with_timezone(&Utc),
            &b.record_id,
            &b.metric_code,
            &b.derivation_version,
        ))
    });
    Ok(rows)
}

fn fmt_ts<Tz: chrono::TimeZone>(t: &DateTime<Tz>) -> String
where
    Tz::Offset: fmt::Display,
{
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn csv_fields(r: &ExportRow) -> [String; 10] {
    [
        r.patient_id.to_string(),
        r.record_id.to_string(),
        r.assessment_code.as_str().to_string(),
        fmt_ts(&r.captured_at),
        r.local_date.to_string(),
        r.metric_code.clone(),
        // Shortest representation that parses back to the same f64.
        format!("{}", r.value),
        r.unit.clone(),
        fmt_ts(&r.computed_at),
        r.derivation_version.clone(),
    ]
}

pub fn write_export(rows: &[ExportRow], format: ExportFormat, out: &mut dyn Write) -> Result<(), ExportError> {
    write_export_part(rows, format, true, out)
}

/// One slice of an export. Concatenating the header part with the
/// following header-less parts gives exactly [`write_export`]'s output.
pub fn write_export_part(rows: &[ExportRow], format: ExportFormat, header: bool, out: &mut dyn Write) -> Result<(), ExportError> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
            let io = |e: csv::Error| ExportError::Io(std::io::Error::other(e));
            if header {
                w.write_record(EXPORT_COLUMNS).map_err(io)?;
            }
            for r in rows {
                w.write_record(csv_fields(r)).map_err(io)?;
            }
            w.flush()?;
        }
        ExportFormat::Ndjson => {
            for r in rows {
                serde_json::to_writer(&mut *out, r).map_err(std::io::Error::other)?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

pub fn read_export(bytes: &[u8], format: ExportFormat) -> Result<Vec<ExportRow>, ExportError> {
    match format {
        ExportFormat::Csv => {
            let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
            let header = rd.headers().map_err(|e| ExportError::Parse { line: 1, detail: e.to_string() })?;
            if header.iter().ne(EXPORT_COLUMNS.iter().copied()) {
                return Err(ExportError::Parse { line: 1, detail: "unexpected header".into() });
            }
            let mut rows = Vec::new();
            for (i, rec) in rd.records().enumerate() {
                let line = i + 2;
                let rec = rec.map_err(|e| ExportError::Parse { line, detail: e.to_string() })?;
                rows.push(parse_csv_row(&rec).map_err(|detail| ExportError::Parse { line, detail })?);
            }
            Ok(rows)
        }
        ExportFormat::Ndjson => bytes
            .split(|b| *b == b'\n')
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| serde_json::from_slice(l).map_err(|e| ExportError::Parse { line: i + 1, detail: e.to_string() }))
            .collect(),
    }
}

fn parse_csv_row(rec: &csv::StringRecord) -> Result<ExportRow, String> {
    let f = |i: usize| rec.get(i).ok_or_else(|| format!("missing column {}", EXPORT_COLUMNS[i]));
    Ok(ExportRow {
        patient_id: PatientId::new(f(0)?),
        record_id: RecordId::new(f(1)?),
        assessment_code: f(2)?.parse().map_err(|e| format!("{e}"))?,
        captured_at: DateTime::parse_from_rfc3339(f(3)?).map_err(|e| e.to_string())?,
        local_date: f(4)?.parse().map_err(|e: chrono::ParseError| e.to_string())?,
        metric_code: f(5)?.to_string(),
        value: f(6)?.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?,
        unit: f(7)?.to_string(),
        computed_at: DateTime::parse_from_rfc3339(f(8)?).map_err(|e| e.to_string())?.with_timezone(&Utc),
        derivation_version: f(9)?.to_string(),
    })
}

/// Distinct (patient, local day) pairs among rows from PAM assessments.
pub fn patient_days_in_export(rows: &[ExportRow]) -> BTreeSet<(PatientId, NaiveDate)> {
    rows.iter()
        .filter(|r| r.assessment_code.is_pam())
        .map(|r| (r.patient_id.clone(), r.local_date))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub patients_created: usize,
    pub records_created: usize,
    pub observations_imported: usize,
    pub observations_skipped: usize,
}

/// Loads exported rows into a store. Unknown patients and records are
/// recreated as stubs: affected side unknown, admission on the first day
/// seen, records in status `captured` from device `import` with no
/// payloads. Observations already present are skipped.
pub fn import_rows(store: &Store, rows: &[ExportRow]) -> Result<ImportReport, ExportError> {
    let mut report = ImportReport::default();
    let mut by_record: BTreeMap<&RecordId, Vec<&ExportRow>> = BTreeMap::new();
    let mut first_day: BTreeMap<&PatientId, NaiveDate> = BTreeMap::new();
    for r in rows {
        by_record.entry(&r.record_id).or_default().push(r);
        let d = first_day.entry(&r.patient_id).or_insert(r.local_date);
        *d = (*d).min(r.local_date);
    }
    {
        let mut ops = Vec::new();
        let st = store.read();
        for (p, day) in &first_day {
            if st.patient(p).is_none() {
                ops.push(Op::PutPatient { patient: PatientRecord::new((*p).clone(), AffectedSide::Unknown, *day) });
            }
        }
        drop(st);
        report.patients_created = ops.len();
        store.commit(ops)?;
    }
    for (rid, group) in by_record {
        let head = group[0];
        let mut ops = Vec::new();
        let existing = store.read().record(rid).map(|r| r.patient_id.clone());
        match existing {
            Some(owner) if owner != head.patient_id => {
                return Err(StoreError::Integrity(format!("record {rid} belongs to {owner}, not {}", head.patient_id)).into())
            }
            Some(_) => {}
            None => {
                let at = head.captured_at.with_timezone(&Utc);
                ops.push(Op::PutRecord {
                    record: AssessmentRecord {
                        record_id: rid.clone(),
                        patient_id: head.patient_id.clone(),
                        code: head.assessment_code,
                        captured_at: head.captured_at,
                        device_id: DeviceId::new(IMPORT_DEVICE),
                        payloads: Vec::new(),
                        status: RecordStatus::Captured,
                        status_history: vec![StatusChange { status: RecordStatus::Captured, at }],
                        duplicate_of: None,
                    },
                });
                report.records_created += 1;
            }
        }
        let st = store.read();
        for r in group {
            let o = ObservationResult {
                patient_id: r.patient_id.clone(),
                source_record_id: r.record_id.clone(),
                metric_code: r.metric_code.clone(),
                value: r.value,
                unit: r.unit.clone(),
                computed_at: r.computed_at,
                derivation_version: r.derivation_version.clone(),
            };
            if st.observation(&crate::ObsKey::of(&o)).is_some() {
                report.observations_skipped += 1;
            } else {
                ops.push(Op::PutObservation { observation: o });
                report.observations_imported += 1;
            }
        }
        drop(st);
        store.commit(ops)?;
    }
    Ok(report)
}
