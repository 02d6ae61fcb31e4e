//! ORU^R01 result messages: observation mapping, builder and the tolerant
//! batch extractor that reverses it.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use chrono::{DateTime, FixedOffset, NaiveDateTime, Utc};
use lhs_core::registry::registry;
use lhs_core::{ObservationResult, PatientId, PatientRecord, RecordId};
use serde::{Deserialize, Serialize};

use crate::message::{EncodingChars, Field, Hl7Message, Segment};

pub const OBSERVATION_MAP_TOML: &str = include_str!("../config/observation_map.toml");
pub const SENDING_APP: &str = "LHS";
pub const SENDING_FACILITY: &str = "CLINIC";
pub const RECEIVING_APP: &str = "EHR";
pub const HL7_VERSION: &str = "2.5";

static SHIPPED: LazyLock<ObservationMap> =
    LazyLock::new(|| ObservationMap::from_toml_str(OBSERVATION_MAP_TOML).expect("shipped observation map is valid"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueType {
    NM,
    ST,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub metric: String,
    pub value_type: ValueType,
    pub observation_id: String,
    pub text: String,
    pub units: String,
}

#[derive(Debug, Deserialize)]
struct MapFile {
    schema: String,
    version: String,
    observation: Vec<MappingEntry>,
}

#[derive(Debug, Clone)]
pub struct ObservationMap {
    pub version: String,
    by_metric: BTreeMap<String, MappingEntry>,
    by_observation_id: HashMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("observation map parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid observation map: {0}")]
    Invalid(String),
}

impl ObservationMap {
    pub fn shipped() -> &'static ObservationMap {
        &SHIPPED
    }

    /// Parses and checks the map is total over the metric registry with
    /// matching units and unique observation ids.
    pub fn from_toml_str(text: &str) -> Result<Self, MapError> {
        let file: MapFile = toml::from_str(text)?;
        if file.schema != "lhs-observation-map" {
            return Err(MapError::Invalid(format!("unexpected schema `{}`", file.schema)));
        }
        let mut by_metric = BTreeMap::new();
        let mut by_observation_id = HashMap::new();
        for e in file.observation {
            let def = registry()
                .metric(&e.metric)
                .ok_or_else(|| MapError::Invalid(format!("unknown metric {}", e.metric)))?;
            if def.unit != e.units {
                return Err(MapError::Invalid(format!("{}: units `{}` != registry `{}`", e.metric, e.units, def.unit)));
            }
            if by_observation_id.insert(e.observation_id.clone(), e.metric.clone()).is_some() {
                return Err(MapError::Invalid(format!("duplicate observation id {}", e.observation_id)));
            }
            if by_metric.insert(e.metric.clone(), e).is_some() {
                return Err(MapError::Invalid("duplicate metric entry".into()));
            }
        }
        if let Some(missing) = registry().metrics().find(|m| !by_metric.contains_key(&m.code)) {
            return Err(MapError::Invalid(format!("metric {} has no mapping", missing.code)));
        }
        Ok(ObservationMap { version: file.version, by_metric, by_observation_id })
    }

    pub fn entry(&self, metric: &str) -> Option<&MappingEntry> {
        self.by_metric.get(metric)
    }

    pub fn metric_for(&self, observation_id: &str) -> Option<&MappingEntry> {
        self.by_observation_id.get(observation_id).and_then(|m| self.by_metric.get(m))
    }

    pub fn entries(&self) -> impl Iterator<Item = &MappingEntry> {
        self.by_metric.values()
    }
}

pub fn format_ts(t: &DateTime<FixedOffset>) -> String {
    t.format("%Y%m%d%H%M%S%z").to_string()
}

pub fn format_ts_utc(t: &DateTime<Utc>) -> String {
    format_ts(&t.fixed_offset())
}

/// Accepts `YYYYMMDDHHMMSS` with an optional `±ZZZZ` offset (UTC if absent).
pub fn parse_ts(s: &str) -> Option<DateTime<FixedOffset>> {
    DateTime::parse_from_str(s, "%Y%m%d%H%M%S%z").ok().or_else(|| {
        NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S").ok().map(|n| n.and_utc().fixed_offset())
    })
}

/// Shortest decimal that parses back to the same f64.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OruError {
    #[error("no results to report")]
    EmptyResults,
    #[error("results belong to more than one patient")]
    MixedPatients,
    #[error("metric {0} has no observation mapping")]
    UnmappedMetric(String),
    #[error("result {0} is not a finite number")]
    NonFinite(String),
}

#[derive(Debug, Clone, Default)]
pub struct OruContext {
    pub generated_at: Option<DateTime<FixedOffset>>,
    pub control_id: String,
    /// Capture times per source record, written to OBR-7 when known.
    pub record_times: BTreeMap<RecordId, DateTime<FixedOffset>>,
}

pub fn msh_fields(message_type: &[&str], generated_at: &DateTime<FixedOffset>, control_id: &str) -> Vec<Field> {
    vec![
        Field::value(SENDING_APP),
        Field::value(SENDING_FACILITY),
        Field::value(RECEIVING_APP),
        Field::value(SENDING_FACILITY),
        Field::value(format_ts(generated_at)),
        Field::empty(),
        Field::components(message_type),
        Field::value(control_id),
        Field::value("P"),
        Field::value(HL7_VERSION),
    ]
}

pub fn build_oru(patient: &PatientRecord, results: &[ObservationResult], ctx: &OruContext) -> Result<Hl7Message, OruError> {
    build_oru_with(ObservationMap::shipped(), patient, results, ctx)
}

/// One OBR per source record in order of first appearance; OBX set-ids
/// restart at 1 under each OBR.
pub fn build_oru_with(
    map: &ObservationMap,
    patient: &PatientRecord,
    results: &[ObservationResult],
    ctx: &OruContext,
) -> Result<Hl7Message, OruError> {
    let Some(first) = results.first() else { return Err(OruError::EmptyResults) };
    if results.iter().any(|r| r.patient_id != patient.patient_id) {
        return Err(OruError::MixedPatients);
    }
    let generated_at = ctx.generated_at.unwrap_or_else(|| first.computed_at.fixed_offset());
    let mut msg = Hl7Message::new(EncodingChars::default(), msh_fields(&["ORU", "R01"], &generated_at, &ctx.control_id));
    let mut pid = Segment::new("PID", vec![]);
    pid.set(1, Field::value("1"));
    pid.set(3, Field::components(&[patient.patient_id.as_str(), "", "", "LHS", "PI"]));
    msg.segments.push(pid);

    let mut groups: Vec<(&RecordId, Vec<&ObservationResult>)> = Vec::new();
    for r in results {
        if !r.value.is_finite() {
            return Err(OruError::NonFinite(r.metric_code.clone()));
        }
        match groups.iter_mut().find(|(id, _)| **id == r.source_record_id) {
            Some((_, g)) => g.push(r),
            None => groups.push((&r.source_record_id, vec![r])),
        }
    }
    for (n, (record_id, group)) in groups.iter().enumerate() {
        let entry0 = map.entry(&group[0].metric_code).ok_or_else(|| OruError::UnmappedMetric(group[0].metric_code.clone()))?;
        let panel = registry().metric(&entry0.metric).map(|d| d.panel.clone()).unwrap_or_default();
        let mut obr = Segment::new("OBR", vec![]);
        obr.set(1, Field::value((n + 1).to_string()));
        obr.set(3, Field::value(record_id.as_str()));
        obr.set(4, Field::components(&[panel.as_str(), &registry().panel_text(&panel)]));
        if let Some(t) = ctx.record_times.get(*record_id) {
            obr.set(7, Field::value(format_ts(t)));
        }
        msg.segments.push(obr);
        for (i, r) in group.iter().enumerate() {
            let e = map.entry(&r.metric_code).ok_or_else(|| OruError::UnmappedMetric(r.metric_code.clone()))?;
            let mut obx = Segment::new("OBX", vec![]);
            obx.set(1, Field::value((i + 1).to_string()));
            obx.set(2, Field::value(match e.value_type {
                ValueType::NM => "NM",
                ValueType::ST => "ST",
            }));
            obx.set(3, Field::components(&[e.observation_id.as_str(), e.text.as_str()]));
            obx.set(5, Field::value(format_value(r.value)));
            obx.set(6, Field::value(e.units.as_str()));
            obx.set(11, Field::value("F"));
            obx.set(17, Field::value(r.derivation_version.as_str()));
            obx.set(19, Field::value(format_ts_utc(&r.computed_at)));
            msg.segments.push(obx);
        }
    }
    Ok(msg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedObservation {
    pub metric_code: String,
    pub value: f64,
    pub unit: String,
    pub derivation_version: String,
    pub computed_at: Option<DateTime<FixedOffset>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordCandidate {
    pub patient_id: PatientId,
    pub source_record_id: String,
    pub panel: String,
    pub observed_at: Option<DateTime<FixedOffset>>,
    pub message_control_id: String,
    pub observations: Vec<ExtractedObservation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractWarning {
    pub message_index: usize,
    pub control_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractBatch {
    pub records: Vec<RecordCandidate>,
    pub warnings: Vec<ExtractWarning>,
    /// Observation groups seen: one per OBR plus any OBX run before the first OBR.
    pub groups: usize,
    pub skipped_groups: usize,
}

pub fn extract_batch(messages: &[Hl7Message]) -> ExtractBatch {
    extract_batch_with(ObservationMap::shipped(), messages)
}

struct Group<'a> {
    obr: Option<&'a Segment>,
    obx: Vec<&'a Segment>,
}

fn groups_of(msg: &Hl7Message) -> Vec<Group<'_>> {
    let mut out: Vec<Group> = Vec::new();
    for seg in &msg.segments {
        match seg.id.as_str() {
            "OBR" => out.push(Group { obr: Some(seg), obx: vec![] }),
            "OBX" => match out.last_mut() {
                Some(g) => g.obx.push(seg),
                None => out.push(Group { obr: None, obx: vec![seg] }),
            },
            _ => {}
        }
    }
    out
}

/// Never fails: anything it cannot map becomes a warning and the group is
/// skipped, so `records + skipped_groups == groups`.
pub fn extract_batch_with(map: &ObservationMap, messages: &[Hl7Message]) -> ExtractBatch {
    let mut batch = ExtractBatch::default();
    for (idx, msg) in messages.iter().enumerate() {
        let control_id = msg.control_id().to_string();
        let groups = groups_of(msg);
        batch.groups += groups.len();
        let warn = |detail: String, batch: &mut ExtractBatch| {
            batch.warnings.push(ExtractWarning { message_index: idx, control_id: control_id.clone(), detail });
        };
        let ty = msg.message_type();
        if ty != ("ORU", "R01") {
            warn(format!("message type {}^{} carries no results; {} group(s) skipped", ty.0, ty.1, groups.len()), &mut batch);
            batch.skipped_groups += groups.len();
            continue;
        }
        let patient = msg
            .segments_with_id("PID")
            .next()
            .and_then(|p| p.field(3))
            .map(|f| f.first().to_string())
            .filter(|s| !s.is_empty());
        let Some(patient) = patient else {
            warn("ORU without PID-3 patient id".into(), &mut batch);
            batch.skipped_groups += groups.len();
            continue;
        };
        for g in groups {
            match extract_group(map, &g) {
                Ok(mut c) => {
                    c.patient_id = PatientId::new(patient.clone());
                    c.message_control_id = control_id.clone();
                    batch.records.push(c);
                }
                Err(detail) => {
                    warn(detail, &mut batch);
                    batch.skipped_groups += 1;
                }
            }
        }
    }
    batch
}

fn extract_group(map: &ObservationMap, g: &Group) -> Result<RecordCandidate, String> {
    let Some(obr) = g.obr else { return Err("OBX outside any OBR group".into()) };
    let record_id = obr.value(3).to_string();
    if g.obx.is_empty() {
        return Err(format!("OBR {record_id} has no OBX"));
    }
    let mut observations = Vec::with_capacity(g.obx.len());
    for obx in &g.obx {
        let obs_id = obx.value(3);
        let entry = map.metric_for(obs_id).ok_or_else(|| format!("unknown observation id `{obs_id}` in OBR {record_id}"))?;
        let raw = obx.value(5);
        let value: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| format!("non-numeric value `{raw}` for {obs_id}"))?;
        let unit = obx.value(6);
        if unit != entry.units {
            return Err(format!("{obs_id} units `{unit}` differ from `{}`", entry.units));
        }
        observations.push(ExtractedObservation {
            metric_code: entry.metric.clone(),
            value,
            unit: unit.to_string(),
            derivation_version: obx.value(17).to_string(),
            computed_at: parse_ts(obx.value(19)),
        });
    }
    Ok(RecordCandidate {
        patient_id: PatientId::new(""),
        source_record_id: record_id,
        panel: obr.field(4).and_then(|f| f.component(1)).unwrap_or("").to_string(),
        observed_at: parse_ts(obr.value(7)),
        message_control_id: String::new(),
        observations,
    })
}
