//! Cohort generation: schedule, item vectors, wrist recordings and the
//! matching planting record.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Utc};
use lhs_core::payload::questionnaire::{Instrument, ItemVector, RatingSheet, WalkTiming};
use lhs_core::registry::registry;
use lhs_core::submission::{DeviceDescriptor, DeviceKind, PayloadPart, SubmissionEnvelope};
use lhs_core::{AffectedSide, AssessmentCode, DeviceId, PatientId, PatientRecord, PayloadKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::expected;
use crate::planting::{PamPlanting, PatientPlanting, PlantedCapture, PlantingRecord, Recovery, ScheduledSlot, PLANTING_FORMAT, PLANTING_VERSION};
use crate::signal::{plan_day, EpochClass, PlanParams, ACTIVE_STDDEV_MG, EPOCHS_PER_HOUR, EPOCH_MS};
use crate::spec::CohortSpec;
use crate::SynthError;

/// One generated submission in capture order.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub seq: u64,
    pub envelope: SubmissionEnvelope,
}

impl Submission {
    pub fn file_name(&self) -> String {
        format!("{:06}-{}-{}.json", self.seq, self.envelope.patient_id, self.envelope.code)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub devices: Vec<DeviceDescriptor>,
    pub planting: PlantingRecord,
}

pub fn patient_id(index: usize) -> PatientId {
    PatientId::new(format!("P{:03}", index + 1))
}

pub fn tablet_id(p: &PatientId) -> DeviceId {
    DeviceId::new(format!("tab-{p}"))
}

pub fn wrist_id(p: &PatientId) -> DeviceId {
    DeviceId::new(format!("imu-{p}"))
}

pub fn microphone_id(p: &PatientId) -> DeviceId {
    DeviceId::new(format!("mic-{p}"))
}

/// Weekdays (0 = Monday) on which a code with `per_week` captures is due.
pub fn weekdays(per_week: u32) -> Vec<u32> {
    match per_week {
        2 => vec![1, 3],
        3 => vec![0, 2, 4],
        5 => vec![0, 1, 2, 3, 4],
        n => (0..n.min(7)).map(|i| i * 7 / n.min(7)).collect(),
    }
}

fn local_time(code: AssessmentCode) -> NaiveTime {
    use AssessmentCode::*;
    let (h, m) = match code {
        PamActivity | PamArmUse => (7, 0),
        Arat => (10, 0),
        Walk10m => (10, 30),
        Fda => (11, 0),
        Bodys => (11, 30),
        Fss => (13, 0),
        Hads => (13, 10),
        Bdi2 => (13, 20),
        Ess => (13, 30),
        Fsmc => (13, 40),
    };
    NaiveTime::from_hms_opt(h, m, 0).unwrap()
}

fn instrument(code: AssessmentCode) -> Option<Instrument> {
    Some(match code {
        AssessmentCode::Fss => Instrument::Fss,
        AssessmentCode::Hads => Instrument::Hads,
        AssessmentCode::Bdi2 => Instrument::Bdi2,
        AssessmentCode::Ess => Instrument::Ess,
        AssessmentCode::Fsmc => Instrument::Fsmc,
        _ => return None,
    })
}

fn random_items<R: Rng>(rng: &mut R, instr: Instrument) -> Vec<i64> {
    let (lo, hi) = instr.item_range();
    (0..instr.arity()).map(|_| rng.random_range(i64::from(lo)..=i64::from(hi))).collect()
}

/// ARAT items realizing `total`: every item gets `total / 19`, the first
/// `total % 19` one more.
pub fn arat_items(total: i64) -> Vec<i64> {
    let (q, r) = (total / 19, total % 19);
    (0..19).map(|i| q + i64::from(i < r)).collect()
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// SUS items near a score drawn around 84 with spread 5.
fn sus_items<R: Rng>(rng: &mut R) -> Vec<i64> {
    let target = (84.0 + 5.0 * standard_normal(rng)).clamp(0.0, 100.0);
    let raw = ((target / 2.5).round() as i64).clamp(0, 40);
    let mut contrib = vec![raw / 10; 10];
    let mut order: Vec<usize> = (0..10).collect();
    for i in (1..10).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for &i in order.iter().take((raw % 10) as usize) {
        contrib[i] += 1;
    }
    contrib.iter().enumerate().map(|(i, c)| if i % 2 == 0 { c + 1 } else { 5 - c }).collect()
}

fn affected_side(index: usize) -> AffectedSide {
    if index % 2 == 0 {
        AffectedSide::Left
    } else {
        AffectedSide::Right
    }
}

fn members(spec: &CohortSpec, tz: FixedOffset) -> (Vec<PatientRecord>, Vec<DeviceDescriptor>) {
    let registered: DateTime<Utc> = tz.from_local_datetime(&spec.start_date.and_hms_opt(0, 0, 0).unwrap()).unwrap().to_utc();
    let mut patients = Vec::new();
    let mut devices = Vec::new();
    for i in 0..spec.n_patients {
        let id = patient_id(i);
        let side = affected_side(i);
        let mut p = PatientRecord::new(id.clone(), side, spec.start_date);
        p.cohort_tags.insert("synthetic".into());
        p.cohort_tags.insert(if side == AffectedSide::Left { "affected-left" } else { "affected-right" }.into());
        patients.push(p);
        for (device_id, kind) in [(tablet_id(&id), DeviceKind::Tablet), (wrist_id(&id), DeviceKind::WristImuPair), (microphone_id(&id), DeviceKind::Microphone)] {
            devices.push(DeviceDescriptor { device_id, device_kind: kind, firmware_version: "synth-1".into(), registered_at: registered });
        }
    }
    (patients, devices)
}

fn arm_symbols(amps: &[i64]) -> String {
    amps.iter()
        .map(|a| match *a {
            0 => '0',
            ACTIVE_STDDEV_MG => 't',
            _ => '1',
        })
        .collect()
}

/// Generates the cohort, handing each submission to `emit` as soon as it
/// exists so callers never hold every recording at once.
pub fn generate(
    spec: &CohortSpec,
    emit: &mut dyn FnMut(Submission) -> Result<(), SynthError>,
) -> Result<Cohort, SynthError> {
    spec.validate()?;
    let tz = FixedOffset::east_opt(spec.utc_offset_minutes * 60).expect("validated offset");
    let (patients, devices) = members(spec, tz);
    let mut seq = 0u64;
    let mut planted = Vec::with_capacity(spec.n_patients);
    for (index, patient) in patients.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64 + 1);
        planted.push(generate_patient(spec, tz, index, patient, &mut rng, &mut seq, emit)?);
    }
    let planting = PlantingRecord { format: PLANTING_FORMAT.into(), version: PLANTING_VERSION, spec: spec.clone(), patients: planted };
    Ok(Cohort { patients, devices, planting })
}

fn generate_patient(
    spec: &CohortSpec,
    tz: FixedOffset,
    index: usize,
    patient: &PatientRecord,
    rng: &mut ChaCha8Rng,
    seq: &mut u64,
    emit: &mut dyn FnMut(Submission) -> Result<(), SynthError>,
) -> Result<PatientPlanting, SynthError> {
    let pid = &patient.patient_id;
    let r = &spec.recovery;
    let baseline = rng.random_range(r.baseline[0]..=r.baseline[1]);
    let plateau = rng.random_range(r.plateau[0].max(baseline)..=r.plateau[1].max(baseline));
    let recovery = Recovery {
        baseline,
        plateau,
        rate: rng.random_range(r.rate[0]..=r.rate[1]),
        midpoint_day: f64::from(spec.days) * rng.random_range(0.3..=0.7),
    };
    let sus = sus_items(rng);
    let mut out = PatientPlanting {
        patient_id: pid.clone(),
        affected_side: patient.affected_side,
        recovery,
        sus_score: expected::sus(&sus),
        sus_items: sus,
        schedule: Vec::new(),
        captures: Vec::new(),
    };
    let battery: Vec<_> = registry().assessments().iter().filter(|d| !d.code.is_pam()).map(|d| (d.code, weekdays(d.per_week))).collect();
    for day in 0..spec.days {
        let date: NaiveDate = spec.start_date + Duration::days(i64::from(day));
        let weekday = date.weekday().num_days_from_monday();
        // The two PAM rows share one daily wrist recording.
        let pam_code = if day % 2 == 0 { AssessmentCode::PamActivity } else { AssessmentCode::PamArmUse };
        let mut due = vec![pam_code];
        due.extend(battery.iter().filter(|(_, days)| days.contains(&weekday)).map(|(c, _)| *c));
        due.sort_by_key(|c| local_time(*c));
        for code in due {
            let captured = rng.random_bool(spec.adherence);
            let slot_seq = captured.then(|| {
                *seq += 1;
                *seq
            });
            out.schedule.push(ScheduledSlot { date, code, seq: slot_seq });
            let Some(s) = slot_seq else { continue };
            let at = tz.from_local_datetime(&date.and_time(local_time(code))).unwrap();
            let (parts, device, capture) = build_capture(spec, rng, &out.recovery, patient.affected_side, pid, code, day, s, at);
            out.captures.push(capture);
            let envelope = SubmissionEnvelope { patient_id: pid.clone(), code, captured_at: at, device_id: device, parts, client_schema_version: 1 };
            emit(Submission { seq: s, envelope })?;
        }
    }
    let _ = index;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn build_capture(
    spec: &CohortSpec,
    rng: &mut ChaCha8Rng,
    recovery: &Recovery,
    affected: AffectedSide,
    pid: &PatientId,
    code: AssessmentCode,
    day: u32,
    seq: u64,
    at: DateTime<FixedOffset>,
) -> (Vec<PayloadPart>, DeviceId, PlantedCapture) {
    let mut capture = PlantedCapture { seq, code, captured_at: at, items: None, walk_duration_s: None, pam: None, expected: Default::default() };
    let items_part = |instr: Instrument, items: &[i64], kind: PayloadKind| PayloadPart {
        kind,
        bytes: ItemVector::new(instr, items).expect("generated items are valid").to_payload(),
    };
    let (parts, device) = match code {
        AssessmentCode::PamActivity | AssessmentCode::PamArmUse => {
            let hours = rng.random_range(spec.wear_hours[0]..=spec.wear_hours[1]);
            let lo = (spec.wear_hours[0] * EPOCHS_PER_HOUR).ceil() as usize;
            let hi = (spec.wear_hours[1] * EPOCHS_PER_HOUR).floor() as usize;
            let worn = ((hours * EPOCHS_PER_HOUR).round() as usize).clamp(lo, hi);
            let plan = plan_day(rng, &PlanParams { worn_epochs: worn, margin_mg: spec.margin_mg, adversarial: spec.adversarial, affected });
            let mut intervals = Vec::new();
            let mut k = 0;
            while k < plan.epochs.len() {
                if plan.epochs[k].class == EpochClass::NonWear {
                    k += 1;
                    continue;
                }
                let start = k;
                while k < plan.epochs.len() && plan.epochs[k].class != EpochClass::NonWear {
                    k += 1;
                }
                intervals.push((start as i64 * EPOCH_MS, k as i64 * EPOCH_MS));
            }
            capture.expected = expected::pam(&plan, affected);
            capture.pam = Some(PamPlanting {
                sample_rate_hz: spec.sample_rate_hz,
                worn_intervals_ms: intervals,
                epochs: plan.epochs.iter().map(|e| e.class.symbol()).collect(),
                enmo_mg: plan.epochs.iter().map(|e| e.enmo_mg).collect(),
                left_active: arm_symbols(&plan.left),
                right_active: arm_symbols(&plan.right),
            });
            let bytes = plan.synthesize(spec.sample_rate_hz);
            (vec![PayloadPart { kind: PayloadKind::ImuStream, bytes }], wrist_id(pid))
        }
        AssessmentCode::Arat => {
            let items = arat_items(recovery.arat_total(day));
            capture.expected = expected::arat(&items);
            let part = items_part(Instrument::Arat, &items, PayloadKind::ManualScores);
            capture.items = Some(items);
            (vec![part], tablet_id(pid))
        }
        AssessmentCode::Walk10m => {
            let frac = recovery.arat_total(day) as f64 / 57.0;
            let speed = 0.3 + frac + rng.random_range(-0.05..0.05);
            let duration = (1000.0 / speed).round() / 100.0;
            capture.expected = expected::walk(duration);
            capture.walk_duration_s = Some(duration);
            let bytes = WalkTiming { distance_m: 10.0, duration_s: duration }.to_payload();
            (vec![PayloadPart { kind: PayloadKind::ManualScores, bytes }], tablet_id(pid))
        }
        AssessmentCode::Fda | AssessmentCode::Bodys => {
            let items: Vec<i64> = (0..8).map(|_| rng.random_range(0..=4)).collect();
            let sheet = RatingSheet { instrument: code.as_str().into(), items: items.clone() };
            let mut audio = b"RIFF".to_vec();
            audio.extend((0..60).map(|_| rng.random::<u8>()));
            capture.items = Some(items);
            let parts = vec![
                PayloadPart { kind: PayloadKind::QuestionnaireItems, bytes: sheet.to_payload() },
                PayloadPart { kind: PayloadKind::AudioBlob, bytes: audio },
            ];
            (parts, microphone_id(pid))
        }
        _ => {
            let instr = instrument(code).expect("questionnaire code");
            let items = random_items(rng, instr);
            capture.expected = match instr {
                Instrument::Fss => expected::fss(&items),
                Instrument::Hads => expected::hads(&items),
                Instrument::Bdi2 => expected::bdi2(&items),
                Instrument::Ess => expected::ess(&items),
                _ => expected::fsmc(&items),
            };
            let part = items_part(instr, &items, PayloadKind::QuestionnaireItems);
            capture.items = Some(items);
            (vec![part], tablet_id(pid))
        }
    };
    (parts, device, capture)
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    if pretty {
        serde_json::to_writer_pretty(&mut w, value)?;
    } else {
        serde_json::to_writer(&mut w, value)?;
    }
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes the cohort in ingestion formats:
///
/// ```text
/// <out>/spec.json
/// <out>/patients.json
/// <out>/devices.json
/// <out>/planting.json
/// <out>/submissions/<seq>-<patient>-<code>.json
/// ```
pub fn write_cohort(spec: &CohortSpec, out: &Path) -> Result<Cohort, SynthError> {
    spec.validate()?;
    let subs = out.join("submissions");
    fs::create_dir_all(&subs)?;
    let cohort = generate(spec, &mut |s| write_json(&subs.join(s.file_name()), &s.envelope, false))?;
    write_json(&out.join("spec.json"), spec, true)?;
    write_json(&out.join("patients.json"), &cohort.patients, true)?;
    write_json(&out.join("devices.json"), &cohort.devices, true)?;
    write_json(&out.join("planting.json"), &cohort.planting, false)?;
    Ok(cohort)
}
