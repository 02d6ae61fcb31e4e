//! Wrist IMU metrics: wear time, activity intensity and bilateral arm use.
//!
//! Signals are cut into fixed windows anchored at the first sample. A window
//! only counts when the stream covers it completely. Per window we take the
//! mean ENMO (`max(|a| - 1 g, 0)`) and the population standard deviation of
//! the acceleration magnitude, both in mg.

use serde::{Deserialize, Serialize};

use crate::metrics::config::ImuParams;
use crate::model::{AffectedSide, Side};
use crate::payload::imu::{ImuSample, ImuStream};

pub type Interval = (i64, i64);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImuMetricError {
    #[error("stream shorter than one epoch")]
    StreamTooShort,
    #[error("worn intervals inconsistent with stream: {0}")]
    InconsistentIntervals(String),
    #[error("left and right streams overlap by less than one epoch")]
    NoOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub start_ms: i64,
    pub samples: usize,
    pub enmo_mean_mg: f64,
    pub accel_stddev_mg: f64,
}

/// `x >= threshold` after rounding both to the feature grid, so values that
/// sit on a threshold classify upward regardless of float noise.
pub fn at_or_above(x: f64, threshold: f64, resolution: f64) -> bool {
    (x / resolution).round() >= (threshold / resolution).round()
}

fn features(slice: &[ImuSample], start_ms: i64) -> WindowFeatures {
    if slice.is_empty() {
        return WindowFeatures { start_ms, samples: 0, enmo_mean_mg: 0.0, accel_stddev_mg: 0.0 };
    }
    let n = slice.len() as f64;
    let mut sum_mag = 0.0;
    let mut sum_enmo = 0.0;
    for s in slice {
        let m = s.magnitude_g();
        sum_mag += m;
        sum_enmo += (m - 1.0).max(0.0);
    }
    let mean = sum_mag / n;
    let var = slice.iter().map(|s| (s.magnitude_g() - mean).powi(2)).sum::<f64>() / n;
    WindowFeatures {
        start_ms,
        samples: slice.len(),
        enmo_mean_mg: sum_enmo / n * 1000.0,
        accel_stddev_mg: var.sqrt() * 1000.0,
    }
}

/// Features for `count` consecutive windows of `width_ms` starting at `anchor_ms`.
pub fn window_features(samples: &[ImuSample], anchor_ms: i64, width_ms: i64, count: usize) -> Vec<WindowFeatures> {
    let mut out = Vec::with_capacity(count);
    let mut i = samples.partition_point(|s| s.t_ms < anchor_ms);
    for k in 0..count as i64 {
        let start = anchor_ms + k * width_ms;
        let end = start + width_ms;
        while i < samples.len() && samples[i].t_ms < start {
            i += 1;
        }
        let mut j = i;
        while j < samples.len() && samples[j].t_ms < end {
            j += 1;
        }
        out.push(features(&samples[i..j], start));
        i = j;
    }
    out
}

/// Number of complete epochs covered by the stream.
pub fn complete_windows(stream: &ImuStream, width_ms: i64) -> usize {
    match (stream.first_ms(), stream.end_ms()) {
        (Some(a), Some(b)) if b > a => ((b - a) / width_ms) as usize,
        _ => 0,
    }
}

pub fn epoch_features(stream: &ImuStream, params: &ImuParams) -> Vec<WindowFeatures> {
    let n = complete_windows(stream, params.epoch_ms);
    match stream.first_ms() {
        Some(anchor) => window_features(&stream.samples, anchor, params.epoch_ms, n),
        None => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WearTime {
    pub worn_intervals: Vec<Interval>,
    pub total_hours: f64,
    pub days_covered: u32,
    pub hours_per_day: f64,
    pub typical_band: bool,
}

/// Flags each epoch worn (`true`) or not. A run of at least
/// `non_wear_min_epochs` low-variance epochs is non-wear; shorter low runs
/// stay worn.
pub fn worn_epochs(epochs: &[WindowFeatures], params: &ImuParams) -> Vec<bool> {
    let res = params.feature_resolution_mg;
    let low: Vec<bool> = epochs
        .iter()
        .map(|e| !at_or_above(e.accel_stddev_mg, params.non_wear_stddev_mg, res))
        .collect();
    let mut worn = vec![true; epochs.len()];
    let mut i = 0;
    while i < low.len() {
        if !low[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < low.len() && low[i] {
            i += 1;
        }
        if i - start >= params.non_wear_min_epochs {
            worn[start..i].iter_mut().for_each(|w| *w = false);
        }
    }
    worn
}

pub fn detect_wear_time(stream: &ImuStream, params: &ImuParams) -> Result<WearTime, ImuMetricError> {
    let epochs = epoch_features(stream, params);
    if epochs.is_empty() {
        return Err(ImuMetricError::StreamTooShort);
    }
    let worn = worn_epochs(&epochs, params);
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < worn.len() {
        if !worn[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < worn.len() && worn[i] {
            i += 1;
        }
        intervals.push((epochs[start].start_ms, epochs[i - 1].start_ms + params.epoch_ms));
    }
    let worn_count = worn.iter().filter(|w| **w).count();
    let total_hours = worn_count as f64 * params.epoch_ms as f64 / 3_600_000.0;
    let span_ms = epochs.len() as i64 * params.epoch_ms;
    let days_covered = ((span_ms + 86_400_000 - 1) / 86_400_000).max(1) as u32;
    let hours_per_day = total_hours / f64::from(days_covered);
    let [lo, hi] = params.typical_wear_hours;
    Ok(WearTime {
        worn_intervals: intervals,
        total_hours,
        days_covered,
        hours_per_day,
        typical_band: lo <= hours_per_day && hours_per_day <= hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityClass {
    Low,
    Moderate,
    Vigorous,
}

pub fn classify_enmo(enmo_mg: f64, params: &ImuParams) -> ActivityClass {
    let res = params.feature_resolution_mg;
    if at_or_above(enmo_mg, params.vigorous_mg, res) {
        ActivityClass::Vigorous
    } else if at_or_above(enmo_mg, params.moderate_mg, res) {
        ActivityClass::Moderate
    } else {
        ActivityClass::Low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityMinutes {
    pub low_min: f64,
    pub moderate_min: f64,
    pub vigorous_min: f64,
    pub worn_min: f64,
}

/// Per worn epoch: (epoch start, class).
pub fn epoch_classes(
    stream: &ImuStream,
    worn_intervals: &[Interval],
    params: &ImuParams,
) -> Result<Vec<(i64, ActivityClass)>, ImuMetricError> {
    let epochs = epoch_features(stream, params);
    let Some(anchor) = stream.first_ms() else {
        return if worn_intervals.is_empty() {
            Ok(Vec::new())
        } else {
            Err(ImuMetricError::InconsistentIntervals("empty stream".into()))
        };
    };
    let e = params.epoch_ms;
    let limit = anchor + epochs.len() as i64 * e;
    let mut prev_end = i64::MIN;
    let mut out = Vec::new();
    for &(start, end) in worn_intervals {
        let aligned = (start - anchor) % e == 0 && (end - anchor) % e == 0;
        if !aligned || start >= end || start < anchor || end > limit || start < prev_end {
            return Err(ImuMetricError::InconsistentIntervals(format!("({start}, {end})")));
        }
        prev_end = end;
        let first = ((start - anchor) / e) as usize;
        let last = ((end - anchor) / e) as usize;
        for ep in &epochs[first..last] {
            out.push((ep.start_ms, classify_enmo(ep.enmo_mean_mg, params)));
        }
    }
    Ok(out)
}

pub fn classify_activity(
    stream: &ImuStream,
    worn_intervals: &[Interval],
    params: &ImuParams,
) -> Result<ActivityMinutes, ImuMetricError> {
    let classes = epoch_classes(stream, worn_intervals, params)?;
    let epoch_min = params.epoch_ms as f64 / 60_000.0;
    let count = |c: ActivityClass| classes.iter().filter(|(_, k)| *k == c).count() as f64 * epoch_min;
    Ok(ActivityMinutes {
        low_min: count(ActivityClass::Low),
        moderate_min: count(ActivityClass::Moderate),
        vigorous_min: count(ActivityClass::Vigorous),
        worn_min: classes.len() as f64 * epoch_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmUseSplit {
    pub therapy_s_left: f64,
    pub therapy_s_right: f64,
    pub outside_s_left: f64,
    pub outside_s_right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmUse {
    pub active_s_left: f64,
    pub active_s_right: f64,
    /// affected / unaffected; `None` when the affected side is unknown or
    /// the unaffected arm was never active.
    pub use_ratio: Option<f64>,
    /// (unaffected - affected) / (unaffected + affected); `None` only when
    /// the affected side is unknown.
    pub laterality: Option<f64>,
    pub affected_side_known: bool,
    pub therapy: Option<ArmUseSplit>,
}

/// Active flags per sub-epoch over the common coverage of both streams.
pub fn sub_epoch_activity(
    left: &ImuStream,
    right: &ImuStream,
    params: &ImuParams,
) -> Result<(i64, Vec<bool>, Vec<bool>), ImuMetricError> {
    let (Some(l0), Some(r0), Some(l1), Some(r1)) = (left.first_ms(), right.first_ms(), left.end_ms(), right.end_ms())
    else {
        return Err(ImuMetricError::NoOverlap);
    };
    let start = l0.max(r0);
    let end = l1.min(r1);
    if end - start < params.epoch_ms {
        return Err(ImuMetricError::NoOverlap);
    }
    let n = ((end - start) / params.sub_epoch_ms) as usize;
    let res = params.feature_resolution_mg;
    let flags = |s: &ImuStream| {
        window_features(&s.samples, start, params.sub_epoch_ms, n)
            .iter()
            .map(|w| w.samples >= 2 && at_or_above(w.accel_stddev_mg, params.active_stddev_mg, res))
            .collect::<Vec<_>>()
    };
    Ok((start, flags(left), flags(right)))
}

pub fn compute_arm_use(
    left: &ImuStream,
    right: &ImuStream,
    affected: AffectedSide,
    params: &ImuParams,
    therapy_sessions: Option<&[Interval]>,
) -> Result<ArmUse, ImuMetricError> {
    let (start, l, r) = sub_epoch_activity(left, right, params)?;
    let sub_s = params.sub_epoch_ms as f64 / 1000.0;
    let secs = |flags: &[bool]| flags.iter().filter(|f| **f).count() as f64 * sub_s;
    let active_s_left = secs(&l);
    let active_s_right = secs(&r);

    let (use_ratio, laterality) = match affected.side() {
        None => (None, None),
        Some(side) => {
            let (aff, unaff) = match side {
                Side::Left => (active_s_left, active_s_right),
                Side::Right => (active_s_right, active_s_left),
            };
            let ratio = if unaff > 0.0 { Some(aff / unaff) } else { None };
            let lat = if aff + unaff > 0.0 { (unaff - aff) / (unaff + aff) } else { 0.0 };
            (ratio, Some(lat))
        }
    };

    let therapy = therapy_sessions.map(|sessions| {
        let inside = |k: usize| {
            let t = start + k as i64 * params.sub_epoch_ms;
            sessions.iter().any(|&(a, b)| a <= t && t < b)
        };
        let mut split = ArmUseSplit { therapy_s_left: 0.0, therapy_s_right: 0.0, outside_s_left: 0.0, outside_s_right: 0.0 };
        for k in 0..l.len() {
            let within = inside(k);
            if l[k] {
                *if within { &mut split.therapy_s_left } else { &mut split.outside_s_left } += sub_s;
            }
            if r[k] {
                *if within { &mut split.therapy_s_right } else { &mut split.outside_s_right } += sub_s;
            }
        }
        split
    });

    Ok(ArmUse {
        active_s_left,
        active_s_right,
        use_ratio,
        laterality,
        affected_side_known: affected.side().is_some(),
        therapy,
    })
}
