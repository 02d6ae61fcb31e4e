//! Wrist IMU recording text format.
//!
//! ```text
//! #lhs-imu v1
//! #sample_rate_hz=50
//! timestamp_ms,side,ax,ay,az,gx,gy,gz
//! 0,L,0.01,-0.02,0.99,0.5,0.1,-0.3
//! 0,R,0.00,0.01,1.01,0.0,0.2,0.1
//! ```
//!
//! Header lines start with `#`; `sample_rate_hz` is required. The column line
//! is optional. Accelerometer in g, gyroscope in deg/s, one sample per line,
//! left and right wrist interleaved freely.

use std::fmt::Write as _;

use crate::model::Side;

pub const IMU_MAGIC: &str = "#lhs-imu v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t_ms: i64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

impl ImuSample {
    pub fn magnitude_g(&self) -> f64 {
        let [x, y, z] = self.accel;
        (x * x + y * y + z * z).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    pub side: Side,
    pub sample_rate_hz: f64,
    pub samples: Vec<ImuSample>,
}

impl ImuStream {
    pub fn new(side: Side, sample_rate_hz: f64) -> Self {
        ImuStream { side, sample_rate_hz, samples: Vec::new() }
    }

    pub fn sample_period_ms(&self) -> f64 {
        1000.0 / self.sample_rate_hz
    }

    pub fn first_ms(&self) -> Option<i64> {
        self.samples.first().map(|s| s.t_ms)
    }

    /// End of coverage: one nominal sample period past the last sample.
    pub fn end_ms(&self) -> Option<i64> {
        self.samples
            .last()
            .map(|s| s.t_ms + self.sample_period_ms().round() as i64)
    }

    pub fn validate(&self) -> Result<(), ImuError> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(ImuError::BadSampleRate(self.sample_rate_hz));
        }
        if let Some(w) = self.samples.windows(2).find(|w| w[1].t_ms <= w[0].t_ms) {
            return Err(ImuError::NonIncreasing { side: self.side, t_ms: w[1].t_ms });
        }
        if self.samples.len() >= 3 {
            let mut gaps: Vec<i64> = self.samples.windows(2).map(|w| w[1].t_ms - w[0].t_ms).collect();
            let mid = gaps.len() / 2;
            let (_, median, _) = gaps.select_nth_unstable(mid);
            let observed = 1000.0 / *median as f64;
            if (observed - self.sample_rate_hz).abs() > 0.1 * self.sample_rate_hz {
                return Err(ImuError::RateMismatch {
                    side: self.side,
                    declared: self.sample_rate_hz,
                    observed,
                });
            }
        }
        Ok(())
    }
}

/// Both wrists of one capture.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuRecording {
    pub sample_rate_hz: f64,
    pub left: ImuStream,
    pub right: ImuStream,
}

impl ImuRecording {
    pub fn stream(&self, side: Side) -> &ImuStream {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImuError {
    #[error("imu payload is not valid UTF-8")]
    Encoding,
    #[error("missing `{IMU_MAGIC}` header")]
    MissingMagic,
    #[error("missing sample_rate_hz header")]
    MissingRate,
    #[error("invalid sample rate {0}")]
    BadSampleRate(f64),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{side:?} timestamps not strictly increasing at {t_ms} ms")]
    NonIncreasing { side: Side, t_ms: i64 },
    #[error("{side:?} declared rate {declared} Hz deviates >10% from observed {observed:.3} Hz")]
    RateMismatch { side: Side, declared: f64, observed: f64 },
    #[error("recording holds no samples")]
    Empty,
}

pub fn parse_imu(bytes: &[u8]) -> Result<ImuRecording, ImuError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ImuError::Encoding)?;
    let mut rate = None;
    let mut saw_magic = false;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if line == IMU_MAGIC {
                saw_magic = true;
            } else if let Some(v) = header.trim().strip_prefix("sample_rate_hz=") {
                let r: f64 = v.trim().parse().map_err(|_| ImuError::Line {
                    line: idx + 1,
                    message: format!("bad sample rate `{v}`"),
                })?;
                rate = Some(r);
            }
            continue;
        }
        if line.starts_with("timestamp_ms") {
            continue;
        }
        let (side, sample) = parse_line(line).map_err(|message| ImuError::Line { line: idx + 1, message })?;
        match side {
            Side::Left => left.push(sample),
            Side::Right => right.push(sample),
        }
    }
    if !saw_magic {
        return Err(ImuError::MissingMagic);
    }
    let sample_rate_hz = rate.ok_or(ImuError::MissingRate)?;
    if left.is_empty() && right.is_empty() {
        return Err(ImuError::Empty);
    }
    let rec = ImuRecording {
        sample_rate_hz,
        left: ImuStream { side: Side::Left, sample_rate_hz, samples: left },
        right: ImuStream { side: Side::Right, sample_rate_hz, samples: right },
    };
    rec.left.validate()?;
    rec.right.validate()?;
    Ok(rec)
}

fn parse_line(line: &str) -> Result<(Side, ImuSample), String> {
    let mut cols = line.split(',');
    let mut next = |name: &str| cols.next().map(str::trim).ok_or_else(|| format!("missing column {name}"));
    let t_ms: i64 = next("timestamp_ms")?.parse().map_err(|_| "bad timestamp".to_string())?;
    let side = match next("side")? {
        "L" => Side::Left,
        "R" => Side::Right,
        other => return Err(format!("bad side `{other}`")),
    };
    let mut vals = [0.0f64; 6];
    for (i, name) in ["ax", "ay", "az", "gx", "gy", "gz"].iter().enumerate() {
        let v: f64 = next(name)?.parse().map_err(|_| format!("bad {name}"))?;
        if !v.is_finite() {
            return Err(format!("non-finite {name}"));
        }
        vals[i] = v;
    }
    if cols.next().is_some() {
        return Err("too many columns".into());
    }
    Ok((
        side,
        ImuSample { t_ms, accel: [vals[0], vals[1], vals[2]], gyro: [vals[3], vals[4], vals[5]] },
    ))
}

/// Streaming writer for the text format.
pub struct ImuWriter {
    out: String,
}

impl ImuWriter {
    pub fn new(sample_rate_hz: f64) -> Self {
        let mut out = String::new();
        let _ = write!(
            out,
            "{IMU_MAGIC}\n#sample_rate_hz={sample_rate_hz}\ntimestamp_ms,side,ax,ay,az,gx,gy,gz\n"
        );
        ImuWriter { out }
    }

    pub fn with_capacity(sample_rate_hz: f64, lines: usize) -> Self {
        let mut w = ImuWriter::new(sample_rate_hz);
        w.out.reserve(lines * 28);
        w
    }

    pub fn push(&mut self, side: Side, s: &ImuSample) {
        let tag = match side {
            Side::Left => 'L',
            Side::Right => 'R',
        };
        let _ = writeln!(
            self.out,
            "{},{},{},{},{},{},{},{}",
            s.t_ms, tag, s.accel[0], s.accel[1], s.accel[2], s.gyro[0], s.gyro[1], s.gyro[2]
        );
    }

    pub fn finish(self) -> Vec<u8> {
        self.out.into_bytes()
    }
}

pub fn write_imu(rec: &ImuRecording) -> Vec<u8> {
    let mut w = ImuWriter::new(rec.sample_rate_hz);
    for s in &rec.left.samples {
        w.push(Side::Left, s);
    }
    for s in &rec.right.samples {
        w.push(Side::Right, s);
    }
    w.finish()
}
