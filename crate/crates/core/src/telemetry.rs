//! Trip telemetry ingest: CSV parsing, validation and 1 Hz downsampling.
//!
//! Channel units follow insurer-telematics convention: speed in km/h,
//! accelerations in m/s², angular rates in deg/s and heading in degrees
//! clockwise from north, `[0, 360)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRIP_CSV_HEADER: [&str; 11] = [
    "trip_id",
    "driver_id",
    "gender",
    "t",
    "speed",
    "accel_x",
    "accel_y",
    "yaw_rate",
    "pitch_rate",
    "roll_rate",
    "heading",
];

/// Raw device rate.
pub const RAW_RATE_HZ: u32 = 15;

/// The binary target. `Class1` is the positive class for AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryLabel {
    #[serde(rename = "male")]
    Class0,
    #[serde(rename = "female")]
    Class1,
}

impl BinaryLabel {
    pub const ALL: [BinaryLabel; 2] = [BinaryLabel::Class0, BinaryLabel::Class1];

    pub fn index(self) -> usize {
        match self {
            BinaryLabel::Class0 => 0,
            BinaryLabel::Class1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BinaryLabel::Class0),
            1 => Some(BinaryLabel::Class1),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BinaryLabel::Class0 => "male",
            BinaryLabel::Class1 => "female",
        }
    }

    /// Single-letter code used in trip and feature CSVs.
    pub fn code(self) -> &'static str {
        match self {
            BinaryLabel::Class0 => "M",
            BinaryLabel::Class1 => "F",
        }
    }

    /// Parses `M`/`F`/`?` (and the long names); `?` yields `None`.
    pub fn parse_code(s: &str) -> std::result::Result<Option<Self>, String> {
        match s.trim() {
            "M" | "male" => Ok(Some(BinaryLabel::Class0)),
            "F" | "female" => Ok(Some(BinaryLabel::Class1)),
            "?" | "" => Ok(None),
            other => Err(format!("unknown gender code `{other}` (expected M, F or ?)")),
        }
    }

    pub fn option_code(label: Option<Self>) -> &'static str {
        label.map_or("?", BinaryLabel::code)
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The seven telemetry channels, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Speed,
    AccelX,
    AccelY,
    YawRate,
    PitchRate,
    RollRate,
    Heading,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Speed,
        Channel::AccelX,
        Channel::AccelY,
        Channel::YawRate,
        Channel::PitchRate,
        Channel::RollRate,
        Channel::Heading,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Speed => "speed",
            Channel::AccelX => "accel_x",
            Channel::AccelY => "accel_y",
            Channel::YawRate => "yaw_rate",
            Channel::PitchRate => "pitch_rate",
            Channel::RollRate => "roll_rate",
            Channel::Heading => "heading",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub t: f64,
    pub speed: f64,
    pub accel_x: f64,
    pub accel_y: f64,
    pub yaw_rate: f64,
    pub pitch_rate: f64,
    pub roll_rate: f64,
    pub heading: f64,
}

impl RawSample {
    pub fn channel(&self, c: Channel) -> f64 {
        match c {
            Channel::Speed => self.speed,
            Channel::AccelX => self.accel_x,
            Channel::AccelY => self.accel_y,
            Channel::YawRate => self.yaw_rate,
            Channel::PitchRate => self.pitch_rate,
            Channel::RollRate => self.roll_rate,
            Channel::Heading => self.heading,
        }
    }

    fn channel_mut(&mut self, c: Channel) -> &mut f64 {
        match c {
            Channel::Speed => &mut self.speed,
            Channel::AccelX => &mut self.accel_x,
            Channel::AccelY => &mut self.accel_y,
            Channel::YawRate => &mut self.yaw_rate,
            Channel::PitchRate => &mut self.pitch_rate,
            Channel::RollRate => &mut self.roll_rate,
            Channel::Heading => &mut self.heading,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripStream {
    pub trip_id: String,
    pub driver_id: String,
    pub label: Option<BinaryLabel>,
    pub rate_hz: u32,
    pub samples: Vec<RawSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NonFinite(Channel),
    NonFiniteTime,
    NegativeSpeed,
    TimeRegression,
    NegativeTime,
    HeadingOutOfRange,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::NonFinite(c) => write!(f, "non-finite {}", c.name()),
            ViolationKind::NonFiniteTime => f.write_str("non-finite t"),
            ViolationKind::NegativeSpeed => f.write_str("negative speed"),
            ViolationKind::TimeRegression => f.write_str("t regression"),
            ViolationKind::NegativeTime => f.write_str("negative t"),
            ViolationKind::HeadingOutOfRange => f.write_str("heading out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub trip_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every invariant violation in `stream` with its sample index.
pub fn validate_stream(stream: &TripStream) -> ValidationReport {
    let mut violations = Vec::new();
    let mut prev_t: Option<f64> = None;
    for (index, s) in stream.samples.iter().enumerate() {
        let mut push = |kind| violations.push(Violation { index, kind });
        if !s.t.is_finite() {
            push(ViolationKind::NonFiniteTime);
        } else if s.t < 0.0 {
            push(ViolationKind::NegativeTime);
        }
        for c in Channel::ALL {
            if !s.channel(c).is_finite() {
                push(ViolationKind::NonFinite(c));
            }
        }
        if s.speed < 0.0 {
            push(ViolationKind::NegativeSpeed);
        }
        if s.heading.is_finite() && !(0.0..360.0).contains(&s.heading) {
            push(ViolationKind::HeadingOutOfRange);
        }
        if let Some(p) = prev_t {
            if s.t <= p {
                push(ViolationKind::TimeRegression);
            }
        }
        prev_t = Some(s.t);
    }
    ValidationReport {
        trip_id: stream.trip_id.clone(),
        violations,
    }
}

/// Reads trips from a CSV file with the [`TRIP_CSV_HEADER`] layout.
pub fn parse_trip_csv(path: impl AsRef<Path>) -> Result<Vec<TripStream>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_trip_reader(file, path)
}

pub fn parse_trip_reader<R: Read>(reader: R, path: &Path) -> Result<Vec<TripStream>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => return Err(Error::EmptyInput(format!("{} has no rows", path.display()))),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields != TRIP_CSV_HEADER {
        return Err(parse_err(
            1,
            format!("unexpected header, expected `{}`", TRIP_CSV_HEADER.join(",")),
        ));
    }

    // trip_id -> (driver, label, samples) preserving first-seen order
    let mut order: Vec<String> = Vec::new();
    let mut trips: BTreeMap<String, (String, Option<BinaryLabel>, Vec<RawSample>)> =
        BTreeMap::new();

    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != TRIP_CSV_HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", TRIP_CSV_HEADER.len(), rec.len()),
            ));
        }
        let trip_id = rec[0].trim().to_string();
        let driver_id = rec[1].trim().to_string();
        let label = BinaryLabel::parse_code(&rec[2]).map_err(|m| parse_err(line, m))?;
        let mut num = [0.0f64; 8];
        for (k, slot) in num.iter_mut().enumerate() {
            let col = TRIP_CSV_HEADER[3 + k];
            let raw = rec[3 + k].trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric {col} value `{raw}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite {col} value `{raw}`")));
            }
            *slot = v;
        }
        let sample = RawSample {
            t: num[0],
            speed: num[1],
            accel_x: num[2],
            accel_y: num[3],
            yaw_rate: num[4],
            pitch_rate: num[5],
            roll_rate: num[6],
            heading: num[7],
        };
        if sample.t < 0.0 {
            return Err(parse_err(line, "t must be non-negative".into()));
        }
        if !(0.0..360.0).contains(&sample.heading) {
            return Err(parse_err(
                line,
                format!("heading {} outside [0, 360)", sample.heading),
            ));
        }
        let entry = trips.entry(trip_id.clone()).or_insert_with(|| {
            order.push(trip_id.clone());
            (driver_id.clone(), label, Vec::new())
        });
        if entry.0 != driver_id || entry.1 != label {
            return Err(parse_err(
                line,
                format!("trip `{trip_id}` changes driver_id or gender mid-trip"),
            ));
        }
        entry.2.push(sample);
    }

    if order.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has a header but no samples",
            path.display()
        )));
    }

    let mut out = Vec::with_capacity(order.len());
    for trip_id in order {
        let (driver_id, label, mut samples) = trips.remove(&trip_id).expect("trip registered");
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Validation(format!(
                "trip `{trip_id}` has duplicate or non-monotone timestamps"
            )));
        }
        let rate_hz = infer_rate(&samples);
        out.push(TripStream {
            trip_id,
            driver_id,
            label,
            rate_hz,
            samples,
        });
    }
    Ok(out)
}

/// Rate from the median inter-sample gap, rounded to whole Hz (minimum 1).
fn infer_rate(samples: &[RawSample]) -> u32 {
    let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    if gaps.is_empty() {
        return 1;
    }
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    ((1.0 / median).round() as u32).max(1)
}

/// Writes trips in the [`TRIP_CSV_HEADER`] layout. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_trip_csv<W: Write>(writer: W, trips: &[TripStream]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    let wrap = |e: csv::Error| Error::io("writing trip csv", std::io::Error::other(e));
    w.write_record(TRIP_CSV_HEADER).map_err(wrap)?;
    for trip in trips {
        let code = BinaryLabel::option_code(trip.label);
        for s in &trip.samples {
            w.write_record([
                trip.trip_id.as_str(),
                trip.driver_id.as_str(),
                code,
                &s.t.to_string(),
                &s.speed.to_string(),
                &s.accel_x.to_string(),
                &s.accel_y.to_string(),
                &s.yaw_rate.to_string(),
                &s.pitch_rate.to_string(),
                &s.roll_rate.to_string(),
                &s.heading.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io("writing trip csv", e))?;
    Ok(())
}

/// Circular mean of headings in degrees, mapped into `[0, 360)`.
pub fn circular_mean_deg(headings: &[f64]) -> f64 {
    let (s, c) = headings.iter().fold((0.0, 0.0), |(s, c), h| {
        let r = h.to_radians();
        (s + r.sin(), c + r.cos())
    });
    let mut deg = s.atan2(c).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    // atan2 of a tiny negative sine can round up to exactly 360
    if deg >= 360.0 {
        deg -= 360.0;
    }
    // identical headings: report them exactly rather than through sin/cos
    if let Some(first) = headings.first() {
        if headings.iter().all(|h| h == first) {
            return *first;
        }
    }
    deg
}

/// Averages each whole-second bucket `[k, k+1)` into one sample at `t = k`.
///
/// Linear channels use the arithmetic mean and heading the circular mean.
/// Empty buckets are dropped. A stream already at 1 Hz is returned unchanged.
pub fn downsample_to_1hz(stream: &TripStream) -> Result<TripStream> {
    if stream.rate_hz <= 1 {
        log::warn!(
            "trip `{}` is already at {} Hz; downsampling skipped",
            stream.trip_id,
            stream.rate_hz
        );
        return Ok(stream.clone());
    }
    let (Some(first), Some(last)) = (stream.samples.first(), stream.samples.last()) else {
        return Err(Error::EmptyStream(format!("trip `{}` has no samples", stream.trip_id)));
    };
    if last.t - first.t < 1.0 - 1.0 / f64::from(stream.rate_hz) - 1e-9 {
        return Err(Error::EmptyStream(format!(
            "trip `{}` spans less than one second",
            stream.trip_id
        )));
    }

    let mut out = Vec::new();
    let mut i = 0;
    let samples = &stream.samples;
    while i < samples.len() {
        let bucket = samples[i].t.floor();
        let start = i;
        while i < samples.len() && samples[i].t.floor() == bucket {
            i += 1;
        }
        let chunk = &samples[start..i];
        let n = chunk.len() as f64;
        let mut avg = RawSample {
            t: bucket,
            ..chunk[0]
        };
        for c in Channel::ALL {
            if c == Channel::Heading {
                continue;
            }
            *avg.channel_mut(c) = chunk.iter().map(|s| s.channel(c)).sum::<f64>() / n;
        }
        let headings: Vec<f64> = chunk.iter().map(|s| s.heading).collect();
        avg.heading = circular_mean_deg(&headings);
        out.push(avg);
    }

    Ok(TripStream {
        trip_id: stream.trip_id.clone(),
        driver_id: stream.driver_id.clone(),
        label: stream.label,
        rate_hz: 1,
        samples: out,
    })
}
