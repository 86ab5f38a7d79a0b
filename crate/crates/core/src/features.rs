//! Windowing, per-channel statistics and feature selection.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{BinaryLabel, Channel, TripStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub length_s: usize,
    pub stride_s: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length_s: 256,
            stride_s: 256,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length_s < 2 {
            return Err(Error::Config(format!(
                "window length_s must be >= 2, got {}",
                self.length_s
            )));
        }
        if self.stride_s < 1 {
            return Err(Error::Config("window stride_s must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadingMode {
    /// Heading values used as a plain real channel.
    #[default]
    Raw,
    /// Wrapped first differences in `[-180, 180)`; the first second is 0.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub entropy_bins: usize,
    pub autocorr_lag: usize,
    pub heading_mode: HeadingMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            entropy_bins: 16,
            autocorr_lag: 1,
            heading_mode: HeadingMode::Raw,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entropy_bins < 1 {
            return Err(Error::Config("entropy_bins must be >= 1".into()));
        }
        if self.autocorr_lag < 1 {
            return Err(Error::Config("autocorr_lag must be >= 1".into()));
        }
        Ok(())
    }
}

/// The fourteen per-channel statistics, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Min,
    Max,
    Mean,
    Median,
    Q1,
    Q3,
    Std,
    Aad,
    Skewness,
    Kurtosis,
    Entropy,
    Autocorr,
    ZeroCrossing,
    Energy,
}

impl Stat {
    pub const ALL: [Stat; 14] = [
        Stat::Min,
        Stat::Max,
        Stat::Mean,
        Stat::Median,
        Stat::Q1,
        Stat::Q3,
        Stat::Std,
        Stat::Aad,
        Stat::Skewness,
        Stat::Kurtosis,
        Stat::Entropy,
        Stat::Autocorr,
        Stat::ZeroCrossing,
        Stat::Energy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stat::Min => "min",
            Stat::Max => "max",
            Stat::Mean => "mean",
            Stat::Median => "median",
            Stat::Q1 => "q1",
            Stat::Q3 => "q3",
            Stat::Std => "std",
            Stat::Aad => "aad",
            Stat::Skewness => "skewness",
            Stat::Kurtosis => "kurtosis",
            Stat::Entropy => "entropy",
            Stat::Autocorr => "autocorr",
            Stat::ZeroCrossing => "zero_crossing",
            Stat::Energy => "energy",
        }
    }
}

/// All 98 `<channel>_<stat>` names, channel-major.
pub fn feature_names() -> Vec<String> {
    Channel::ALL
        .iter()
        .flat_map(|c| Stat::ALL.iter().map(move |s| format!("{}_{}", c.name(), s.name())))
        .collect()
}

/// One window of per-channel values, before reduction to statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub trip_id: String,
    pub driver_id: String,
    pub label: Option<BinaryLabel>,
    /// Offset of the first second relative to the trip's first sample.
    pub offset_s: usize,
    /// Seven arrays in [`Channel::ALL`] order.
    pub channels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub trip_id: String,
    pub driver_id: String,
    pub label: Option<BinaryLabel>,
    pub offset_s: usize,
    pub features: IndexMap<String, f64>,
}

/// Cuts a 1 Hz stream into fixed windows.
///
/// Windows start at multiples of `stride_s` after the first sample. Any
/// window with a missing second is skipped, as is the incomplete tail.
pub fn segment_windows(stream: &TripStream, spec: &WindowSpec) -> Result<Vec<RawWindow>> {
    spec.validate()?;
    if stream.rate_hz != 1 {
        return Err(Error::Precondition(format!(
            "trip `{}` must be downsampled to 1 Hz before windowing (rate {} Hz)",
            stream.trip_id, stream.rate_hz
        )));
    }
    let Some(first) = stream.samples.first() else {
        return Ok(Vec::new());
    };
    let t0 = first.t;
    let seconds: Vec<i64> = stream
        .samples
        .iter()
        .map(|s| (s.t - t0).round() as i64)
        .collect();
    let span = (*seconds.last().expect("non-empty") + 1) as usize;

    let mut windows = Vec::new();
    let mut offset = 0usize;
    // index of the first sample at or after `offset`
    let mut cursor = 0usize;
    while offset + spec.length_s <= span {
        while cursor < seconds.len() && (seconds[cursor] as usize) < offset {
            cursor += 1;
        }
        let end = cursor + spec.length_s;
        let complete = end <= seconds.len()
            && seconds[cursor] as usize == offset
            && seconds[end - 1] as usize == offset + spec.length_s - 1;
        if complete {
            let slice = &stream.samples[cursor..end];
            let channels = Channel::ALL
                .iter()
                .map(|&c| slice.iter().map(|s| s.channel(c)).collect())
                .collect();
            windows.push(RawWindow {
                trip_id: stream.trip_id.clone(),
                driver_id: stream.driver_id.clone(),
                label: stream.label,
                offset_s: offset,
                channels,
            });
        }
        offset += spec.stride_s;
    }
    Ok(windows)
}

fn wrap_heading_delta(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    out.push(0.0);
    for w in values.windows(2) {
        out.push((w[1] - w[0] + 180.0).rem_euclid(360.0) - 180.0);
    }
    out
}

/// Linear interpolation at rank `(n - 1) * p` of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    match sorted.get(lo + 1) {
        Some(&hi) if frac > 0.0 => sorted[lo] + frac * (hi - sorted[lo]),
        _ => sorted[lo],
    }
}

/// The fourteen statistics of one channel, in [`Stat::ALL`] order.
pub fn channel_stats(values: &[f64], cfg: &FeatureConfig) -> Result<[f64; 14]> {
    let n = values.len();
    if n < 2 {
        return Err(Error::DegenerateWindow(format!(
            "window needs at least 2 samples, got {n}"
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value at window index {i}")));
    }
    let nf = n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[n - 1];
    let constant = min == max;

    let mean = if constant {
        min
    } else {
        values.iter().sum::<f64>() / nf
    };
    let median = quantile_sorted(&sorted, 0.5);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);

    let (mut m2, mut m3, mut m4, mut abs_dev) = (0.0, 0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        abs_dev += d.abs();
    }
    let sum_sq_dev = m2;
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let std = (sum_sq_dev / (nf - 1.0)).sqrt();
    let aad = abs_dev / nf;
    let (skewness, kurtosis) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };

    let entropy = if constant {
        0.0
    } else {
        let bins = cfg.entropy_bins;
        let width = max - min;
        let mut counts = vec![0usize; bins];
        for &x in values {
            let b = (((x - min) / width) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                p * p.log2()
            })
            .sum::<f64>()
    };

    let lag = cfg.autocorr_lag;
    let autocorr = if sum_sq_dev == 0.0 || lag >= n {
        0.0
    } else {
        let num: f64 = (0..n - lag)
            .map(|t| (values[t] - mean) * (values[t + lag] - mean))
            .sum();
        num / sum_sq_dev
    };

    let mut zero_crossing = 0usize;
    let mut prev_sign = 0i8;
    for &x in values {
        let d = x - mean;
        let sign = if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            prev_sign
        };
        if prev_sign != 0 && sign != prev_sign {
            zero_crossing += 1;
        }
        prev_sign = sign;
    }

    let energy = values.iter().map(|x| x * x).sum::<f64>() / nf;

    Ok([
        min,
        max,
        mean,
        median,
        q1,
        q3,
        std,
        aad,
        skewness,
        kurtosis,
        entropy,
        autocorr,
        zero_crossing as f64,
        energy,
    ])
}

/// Reduces a window to its 98 named statistics.
pub fn compute_window_features(window: &RawWindow, cfg: &FeatureConfig) -> Result<FeatureWindow> {
    if window.channels.len() != Channel::ALL.len() {
        return Err(Error::Precondition(format!(
            "window has {} channels, expected {}",
            window.channels.len(),
            Channel::ALL.len()
        )));
    }
    let mut features = IndexMap::with_capacity(98);
    for (channel, values) in Channel::ALL.iter().zip(&window.channels) {
        let stats = if *channel == Channel::Heading && cfg.heading_mode == HeadingMode::Delta {
            channel_stats(&wrap_heading_delta(values), cfg)?
        } else {
            channel_stats(values, cfg)?
        };
        for (stat, value) in Stat::ALL.iter().zip(stats) {
            features.insert(format!("{}_{}", channel.name(), stat.name()), value);
        }
    }
    Ok(FeatureWindow {
        trip_id: window.trip_id.clone(),
        driver_id: window.driver_id.clone(),
        label: window.label,
        offset_s: window.offset_s,
        features,
    })
}

/// One row of a [`FeatureTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub trip_id: String,
    pub driver_id: String,
    pub label: Option<BinaryLabel>,
    pub values: Vec<f64>,
}

/// Dense feature matrix: named columns shared by every row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn from_windows(windows: &[FeatureWindow]) -> Result<Self> {
        let Some(first) = windows.first() else {
            return Ok(Self::default());
        };
        let names: Vec<String> = first.features.keys().cloned().collect();
        let mut rows = Vec::with_capacity(windows.len());
        for w in windows {
            if w.features.len() != names.len()
                || !w.features.keys().zip(&names).all(|(a, b)| a == b)
            {
                return Err(Error::Schema(format!(
                    "window of trip `{}` at offset {} has a different feature set",
                    w.trip_id, w.offset_s
                )));
            }
            rows.push(FeatureRow {
                trip_id: w.trip_id.clone(),
                driver_id: w.driver_id.clone(),
                label: w.label,
                values: w.features.values().copied().collect(),
            });
        }
        Ok(Self { names, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingFeature(name.to_string()))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r.values[j])
    }

    /// Keeps only `names`, in that order.
    pub fn project(&self, names: &[String]) -> Result<FeatureTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_>>()?;
        Ok(FeatureTable {
            names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    values: idx.iter().map(|&j| r.values[j]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    pub fn subset_rows(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Labels of every row, or an error naming the first unlabeled one.
    pub fn labels(&self) -> Result<Vec<BinaryLabel>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.label.ok_or_else(|| {
                    Error::Precondition(format!(
                        "row {i} (trip `{}`) is unlabeled; training requires labels",
                        r.trip_id
                    ))
                })
            })
            .collect()
    }
}

/// Names of features whose population variance across rows is below
/// `threshold`.
pub fn low_variance_filter(table: &FeatureTable, threshold: f64) -> Result<Vec<String>> {
    if table.is_empty() {
        return Err(Error::Precondition(
            "variance filter needs at least one window".into(),
        ));
    }
    let n = table.len() as f64;
    let mut dropped = Vec::new();
    for (j, name) in table.names.iter().enumerate() {
        let mean = table.column(j).sum::<f64>() / n;
        let var = table.column(j).map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        if var < threshold {
            dropped.push(name.clone());
        }
    }
    Ok(dropped)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionReport {
    pub variance_dropped: Vec<String>,
    /// Point-biserial r for every feature that survived the variance filter.
    pub correlations: IndexMap<String, f64>,
    /// Features with |r| >= threshold, by |r| descending.
    pub selected: Vec<String>,
}

/// Pearson correlation of `x` against labels encoded 0/1. Zero when `x`
/// has no spread.
pub fn point_biserial(x: &[f64], labels: &[BinaryLabel]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = labels.iter().map(|l| l.index() as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, l) in x.iter().zip(labels) {
        let dx = xi - mx;
        let dy = l.index() as f64 - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Correlates every non-excluded feature with the label and keeps those at
/// or above `threshold` in absolute value.
pub fn point_biserial_select(
    table: &FeatureTable,
    excluded: &[String],
    threshold: f64,
) -> Result<SelectionReport> {
    let labels = table.labels()?;
    if labels.is_empty() {
        return Err(Error::Precondition("selection needs at least one window".into()));
    }
    if !BinaryLabel::ALL.iter().all(|c| labels.contains(c)) {
        return Err(Error::Undefined(
            "correlation is undefined when only one class is present".into(),
        ));
    }
    let mut correlations = IndexMap::new();
    for (j, name) in table.names.iter().enumerate() {
        if excluded.contains(name) {
            continue;
        }
        let col: Vec<f64> = table.column(j).collect();
        correlations.insert(name.clone(), point_biserial(&col, &labels));
    }
    let mut selected: Vec<(&String, f64)> = correlations
        .iter()
        .filter(|(_, r)| r.abs() >= threshold)
        .map(|(n, r)| (n, *r))
        .collect();
    // stable: equal |r| keeps column order
    selected.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    Ok(SelectionReport {
        variance_dropped: excluded.to_vec(),
        selected: selected.into_iter().map(|(n, _)| n.clone()).collect(),
        correlations,
    })
}

/// Where feature selection sees data during cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionScope {
    /// Inside each fold, on training rows only.
    #[default]
    PerFold,
    /// Once, on every row, before folding.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub variance_threshold: f64,
    pub correlation_threshold: f64,
    pub scope: SelectionScope,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            variance_threshold: 1e-12,
            correlation_threshold: 0.1,
            scope: SelectionScope::PerFold,
        }
    }
}

impl SelectionConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        // negated so NaN is rejected too
        if !(self.variance_threshold >= 0.0) {
            return Err(Error::Config("variance_threshold must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.correlation_threshold) {
            return Err(Error::Config("correlation_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Variance filter followed by point-biserial selection.
pub fn select_features(table: &FeatureTable, cfg: &SelectionConfig) -> Result<SelectionReport> {
    let dropped = low_variance_filter(table, cfg.variance_threshold)?;
    point_biserial_select(table, &dropped, cfg.correlation_threshold)
}

impl SelectionReport {
    /// The selected catalog, topped up with the next-strongest correlated
    /// features when fewer than `min_len` passed the threshold.
    pub fn catalog_with_min(&self, min_len: usize) -> Vec<String> {
        let mut catalog = self.selected.clone();
        if catalog.len() >= min_len {
            return catalog;
        }
        let mut rest: Vec<(&String, f64)> = self
            .correlations
            .iter()
            .filter(|(n, _)| !catalog.contains(n))
            .map(|(n, r)| (n, *r))
            .collect();
        rest.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        let missing = min_len - catalog.len();
        log::warn!(
            "only {} features passed the correlation threshold; topping up with {} more",
            catalog.len(),
            missing.min(rest.len())
        );
        catalog.extend(rest.into_iter().take(missing).map(|(n, _)| n.clone()));
        catalog
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::io("writing selection report", std::io::Error::other(e));
        w.write_record(["feature", "correlation"]).map_err(wrap)?;
        for name in &self.selected {
            w.write_record([name.as_str(), &self.correlations[name].to_string()])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("writing selection report", e))
    }
}

/// Runs windowing and feature computation over downsampled trips.
pub fn extract_features(
    trips: &[TripStream],
    spec: &WindowSpec,
    cfg: &FeatureConfig,
) -> Result<Vec<FeatureWindow>> {
    use rayon::prelude::*;
    let per_trip: Vec<Vec<FeatureWindow>> = trips
        .par_iter()
        .map(|trip| {
            segment_windows(trip, spec)?
                .iter()
                .map(|w| compute_window_features(w, cfg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_trip.into_iter().flatten().collect())
}

pub fn write_feature_csv<W: Write>(writer: W, table: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::io("writing feature csv", std::io::Error::other(e));
    let mut header = vec!["trip_id", "driver_id", "label"];
    header.extend(table.names.iter().map(String::as_str));
    w.write_record(&header).map_err(wrap)?;
    let mut record = Vec::with_capacity(header.len());
    for row in &table.rows {
        record.clear();
        record.push(row.trip_id.clone());
        record.push(row.driver_id.clone());
        record.push(BinaryLabel::option_code(row.label).to_string());
        record.extend(row.values.iter().map(f64::to_string));
        w.write_record(&record).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("writing feature csv", e))
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_feature_reader(file, path)
}

pub fn read_feature_reader<R: Read>(reader: R, path: &Path) -> Result<FeatureTable> {
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
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[..3] != ["trip_id", "driver_id", "label"] {
        return Err(parse_err(
            1,
            "feature csv header must start with `trip_id,driver_id,label`".into(),
        ));
    }
    let names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", cols.len(), rec.len()),
            ));
        }
        let label = BinaryLabel::parse_code(&rec[2]).map_err(|m| parse_err(line, m))?;
        let values = (3..rec.len())
            .map(|k| {
                let raw = rec[k].trim();
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("bad {} value `{raw}`", cols[k])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            trip_id: rec[0].trim().to_string(),
            driver_id: rec[1].trim().to_string(),
            label,
            values,
        });
    }
    Ok(FeatureTable { names, rows })
}
