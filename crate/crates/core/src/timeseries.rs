//! Core series types, NAB-format ingestion and temporal splitting.
//!
//! Value files are two-column CSVs (`timestamp,value`) with timestamps in
//! `YYYY-MM-DD HH:MM:SS` form. Ground truth comes from a single JSON object
//! mapping dataset keys (paths relative to the data root) to lists of
//! `[start, end]` timestamp pairs. Window bounds are inclusive.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;
use serde_json::Value;

use crate::error::{Error, Result};

pub type Timestamp = NaiveDateTime;

/// Canonical timestamp layout used when writing files.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
// `%.f` also accepts the fractional seconds present in NAB's label file.
const TIMESTAMP_PARSE_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.f";

pub fn parse_timestamp(raw: &str) -> Result<Timestamp> {
    NaiveDateTime::parse_from_str(raw.trim(), TIMESTAMP_PARSE_FORMAT)
        .map_err(|e| Error::Format(format!("bad timestamp '{raw}': {e}")))
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// A univariate series. Missing observations are stored as NaN until
/// [`crate::preprocess::repair_missing`] fills them.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    name: String,
    timestamps: Vec<Timestamp>,
    values: Vec<f64>,
    labels: Option<Vec<bool>>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, timestamps: Vec<Timestamp>, values: Vec<f64>) -> Result<Self> {
        if timestamps.is_empty() {
            return Err(Error::InsufficientData { required: 1, actual: 0 });
        }
        crate::error::ensure_same_len(timestamps.len(), values.len())?;
        if let Some(j) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Format(format!(
                "timestamps not strictly increasing at row {} ({} after {})",
                j + 1,
                format_timestamp(&timestamps[j + 1]),
                format_timestamp(&timestamps[j]),
            )));
        }
        Ok(TimeSeries { name: name.into(), timestamps, values, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        crate::error::ensure_same_len(self.len(), labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Replaces the values, keeping timestamps and labels.
    pub fn with_values(mut self, values: Vec<f64>) -> Result<Self> {
        crate::error::ensure_same_len(self.len(), values.len())?;
        self.values = values;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }
}

/// Reads a NAB value file. Non-numeric or empty value cells become NaN.
pub fn load_series(path: &Path) -> Result<TimeSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };

    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() != 2 || &header[0] != "timestamp" || &header[1] != "value" {
        return Err(Error::Format(format!(
            "{}: expected header 'timestamp,value', found '{}'",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let ts = record
            .get(0)
            .ok_or_else(|| Error::Format(format!("{}: row without timestamp", path.display())))?;
        timestamps.push(parse_timestamp(ts)?);
        let value = record.get(1).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
        values.push(if value.is_finite() { value } else { f64::NAN });
    }
    if timestamps.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }

    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    TimeSeries::new(name, timestamps, values)
}

/// Writes `timestamp,value`; missing values are written as empty cells.
/// Values use the shortest representation that round-trips exactly.
pub fn write_series(series: &TimeSeries, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut out = String::from("timestamp,value\n");
    for (ts, v) in series.timestamps.iter().zip(&series.values) {
        out.push_str(&format_timestamp(ts));
        out.push(',');
        if v.is_finite() {
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyWindows {
    pub dataset_name: String,
    windows: Vec<(Timestamp, Timestamp)>,
}

impl AnomalyWindows {
    pub fn new(dataset_name: impl Into<String>, mut windows: Vec<(Timestamp, Timestamp)>) -> Result<Self> {
        if let Some((s, e)) = windows.iter().find(|(s, e)| s > e) {
            return Err(Error::Format(format!(
                "window start {} after end {}",
                format_timestamp(s),
                format_timestamp(e)
            )));
        }
        windows.sort();
        Ok(AnomalyWindows { dataset_name: dataset_name.into(), windows })
    }

    pub fn empty(dataset_name: impl Into<String>) -> Self {
        AnomalyWindows { dataset_name: dataset_name.into(), windows: Vec::new() }
    }

    pub fn windows(&self) -> &[(Timestamp, Timestamp)] {
        &self.windows
    }

    pub fn contains(&self, ts: &Timestamp) -> bool {
        self.windows.iter().any(|(s, e)| s <= ts && ts <= e)
    }
}

/// The whole ground-truth file. Entries are validated when requested so a
/// single malformed key does not poison the rest of a corpus.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    entries: BTreeMap<String, Value>,
}

impl LabelMap {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let entries: BTreeMap<String, Value> = serde_json::from_reader(BufReader::new(file))
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        Ok(LabelMap { entries })
    }

    pub fn from_json_str(raw: &str) -> Result<Self> {
        let entries = serde_json::from_str(raw)
            .map_err(|source| Error::Json { path: "<inline>".into(), source })?;
        Ok(LabelMap { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn windows(&self, key: &str) -> Result<AnomalyWindows> {
        let raw = self.entries.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
        let list = raw
            .as_array()
            .ok_or_else(|| Error::Format(format!("labels for '{key}' are not a list")))?;
        let mut windows = Vec::with_capacity(list.len());
        for pair in list {
            let bounds = pair
                .as_array()
                .filter(|p| p.len() == 2)
                .and_then(|p| Some((p[0].as_str()?, p[1].as_str()?)))
                .ok_or_else(|| Error::Format(format!("malformed window {pair} for '{key}'")))?;
            windows.push((parse_timestamp(bounds.0)?, parse_timestamp(bounds.1)?));
        }
        AnomalyWindows::new(key, windows)
    }
}

pub fn load_windows(path: &Path, dataset_key: &str) -> Result<AnomalyWindows> {
    LabelMap::load(path)?.windows(dataset_key)
}

/// Point labels: `true` iff the timestamp falls inside any window.
pub fn expand_labels(windows: &AnomalyWindows, timestamps: &[Timestamp]) -> Vec<bool> {
    timestamps.iter().map(|t| windows.contains(t)).collect()
}

/// Index boundaries of a temporal train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitView {
    pub train_end: usize,
    pub val_end: usize,
    pub total: usize,
}

pub const MIN_SPLIT_LEN: usize = 10;

fn floor_fraction(frac: f64, n: usize) -> usize {
    // The epsilon absorbs representation error in fractions like 0.7, so
    // floor(0.7 * 10) is 7 rather than 6.
    (frac * n as f64 + 1e-9).floor() as usize
}

impl SplitView {
    pub fn new(total: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
            return Err(Error::invalid(
                "fractions",
                format!("need 0 < train ({train_frac}), 0 <= val ({val_frac}), train + val < 1"),
            ));
        }
        if total < MIN_SPLIT_LEN {
            return Err(Error::InsufficientData { required: MIN_SPLIT_LEN, actual: total });
        }
        let train_end = floor_fraction(train_frac, total);
        let val_end = train_end + floor_fraction(val_frac, total);
        if train_end == 0 || val_end >= total {
            return Err(Error::InsufficientData { required: total + 1, actual: total });
        }
        Ok(SplitView { train_end, val_end, total })
    }

    pub fn train(&self) -> Range<usize> {
        0..self.train_end
    }

    pub fn val(&self) -> Range<usize> {
        self.train_end..self.val_end
    }

    pub fn test(&self) -> Range<usize> {
        self.val_end..self.total
    }
}

pub fn split(series: &TimeSeries, train_frac: f64, val_frac: f64) -> Result<SplitView> {
    SplitView::new(series.len(), train_frac, val_frac)
}
