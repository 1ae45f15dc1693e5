//! Ingestion of raw univariate series and conversion into fixed-length
//! scenario sets.
//!
//! A raw series is read from CSV, partitioned into windows aligned to
//! midnight, stripped of incomplete windows, scaled to `[0, 1]` and split
//! into training and validation rows. Scenario sets are persisted as a plain
//! CSV matrix plus a `key=value` sidecar (`<file>.meta`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MINUTES_PER_DAY: u32 = 24 * 60;
const UNIT_TOLERANCE: f64 = 1e-9;

/// Column names used to pull a series out of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub time_col: String,
    pub value_col: String,
    pub capacity_col: Option<String>,
}

impl ColumnSchema {
    pub fn new(time_col: impl Into<String>, value_col: impl Into<String>) -> Self {
        Self {
            time_col: time_col.into(),
            value_col: value_col.into(),
            capacity_col: None,
        }
    }

    pub fn with_capacity(mut self, capacity_col: impl Into<String>) -> Self {
        self.capacity_col = Some(capacity_col.into());
        self
    }
}

/// A univariate series on a uniform nominal grid. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    timestamps: Vec<NaiveDateTime>,
    values: Vec<Option<f64>>,
    capacity: Option<Vec<Option<f64>>>,
    interval_minutes: u32,
}

impl RawSeries {
    /// Builds a series, inferring the nominal spacing as the most common
    /// gap between consecutive timestamps.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        values: Vec<Option<f64>>,
        capacity: Option<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if values.len() != timestamps.len() {
            return Err(Error::Invariant(format!(
                "{} values for {} timestamps",
                values.len(),
                timestamps.len()
            )));
        }
        if let Some(cap) = &capacity {
            if cap.len() != timestamps.len() {
                return Err(Error::Invariant(format!(
                    "{} capacity entries for {} timestamps",
                    cap.len(),
                    timestamps.len()
                )));
            }
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Invariant(format!(
                "timestamps not increasing at index {}",
                i + 1
            )));
        }
        let interval_minutes = infer_interval(&timestamps)?;
        Ok(Self {
            timestamps,
            values,
            capacity,
            interval_minutes,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn capacity(&self) -> Option<&[Option<f64>]> {
        self.capacity.as_deref()
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }
}

fn infer_interval(timestamps: &[NaiveDateTime]) -> Result<u32> {
    if timestamps.len() < 2 {
        return Err(Error::Invariant(
            "at least two timestamps are needed to infer the sampling interval".into(),
        ));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in timestamps.windows(2) {
        *counts.entry((w[1] - w[0]).num_seconds()).or_default() += 1;
    }
    // Most frequent gap; smaller gap wins a tie.
    let (&secs, _) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("at least one gap");
    if secs <= 0 || secs % 60 != 0 {
        return Err(Error::Invariant(format!(
            "sampling interval of {secs} s is not a whole number of minutes"
        )));
    }
    Ok((secs / 60) as u32)
}

/// A parsed timestamp: naive wall-clock time plus the UTC offset in seconds
/// when the text carried one.
fn parse_timestamp(raw: &str) -> Option<(NaiveDateTime, Option<i32>)> {
    let s = raw.trim();
    let zoned = DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%z"))
        .or_else(|_| DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%z"));
    if let Ok(dt) = zoned {
        return Some((dt.naive_utc(), Some(dt.offset().local_minus_utc())));
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| (t, None))
}

fn parse_optional(raw: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || matches!(s, "NaN" | "nan" | "null") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("column '{column}': cannot parse '{s}' as a number"),
    })
}

/// Reads a CSV file with a header row into a [`RawSeries`].
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<RawSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

/// Parses CSV text; see [`load_csv`].
pub fn parse_csv(text: &str, schema: &ColumnSchema) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let t_idx = column(&schema.time_col)?;
    let v_idx = column(&schema.value_col)?;
    let c_idx = schema.capacity_col.as_deref().map(column).transpose()?;

    let mut parsed = Vec::new();
    let mut values = Vec::new();
    let mut capacity = c_idx.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let ts = parse_timestamp(field(t_idx)).ok_or_else(|| Error::Parse {
            line,
            message: format!("malformed timestamp '{}'", field(t_idx)),
        })?;
        parsed.push((ts, line));
        values.push(parse_optional(field(v_idx), line, &schema.value_col)?);
        if let (Some(ci), Some(cap)) = (c_idx, capacity.as_mut()) {
            cap.push(parse_optional(
                field(ci),
                line,
                schema.capacity_col.as_deref().unwrap_or_default(),
            )?);
        }
    }
    RawSeries::new(to_wall_clock(&parsed)?, values, capacity)
}

/// Offset-bearing timestamps are expressed in local standard time, taken as
/// the smallest offset in the file. Daylight-saving shifts then neither
/// shorten nor duplicate a day. Timestamps without offsets are used as given.
fn to_wall_clock(parsed: &[((NaiveDateTime, Option<i32>), usize)]) -> Result<Vec<NaiveDateTime>> {
    let zoned = parsed.iter().filter(|((_, o), _)| o.is_some()).count();
    if zoned == 0 {
        return Ok(parsed.iter().map(|((t, _), _)| *t).collect());
    }
    if zoned != parsed.len() {
        let line = parsed
            .iter()
            .find(|((_, o), _)| o.is_none())
            .map_or(0, |(_, l)| *l);
        return Err(Error::Parse {
            line,
            message: "timestamps mix explicit UTC offsets and local times".into(),
        });
    }
    let standard = parsed
        .iter()
        .filter_map(|((_, o), _)| *o)
        .min()
        .expect("non-empty");
    Ok(parsed
        .iter()
        .map(|((utc, _), _)| *utc + chrono::Duration::seconds(standard as i64))
        .collect())
}

/// How the values of a scenario set were mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling {
    None,
    /// Global min/max affine map.
    MinMax { min: f64, max: f64 },
    /// Division by installed capacity. `reference` is the most recent
    /// capacity seen and is used to express generated scenarios in power units.
    CapacityFactor { reference: f64 },
}

impl Scaling {
    /// Maps one scaled value back to original units; capacity factors use
    /// the reference capacity.
    pub fn invert(&self, v: f64) -> f64 {
        match *self {
            Scaling::None => v,
            Scaling::MinMax { min, max } => v * (max - min) + min,
            Scaling::CapacityFactor { reference } => v * reference,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scaling::None => "none",
            Scaling::MinMax { .. } => "minmax",
            Scaling::CapacityFactor { .. } => "capacity_factor",
        }
    }
}

/// Requested scaling for [`scale`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMode {
    None,
    MinMax,
    CapacityFactor,
}

/// `N` scenarios of `D` time steps each, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    data: Vec<f64>,
    n_rows: usize,
    period_length: usize,
    interval_minutes: u32,
    scaling: Scaling,
    /// Index into the source series of each row's first value, when known.
    source_starts: Option<Vec<usize>>,
}

impl ScenarioSet {
    pub fn new(
        data: Vec<f64>,
        period_length: usize,
        interval_minutes: u32,
        scaling: Scaling,
    ) -> Result<Self> {
        if period_length == 0 {
            return Err(Error::Argument("period length must be at least 1".into()));
        }
        if data.len() % period_length != 0 {
            return Err(Error::Invariant(format!(
                "{} values do not form rows of length {period_length}",
                data.len()
            )));
        }
        let n_rows = data.len() / period_length;
        if n_rows == 0 {
            return Err(Error::Invariant("scenario set has no rows".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite value in row {}, column {}",
                i / period_length,
                i % period_length
            )));
        }
        if !matches!(scaling, Scaling::None) {
            if let Some(v) = data
                .iter()
                .find(|&&v| !(-UNIT_TOLERANCE..=1.0 + UNIT_TOLERANCE).contains(&v))
            {
                return Err(Error::Scaling(format!(
                    "scaled value {v} lies outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            data,
            n_rows,
            period_length,
            interval_minutes,
            scaling,
            source_starts: None,
        })
    }

    /// Builds a set from rows, all of equal length.
    pub fn from_rows(rows: &[Vec<f64>], interval_minutes: u32, scaling: Scaling) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Invariant(format!(
                "row {r} has {} entries, expected {d}",
                rows[r].len()
            )));
        }
        Self::new(rows.concat(), d, interval_minutes, scaling)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn period_length(&self) -> usize {
        self.period_length
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.period_length..(i + 1) * self.period_length]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.period_length)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn source_starts(&self) -> Option<&[usize]> {
        self.source_starts.as_deref()
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.period_length);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(data, self.period_length, self.interval_minutes, self.scaling)?;
        out.source_starts = self
            .source_starts
            .as_ref()
            .map(|s| indices.iter().map(|&i| s[i]).collect());
        Ok(out)
    }

    /// Maps values back to original units using the recorded scaling.
    ///
    /// Capacity-factor sets use the aligned capacity series when one is given
    /// and the row provenance is known; otherwise the reference capacity.
    pub fn descale(&self, capacity: Option<&[Option<f64>]>) -> Result<Self> {
        let d = self.period_length;
        let data = match self.scaling {
            Scaling::None | Scaling::MinMax { .. } => {
                self.data.iter().map(|&v| self.scaling.invert(v)).collect()
            }
            Scaling::CapacityFactor { .. } => match (capacity, &self.source_starts) {
                (Some(cap), Some(starts)) => {
                    let mut out = Vec::with_capacity(self.data.len());
                    for (row, &start) in self.rows().zip(starts) {
                        for (j, v) in row.iter().enumerate() {
                            let c = cap.get(start + j).copied().flatten().ok_or_else(|| {
                                Error::Scaling(format!("no capacity at index {}", start + j))
                            })?;
                            out.push(v * c);
                        }
                    }
                    out
                }
                _ => self.data.iter().map(|&v| self.scaling.invert(v)).collect(),
            },
        };
        let mut out = Self::new(data, d, self.interval_minutes, Scaling::None)?;
        out.source_starts = self.source_starts.clone();
        Ok(out)
    }
}

/// Partitions the series into midnight-aligned windows of `period_length`
/// steps and keeps only the complete ones.
///
/// A window survives iff every expected time step is present exactly once
/// with a non-missing value. Days with a different number of points (daylight
/// saving transitions, gaps) are dropped and logged.
pub fn clean_and_slice(series: &RawSeries, period_length: usize) -> Result<ScenarioSet> {
    let interval = series.interval_minutes();
    if period_length == 0 {
        return Err(Error::Argument("period length must be at least 1".into()));
    }
    let window_minutes = period_length as u64 * interval as u64;
    if window_minutes > MINUTES_PER_DAY as u64 || MINUTES_PER_DAY as u64 % window_minutes != 0 {
        return Err(Error::Argument(format!(
            "{period_length} steps of {interval} min do not divide a day"
        )));
    }
    let window_minutes = window_minutes as u32;

    let ts = series.timestamps();
    let values = series.values();
    let mut data = Vec::new();
    let mut starts = Vec::new();
    let mut dropped = 0usize;

    let mut i = 0;
    while i < ts.len() {
        let minute = ts[i].hour() * 60 + ts[i].minute();
        let window_start_minute = minute - minute % window_minutes;
        let key = (ts[i].date(), window_start_minute);
        let mut j = i;
        while j < ts.len() && {
            let m = ts[j].hour() * 60 + ts[j].minute();
            (ts[j].date(), m - m % window_minutes) == key
        } {
            j += 1;
        }
        let complete = j - i == period_length
            && ts[i..j].iter().enumerate().all(|(k, t)| {
                t.second() == 0
                    && t.nanosecond() == 0
                    && t.hour() * 60 + t.minute() == window_start_minute + k as u32 * interval
            });
        if complete && values[i..j].iter().all(Option::is_some) {
            data.extend(values[i..j].iter().map(|v| v.unwrap()));
            starts.push(i);
        } else {
            if j - i != period_length {
                log::warn!(
                    "dropping window {} {:02}:{:02} with {} of {} points",
                    key.0,
                    key.1 / 60,
                    key.1 % 60,
                    j - i,
                    period_length
                );
            }
            dropped += 1;
        }
        i = j;
    }
    log::debug!("kept {} windows, dropped {dropped}", starts.len());
    if starts.len() < 2 {
        return Err(Error::InsufficientData {
            surviving: starts.len(),
        });
    }
    let mut set = ScenarioSet::new(data, period_length, interval, Scaling::None)?;
    set.source_starts = Some(starts);
    Ok(set)
}

/// Scales an unscaled set onto `[0, 1]`.
///
/// `capacity` must be aligned with the series the set was sliced from.
pub fn scale(
    set: &ScenarioSet,
    mode: ScalingMode,
    capacity: Option<&[Option<f64>]>,
) -> Result<ScenarioSet> {
    if !matches!(set.scaling, Scaling::None) {
        return Err(Error::Argument(format!(
            "set is already scaled ({})",
            set.scaling.name()
        )));
    }
    let (data, scaling) = match mode {
        ScalingMode::None => (set.data.clone(), Scaling::None),
        ScalingMode::MinMax => {
            let (min, max) = set
                .data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if max <= min {
                return Err(Error::DegenerateRange(min));
            }
            let data = set
                .data
                .iter()
                .map(|v| ((v - min) / (max - min)).clamp(0.0, 1.0))
                .collect();
            (data, Scaling::MinMax { min, max })
        }
        ScalingMode::CapacityFactor => {
            let capacity = capacity.ok_or_else(|| {
                Error::Scaling("capacity-factor scaling requires a capacity series".into())
            })?;
            let starts = set.source_starts.as_ref().ok_or_else(|| {
                Error::Scaling("set has no provenance to align capacity with".into())
            })?;
            let mut data = Vec::with_capacity(set.data.len());
            let mut last = (0usize, f64::NAN);
            for (row, &start) in set.rows().zip(starts) {
                for (j, v) in row.iter().enumerate() {
                    let idx = start + j;
                    match capacity.get(idx).copied().flatten() {
                        Some(c) if c > 0.0 && c.is_finite() => {
                            if idx >= last.0 || last.1.is_nan() {
                                last = (idx, c);
                            }
                            data.push(v / c);
                        }
                        Some(c) => {
                            return Err(Error::Scaling(format!(
                                "non-positive capacity {c} at index {idx}"
                            )))
                        }
                        None => {
                            return Err(Error::Scaling(format!("missing capacity at index {idx}")))
                        }
                    }
                }
            }
            (data, Scaling::CapacityFactor { reference: last.1 })
        }
    };
    let mut out = ScenarioSet::new(data, set.period_length, set.interval_minutes, scaling)?;
    out.source_starts = set.source_starts.clone();
    Ok(out)
}

/// Seeded random split by row. The validation part gets
/// `floor(N * validation_fraction)` rows; both parts keep input order.
pub fn split(
    set: &ScenarioSet,
    validation_fraction: f64,
    seed: u64,
) -> Result<(ScenarioSet, ScenarioSet)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "validation fraction {validation_fraction} not in (0, 1)"
        )));
    }
    let n = set.n_rows();
    let n_val = (n as f64 * validation_fraction).floor() as usize;
    if n_val < 1 || n_val >= n {
        return Err(Error::Argument(format!(
            "fraction {validation_fraction} of {n} rows leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((set.select(&train)?, set.select(&val)?))
}

/// Path of the metadata sidecar written next to a scenario CSV.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Renders the set as CSV text, one scenario per row.
pub fn to_csv_string(set: &ScenarioSet, header_comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = header_comment {
        let _ = writeln!(out, "# {c}");
    }
    for row in set.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn metadata_string(set: &ScenarioSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "period_length={}", set.period_length);
    let _ = writeln!(out, "interval_minutes={}", set.interval_minutes);
    let _ = writeln!(out, "scaling={}", set.scaling.name());
    match set.scaling {
        Scaling::MinMax { min, max } => {
            let _ = writeln!(out, "min={min}");
            let _ = writeln!(out, "max={max}");
        }
        Scaling::CapacityFactor { reference } => {
            let _ = writeln!(out, "capacity_reference={reference}");
        }
        Scaling::None => {}
    }
    out
}

/// Writes `path` and its `.meta` sidecar. `header_comment` becomes a leading
/// `#` line in the CSV.
pub fn save_scenarios(
    set: &ScenarioSet,
    path: impl AsRef<Path>,
    header_comment: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv_string(set, header_comment)).map_err(|e| Error::io(path, e))?;
    let meta = metadata_path(path);
    fs::write(&meta, metadata_string(set)).map_err(|e| Error::io(&meta, e))
}

/// Scenario-file metadata as read from a sidecar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioMetadata {
    pub period_length: usize,
    pub interval_minutes: u32,
    pub scaling: Scaling,
}

pub fn parse_metadata(text: &str) -> Result<ScenarioMetadata> {
    let mut kv = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("expected key=value, got '{line}'"),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::Schema(format!("metadata key '{k}' missing")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Schema(format!("metadata key '{k}' is not a number")))
    };
    let period_length = get("period_length")?
        .parse()
        .map_err(|_| Error::Schema("period_length is not a count".into()))?;
    let interval_minutes = get("interval_minutes")?
        .parse()
        .map_err(|_| Error::Schema("interval_minutes is not a count".into()))?;
    let scaling = match get("scaling")?.as_str() {
        "none" => Scaling::None,
        "minmax" => Scaling::MinMax {
            min: num("min")?,
            max: num("max")?,
        },
        "capacity_factor" => Scaling::CapacityFactor {
            reference: num("capacity_reference")?,
        },
        other => return Err(Error::Schema(format!("unknown scaling '{other}'"))),
    };
    Ok(ScenarioMetadata {
        period_length,
        interval_minutes,
        scaling,
    })
}

/// Reads a scenario CSV and its sidecar. Lines starting with `#` are skipped.
pub fn load_scenarios(path: impl AsRef<Path>) -> Result<ScenarioSet> {
    let path = path.as_ref();
    let meta_path = metadata_path(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = parse_metadata(&meta_text)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = data.len();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("cannot parse '{}' as a number", cell.trim()),
            })?;
            data.push(v);
        }
        if data.len() - before != meta.period_length {
            return Err(Error::Parse {
                line: n + 1,
                message: format!(
                    "row has {} entries, metadata says {}",
                    data.len() - before,
                    meta.period_length
                ),
            });
        }
    }
    ScenarioSet::new(data, meta.period_length, meta.interval_minutes, meta.scaling)
}
