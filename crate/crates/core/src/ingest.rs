//! Monthly series ingestion: CSV loading, window alignment and the
//! transforms (log returns, z-scores, log-level factor inputs) that every
//! estimator consumes.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::error::ErrorCategory;
use crate::format::fmt_sig;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: column `{column}` not found in header")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },
    #[error("invalid month `{0}`: expected YYYY-MM or YYYY-MM-DD")]
    InvalidMonth(String),
    #[error("series `{id}`: duplicate observation for {month}")]
    DuplicateDate { id: String, month: Month },
    #[error("series `{0}`: no observations")]
    NoObservations(String),
    #[error("series `{id}`: dates must be strictly increasing ({prev} then {next})")]
    UnorderedDates { id: String, prev: Month, next: Month },
    #[error("series `{id}`: non-finite value at {month}")]
    NonFinite { id: String, month: Month },
    #[error("series `{id}`: {len} dates but {values} values")]
    LengthMismatch { id: String, len: usize, values: usize },
    #[error("series `{id}`: non-positive level {value} at {month}")]
    NonPositiveLevel { id: String, month: Month, value: f64 },
    #[error("series `{id}`: need at least {required} observations, got {got}")]
    TooShort { id: String, required: usize, got: usize },
    #[error("window start {start} is after end {end}")]
    EmptyWindow { start: Month, end: Month },
    #[error("series `{id}` is missing months in the window: {}", format_months(.missing))]
    Gaps { id: String, missing: Vec<Month> },
    #[error("panel column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("panel needs at least {required} rows, got {got}")]
    PanelTooShort { required: usize, got: usize },
    #[error("failed to write CSV: {0}")]
    Write(#[from] std::io::Error),
}

impl IngestError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            IngestError::Io { .. }
            | IngestError::MissingColumn { .. }
            | IngestError::Parse { .. }
            | IngestError::Write(_) => ErrorCategory::Io,
            _ => ErrorCategory::Precondition,
        }
    }
}

fn format_months(months: &[Month]) -> String {
    const SHOWN: usize = 12;
    let mut out: Vec<String> = months.iter().take(SHOWN).map(Month::to_string).collect();
    if months.len() > SHOWN {
        out.push(format!("... ({} total)", months.len()));
    }
    out.join(", ")
}

/// A calendar month. All data handled by this crate is monthly, so there is
/// no day component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    year: i32,
    month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self, IngestError> {
        if !(1..=12).contains(&month) {
            return Err(IngestError::InvalidMonth(format!("{year}-{month}")));
        }
        Ok(Self { year, month })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    fn ordinal(&self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ordinal: i64) -> Self {
        Self { year: ordinal.div_euclid(12) as i32, month: ordinal.rem_euclid(12) as u32 + 1 }
    }

    pub fn succ(&self) -> Self {
        self.offset(1)
    }

    pub fn offset(&self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Signed number of months from `self` to `later`.
    pub fn months_until(&self, later: Month) -> i64 {
        later.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = IngestError;

    /// Accepts `YYYY-MM` and `YYYY-MM-DD`; the day is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidMonth(s.to_string());
        let mut parts = s.trim().split('-');
        let year = parts.next().filter(|p| p.len() == 4).ok_or_else(bad)?;
        let month = parts.next().filter(|p| p.len() == 2).ok_or_else(bad)?;
        if let Some(day) = parts.next() {
            let day: u32 = day.parse().map_err(|_| bad())?;
            if !(1..=31).contains(&day) {
                return Err(bad());
            }
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        let year = year.parse().map_err(|_| bad())?;
        let month = month.parse().map_err(|_| bad())?;
        Month::new(year, month).map_err(|_| bad())
    }
}

/// Inclusive range of months.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonthRange {
    pub start: Month,
    pub end: Month,
}

impl MonthRange {
    pub fn new(start: Month, end: Month) -> Result<Self, IngestError> {
        if start > end {
            return Err(IngestError::EmptyWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        (self.start.months_until(self.end) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn months(&self) -> impl Iterator<Item = Month> + '_ {
        (0..self.len() as i64).map(move |k| self.start.offset(k))
    }
}

/// Anything indexed by month with one value per month.
pub trait MonthlySeries {
    fn id(&self) -> &str;
    fn dates(&self) -> &[Month];
    fn values(&self) -> &[f64];

    fn len(&self) -> usize {
        self.values().len()
    }

    fn is_empty(&self) -> bool {
        self.values().is_empty()
    }
}

fn validate(id: &str, dates: &[Month], values: &[f64]) -> Result<(), IngestError> {
    if dates.len() != values.len() {
        return Err(IngestError::LengthMismatch { id: id.to_string(), len: dates.len(), values: values.len() });
    }
    for w in dates.windows(2) {
        if w[0] >= w[1] {
            return Err(IngestError::UnorderedDates { id: id.to_string(), prev: w[0], next: w[1] });
        }
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(IngestError::NonFinite { id: id.to_string(), month: dates[k] });
    }
    Ok(())
}

macro_rules! monthly_series {
    ($name:ident) => {
        impl $name {
            /// Dates must be strictly increasing and values finite.
            pub fn new(id: impl Into<String>, dates: Vec<Month>, values: Vec<f64>) -> Result<Self, IngestError> {
                let id = id.into();
                validate(&id, &dates, &values)?;
                Ok(Self { id, dates, values })
            }

            /// Consecutive months starting at `start`.
            pub fn from_values(id: impl Into<String>, start: Month, values: Vec<f64>) -> Result<Self, IngestError> {
                let dates = (0..values.len() as i64).map(|k| start.offset(k)).collect();
                Self::new(id, dates, values)
            }
        }

        impl MonthlySeries for $name {
            fn id(&self) -> &str {
                &self.id
            }

            fn dates(&self) -> &[Month] {
                &self.dates
            }

            fn values(&self) -> &[f64] {
                &self.values
            }
        }
    };
}

/// Dated monthly observations of one variable (prices or index levels).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    id: String,
    dates: Vec<Month>,
    values: Vec<f64>,
}

/// Log first differences of a [`TimeSeries`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    id: String,
    dates: Vec<Month>,
    values: Vec<f64>,
}

monthly_series!(TimeSeries);
monthly_series!(ReturnSeries);

const MISSING_MARKERS: &[&str] = &["", "NA", "N/A", "#N/A", "NaN", "nan", ".", "null"];

/// Loads one column of a headed CSV file as a monthly series.
///
/// Rows whose value is a missing marker (`""`, `NA`, `.`, `#N/A`, ...) are
/// skipped, which leaves a gap for [`align_panel`] to deal with. Rows are
/// sorted by month; a month appearing twice is an error.
pub fn load_series(path: impl AsRef<Path>, value_column: &str, date_column: &str) -> Result<TimeSeries, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);

    let parse_err = |row: usize, message: String| IngestError::Parse { path: path.to_path_buf(), row, message };
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(parse_err(1, e.to_string())),
    };
    let find = |column: &str| {
        headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| IngestError::MissingColumn { path: path.to_path_buf(), column: column.to_string() })
    };
    let date_idx = find(date_column)?;
    let value_idx = find(value_column)?;

    let mut rows: Vec<(Month, f64, usize)> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        // Header is row 1.
        let row = k + 2;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        let raw_date = record.get(date_idx).unwrap_or("");
        let raw_value = record.get(value_idx).unwrap_or("");
        let month: Month = raw_date.parse().map_err(|e: IngestError| parse_err(row, e.to_string()))?;
        if MISSING_MARKERS.contains(&raw_value) {
            continue;
        }
        let value: f64 =
            raw_value.parse().map_err(|_| parse_err(row, format!("cannot parse `{raw_value}` as a number")))?;
        if !value.is_finite() {
            return Err(parse_err(row, format!("non-finite value `{raw_value}`")));
        }
        rows.push((month, value, row));
    }
    if rows.is_empty() {
        return Err(IngestError::NoObservations(value_column.to_string()));
    }
    rows.sort_by_key(|&(month, _, _)| month);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(IngestError::DuplicateDate { id: value_column.to_string(), month: w[0].0 });
    }
    let (dates, values) = rows.into_iter().map(|(m, v, _)| (m, v)).unzip();
    TimeSeries::new(value_column, dates, values)
}

/// `ln(level_t) - ln(level_{t-1})`, dated at the later month of each pair.
///
/// Consecutive observations are differenced as given; align first if the
/// series has gaps.
pub fn to_log_returns(s: &TimeSeries) -> Result<ReturnSeries, IngestError> {
    if s.len() < 2 {
        return Err(IngestError::TooShort { id: s.id.clone(), required: 2, got: s.len() });
    }
    if let Some(k) = s.values.iter().position(|&v| v <= 0.0) {
        return Err(IngestError::NonPositiveLevel { id: s.id.clone(), month: s.dates[k], value: s.values[k] });
    }
    let values = s.values.windows(2).map(|w| w[1].ln() - w[0].ln()).collect();
    ReturnSeries::new(s.id.clone(), s.dates[1..].to_vec(), values)
}

/// How interior gaps are treated when aligning series to a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Any month of the window absent from a series is an error.
    #[default]
    Strict,
    /// Carry the last observation forward. A series must still have an
    /// observation at or before the window start.
    Ffill,
}

/// A `T x n` matrix of date-aligned series without missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    ids: Vec<String>,
    dates: Vec<Month>,
    data: DMatrix<f64>,
}

impl Panel {
    pub fn new(ids: Vec<String>, dates: Vec<Month>, data: DMatrix<f64>) -> Result<Self, IngestError> {
        assert_eq!(ids.len(), data.ncols(), "one id per column");
        assert_eq!(dates.len(), data.nrows(), "one date per row");
        for (j, id) in ids.iter().enumerate() {
            let n = data.nrows();
            validate(id, &dates, &data.as_slice()[j * n..(j + 1) * n])?;
        }
        Ok(Self { ids, dates, data })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dates(&self) -> &[Month] {
        &self.dates
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.nrows();
        &self.data.as_slice()[j * n..(j + 1) * n]
    }

    pub fn column_series(&self, j: usize) -> TimeSeries {
        TimeSeries { id: self.ids[j].clone(), dates: self.dates.clone(), values: self.column(j).to_vec() }
    }

    /// Writes the panel as CSV: `date` column then one column per series,
    /// values at 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), IngestError> {
        write!(out, "date")?;
        for id in &self.ids {
            write!(out, ",{id}")?;
        }
        writeln!(out)?;
        for (t, month) in self.dates.iter().enumerate() {
            write!(out, "{month}")?;
            for j in 0..self.ncols() {
                write!(out, ",{}", fmt_sig(self.data[(t, j)], 12))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    fn map_columns(&self, f: impl Fn(&str, &[f64]) -> Result<Vec<f64>, IngestError>) -> Result<Panel, IngestError> {
        let mut data = DMatrix::zeros(self.nrows(), self.ncols());
        for j in 0..self.ncols() {
            let col = f(&self.ids[j], self.column(j))?;
            data.column_mut(j).copy_from_slice(&col);
        }
        Ok(Panel { ids: self.ids.clone(), dates: self.dates.clone(), data })
    }
}

/// Aligns series to the inclusive `window`, one column per series in input
/// order.
pub fn align_panel<S: MonthlySeries>(
    series: &[S],
    window: MonthRange,
    policy: MissingPolicy,
) -> Result<Panel, IngestError> {
    let months: Vec<Month> = window.months().collect();
    let mut data = DMatrix::zeros(months.len(), series.len());
    for (j, s) in series.iter().enumerate() {
        let dates = s.dates();
        let values = s.values();
        let mut missing = Vec::new();
        // Index of the first observation not yet consumed.
        let mut cursor = dates.partition_point(|d| *d < window.start);
        let mut carried = match policy {
            MissingPolicy::Ffill if cursor > 0 => Some(values[cursor - 1]),
            _ => None,
        };
        for (t, month) in months.iter().enumerate() {
            if cursor < dates.len() && dates[cursor] == *month {
                data[(t, j)] = values[cursor];
                carried = Some(values[cursor]);
                cursor += 1;
                continue;
            }
            match (policy, carried) {
                (MissingPolicy::Ffill, Some(v)) => data[(t, j)] = v,
                _ => missing.push(*month),
            }
        }
        if !missing.is_empty() {
            return Err(IngestError::Gaps { id: s.id().to_string(), missing });
        }
    }
    let ids = series.iter().map(|s| s.id().to_string()).collect();
    Ok(Panel { ids, dates: months, data })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn zscore(id: &str, values: &[f64]) -> Result<Vec<f64>, IngestError> {
    let (mean, sd) = mean_sd(values);
    if sd.is_nan() || sd <= 0.0 || sd.is_infinite() {
        return Err(IngestError::ZeroVariance(id.to_string()));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Z-scores every column (sample standard deviation, `T - 1` divisor).
pub fn standardize(p: &Panel) -> Result<Panel, IngestError> {
    if p.nrows() < 2 {
        return Err(IngestError::PanelTooShort { required: 2, got: p.nrows() });
    }
    p.map_columns(zscore)
}

/// Factor-model input transform: natural log of each (positive) index
/// level, then z-scored per column.
pub fn dfm_input_transform(p: &Panel) -> Result<Panel, IngestError> {
    let logged = p.map_columns(|id, col| {
        if let Some(t) = col.iter().position(|&v| v <= 0.0) {
            return Err(IngestError::NonPositiveLevel { id: id.to_string(), month: p.dates[t], value: col[t] });
        }
        Ok(col.iter().map(|v| v.ln()).collect())
    })?;
    standardize(&logged)
}
