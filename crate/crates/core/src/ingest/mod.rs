//! Hourly balancing-authority observations: parsing, remote fetch, and
//! validation into a contiguous hourly series.

mod csv_io;
mod remote;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{parse_csv, serialize_csv, CsvSchema};
pub use remote::{fetch_remote, RemoteConfig, API_KEY_ENV};
pub use validate::{validate_series, GapPolicy};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty observation list")]
    Empty,
    #[error("mixed regions in one series: `{0}` and `{1}`")]
    MixedRegions(String, String),
    #[error("authentication error: {0}")]
    Auth(String),
    #[error("decode error on page at offset {offset}: {message}")]
    Decode { offset: usize, message: String },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("non-contiguous append: expected {expected}, got {actual}")]
    NonContiguous { expected: String, actual: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Generation source categories reported per balancing authority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuelKind {
    Coal,
    NaturalGas,
    Petroleum,
    Nuclear,
    Hydro,
    Wind,
    Solar,
    BatteryStorage,
    Imports,
    Other,
}

impl FuelKind {
    pub const ALL: [FuelKind; 10] = [
        FuelKind::Coal,
        FuelKind::NaturalGas,
        FuelKind::Petroleum,
        FuelKind::Nuclear,
        FuelKind::Hydro,
        FuelKind::Wind,
        FuelKind::Solar,
        FuelKind::BatteryStorage,
        FuelKind::Imports,
        FuelKind::Other,
    ];

    pub fn is_fossil(self) -> bool {
        matches!(self, FuelKind::Coal | FuelKind::NaturalGas | FuelKind::Petroleum)
    }

    /// Whether the source counts toward in-region generated electricity.
    pub fn is_generated(self) -> bool {
        self != FuelKind::Imports
    }

    pub fn name(self) -> &'static str {
        match self {
            FuelKind::Coal => "coal",
            FuelKind::NaturalGas => "natural_gas",
            FuelKind::Petroleum => "petroleum",
            FuelKind::Nuclear => "nuclear",
            FuelKind::Hydro => "hydro",
            FuelKind::Wind => "wind",
            FuelKind::Solar => "solar",
            FuelKind::BatteryStorage => "battery_storage",
            FuelKind::Imports => "imports",
            FuelKind::Other => "other",
        }
    }

    /// EIA fuel-type code.
    pub fn code(self) -> &'static str {
        match self {
            FuelKind::Coal => "COL",
            FuelKind::NaturalGas => "NG",
            FuelKind::Petroleum => "OIL",
            FuelKind::Nuclear => "NUC",
            FuelKind::Hydro => "WAT",
            FuelKind::Wind => "WND",
            FuelKind::Solar => "SUN",
            FuelKind::BatteryStorage => "BAT",
            FuelKind::Imports => "IMP",
            FuelKind::Other => "OTH",
        }
    }

    pub fn from_code(code: &str) -> Option<FuelKind> {
        FuelKind::ALL.into_iter().find(|f| f.code().eq_ignore_ascii_case(code))
    }
}

impl fmt::Display for FuelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FuelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        FuelKind::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .or_else(|| FuelKind::from_code(s))
            .ok_or_else(|| format!("unknown fuel kind `{s}`"))
    }
}

/// One UTC hour of balancing-authority data. Not-a-number marks a value
/// that is unknown; a row whose demand and CO₂ are both unknown is a
/// sentinel hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyObservation {
    pub timestamp: DateTime<Utc>,
    pub region: String,
    /// MWh
    pub demand: f64,
    /// MWh
    pub demand_forecast: Option<f64>,
    /// MWh, negative for net exports.
    pub net_imports: f64,
    /// MWh per fuel
    pub generation: BTreeMap<FuelKind, f64>,
    /// tonnes CO₂
    pub co2: f64,
}

impl HourlyObservation {
    /// A placeholder for an hour that could not be observed or filled.
    pub fn sentinel(timestamp: DateTime<Utc>, region: &str, fuels: impl IntoIterator<Item = FuelKind>) -> Self {
        HourlyObservation {
            timestamp,
            region: region.to_string(),
            demand: f64::NAN,
            demand_forecast: None,
            net_imports: f64::NAN,
            generation: fuels.into_iter().map(|f| (f, f64::NAN)).collect(),
            co2: f64::NAN,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.demand.is_nan() && self.co2.is_nan()
    }

    /// Bitwise equality that treats matching not-a-number values as equal.
    pub fn same_as(&self, other: &HourlyObservation) -> bool {
        fn eq(a: f64, b: f64) -> bool {
            a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
        }
        self.timestamp == other.timestamp
            && self.region == other.region
            && eq(self.demand, other.demand)
            && match (self.demand_forecast, other.demand_forecast) {
                (Some(a), Some(b)) => eq(a, b),
                (None, None) => true,
                _ => false,
            }
            && eq(self.net_imports, other.net_imports)
            && eq(self.co2, other.co2)
            && self.generation.len() == other.generation.len()
            && self
                .generation
                .iter()
                .zip(&other.generation)
                .all(|((fa, a), (fb, b))| fa == fb && eq(*a, *b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMethod {
    Interpolated,
    Missing,
    /// Duplicate rows collapsed onto one hour; `length` counts dropped rows.
    Deduplicated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapEntry {
    pub start: DateTime<Utc>,
    pub length: usize,
    pub method: FillMethod,
}

/// Contiguous hourly observations for one region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatedSeries {
    pub region: String,
    pub start: DateTime<Utc>,
    pub observations: Vec<HourlyObservation>,
    pub gap_report: Vec<GapEntry>,
    /// Negative values clamped to zero during validation.
    pub clamped_negatives: usize,
}

impl ValidatedSeries {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.observations.len() as i64)
    }

    /// Index of the hour starting at `ts`, if it lies inside the series.
    pub fn index_of(&self, ts: DateTime<Utc>) -> Option<usize> {
        let offset = (ts - self.start).num_hours();
        (offset >= 0 && (offset as usize) < self.observations.len() && ts == hour_floor(ts))
            .then_some(offset as usize)
    }

    pub fn same_observations(&self, other: &ValidatedSeries) -> bool {
        self.region == other.region
            && self.start == other.start
            && self.observations.len() == other.observations.len()
            && self.observations.iter().zip(&other.observations).all(|(a, b)| a.same_as(b))
    }

    /// Fuels appearing anywhere in the series, in enumeration order.
    pub fn fuels(&self) -> Vec<FuelKind> {
        fuel_union(&self.observations)
    }
}

pub(crate) fn fuel_union(obs: &[HourlyObservation]) -> Vec<FuelKind> {
    FuelKind::ALL
        .into_iter()
        .filter(|f| obs.iter().any(|o| o.generation.contains_key(f)))
        .collect()
}

pub(crate) fn hour_floor(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_nanosecond(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_minute(0))
        .unwrap_or(ts)
}

/// Parses the ISO-8601 forms seen in grid data exports. Naive timestamps are
/// taken as UTC. Sub-hour components are rejected.
pub fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    let s = raw.trim();
    let parsed = DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .or_else(|_| {
            // `2023-01-01T08:00Z`, `2023-01-01T08:00+00:00`
            DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M%#z").map(|t| t.with_timezone(&Utc))
        })
        .or_else(|_| {
            let naive = s.strip_suffix('Z').unwrap_or(s);
            ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
                .iter()
                .find_map(|f| NaiveDateTime::parse_from_str(naive, f).ok())
                .or_else(|| {
                    // EIA `period` form: `2023-01-01T08`
                    let (date, hour) = naive.split_once('T')?;
                    let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
                    date.and_hms_opt(hour.parse().ok()?, 0, 0)
                })
                .map(|n| n.and_utc())
                .ok_or(())
        })
        .map_err(|_| format!("unparseable timestamp `{s}`"))?;
    if parsed != hour_floor(parsed) {
        return Err(format!("timestamp `{s}` is not on an hour boundary"));
    }
    Ok(parsed)
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%MZ").to_string()
}
