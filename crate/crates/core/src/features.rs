//! Day-ahead training examples: one window per forecast date with the
//! previous day's demand, emissions and their hourly ramps, the day-ahead
//! demand forecast, and calendar encodings. The target is the forecast
//! date's observed hourly emissions.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ValidatedSeries;
use crate::series::{DayClock, DerivedSeries};

pub const HOURS: usize = 24;
pub const CALENDAR_WIDTH: usize = 12;
pub const SIGMA_FLOOR: f64 = 1e-6;
const DATASET_MAGIC: &[u8; 8] = b"MEFDSET1";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least 3 windows to split, got {0}")]
    TooFewWindows(usize),
    #[error("invalid split fractions: {0}")]
    BadFractions(String),
    #[error("no window for {date}: {reason}")]
    Unavailable { date: NaiveDate, reason: DropReason },
    #[error("window channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named model input groups. Every group is `channels() × 24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelGroup {
    PrevDemand,
    PrevEmissions,
    PrevMarginalEmissions,
    PrevMarginalDemand,
    DayaheadDemandForecast,
    Calendar,
}

impl ChannelGroup {
    pub const ALL: [ChannelGroup; 6] = [
        ChannelGroup::PrevDemand,
        ChannelGroup::PrevEmissions,
        ChannelGroup::PrevMarginalEmissions,
        ChannelGroup::PrevMarginalDemand,
        ChannelGroup::DayaheadDemandForecast,
        ChannelGroup::Calendar,
    ];

    pub fn channels(self) -> usize {
        match self {
            ChannelGroup::Calendar => CALENDAR_WIDTH,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelGroup::PrevDemand => "prev_demand",
            ChannelGroup::PrevEmissions => "prev_emissions",
            ChannelGroup::PrevMarginalEmissions => "prev_marginal_emissions",
            ChannelGroup::PrevMarginalDemand => "prev_marginal_demand",
            ChannelGroup::DayaheadDemandForecast => "dayahead_demand_forecast",
            ChannelGroup::Calendar => "calendar",
        }
    }

    pub fn is_normalized(self) -> bool {
        self != ChannelGroup::Calendar
    }
}

impl fmt::Display for ChannelGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Model inputs and target for one forecast date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub forecast_date: NaiveDate,
    /// Each group stored channel-major: `values[c * 24 + h]`.
    pub inputs: BTreeMap<ChannelGroup, Vec<f64>>,
    /// Observed emissions of `forecast_date`, t.
    pub target: Option<Vec<f64>>,
    /// Set when the demand-forecast channel was filled from observed demand.
    pub forecast_fallback: bool,
}

impl FeatureWindow {
    pub fn channel(&self, group: ChannelGroup) -> &[f64] {
        &self.inputs[&group]
    }

    pub fn channel_mut(&mut self, group: ChannelGroup) -> &mut Vec<f64> {
        self.inputs.get_mut(&group).expect("window carries every channel group")
    }

    pub fn check_shape(&self) -> Result<(), FeatureError> {
        for g in ChannelGroup::ALL {
            match self.inputs.get(&g) {
                None => return Err(FeatureError::ChannelMismatch(format!("missing group `{g}`"))),
                Some(v) if v.len() != g.channels() * HOURS => {
                    return Err(FeatureError::ChannelMismatch(format!(
                        "group `{g}` has {} values, expected {}",
                        v.len(),
                        g.channels() * HOURS
                    )))
                }
                _ => {}
            }
        }
        match &self.target {
            Some(t) if t.len() != HOURS => Err(FeatureError::ChannelMismatch(format!("target has {} values", t.len()))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoPredecessorDay,
    MissingHours,
    NoCrossMidnightHour,
    MissingDemandForecast,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::NoPredecessorDay => "previous day not in series",
            DropReason::MissingHours => "missing hours in the previous or forecast day",
            DropReason::NoCrossMidnightHour => "no hour before the previous day's first hour",
            DropReason::MissingDemandForecast => "no demand forecast and no observed demand",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<FeatureWindow>,
    pub dropped: Vec<(NaiveDate, DropReason)>,
}

/// Calendar encoding for each local hour of `date`: sin/cos of hour of week
/// (period 168), sin/cos of day of year (period 365.25), one-hot day of week
/// (Monday first), and a holiday flag.
pub fn calendar_features(date: NaiveDate, holidays: &BTreeSet<NaiveDate>) -> Vec<[f64; CALENDAR_WIDTH]> {
    let weekday = date.weekday().num_days_from_monday() as usize;
    let day_phase = 2.0 * PI * date.ordinal0() as f64 / 365.25;
    let holiday = if holidays.contains(&date) { 1.0 } else { 0.0 };
    (0..HOURS)
        .map(|h| {
            let how = (weekday * HOURS + h) as f64;
            let week_phase = 2.0 * PI * how / 168.0;
            let mut row = [0.0; CALENDAR_WIDTH];
            row[0] = week_phase.sin();
            row[1] = week_phase.cos();
            row[2] = day_phase.sin();
            row[3] = day_phase.cos();
            row[4 + weekday] = 1.0;
            row[11] = holiday;
            row
        })
        .collect()
}

fn calendar_channel_major(date: NaiveDate, holidays: &BTreeSet<NaiveDate>) -> Vec<f64> {
    let rows = calendar_features(date, holidays);
    let mut out = vec![0.0; CALENDAR_WIDTH * HOURS];
    for (h, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            out[c * HOURS + h] = *v;
        }
    }
    out
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| !x.is_nan())
}

/// Source data for windows: the series, its derived quantities, and the
/// day boundaries.
pub struct WindowSource<'a> {
    pub series: &'a ValidatedSeries,
    pub derived: &'a DerivedSeries,
    pub clock: DayClock,
    pub holidays: &'a BTreeSet<NaiveDate>,
}

impl WindowSource<'_> {
    fn column(&self, range: Range<usize>, f: impl Fn(&crate::ingest::HourlyObservation) -> f64) -> Vec<f64> {
        self.series.observations[range].iter().map(f).collect()
    }

    /// Builds the window for `date`. With `dayahead` given, it supplies the
    /// forecast channel; otherwise the series' forecast for `date` is used,
    /// falling back to observed demand (and flagging the window). The
    /// target is attached when `date` is fully observed.
    pub fn window(&self, date: NaiveDate, dayahead: Option<&[f64]>, require_target: bool) -> Result<FeatureWindow, DropReason> {
        let prev = date - Duration::days(1);
        let prev_range = self.clock.day_range(self.series, prev).ok_or(DropReason::NoPredecessorDay)?;
        let day_range = self.clock.day_range(self.series, date);

        let prev_demand = self.column(prev_range.clone(), |o| o.demand);
        let prev_emissions = self.column(prev_range.clone(), |o| o.co2);
        if !all_finite(&prev_demand) || !all_finite(&prev_emissions) {
            return Err(DropReason::MissingHours);
        }
        let prev_de = self.derived.delta_e[prev_range.clone()].to_vec();
        let prev_dd = self.derived.marginal_demand[prev_range.clone()].to_vec();
        if prev_de[0].is_nan() || prev_dd[0].is_nan() {
            return Err(if prev_range.start == 0 || self.series.observations[prev_range.start - 1].is_sentinel() {
                DropReason::NoCrossMidnightHour
            } else {
                DropReason::MissingHours
            });
        }
        if !all_finite(&prev_de) || !all_finite(&prev_dd) {
            return Err(DropReason::MissingHours);
        }

        let target = match &day_range {
            Some(r) => {
                let t = self.column(r.clone(), |o| o.co2);
                if all_finite(&t) {
                    Some(t)
                } else if require_target {
                    return Err(DropReason::MissingHours);
                } else {
                    None
                }
            }
            None if require_target => return Err(DropReason::MissingHours),
            None => None,
        };

        let mut forecast_fallback = false;
        let forecast = match dayahead {
            Some(f) if f.len() == HOURS && all_finite(f) => f.to_vec(),
            _ => {
                let published = day_range
                    .clone()
                    .map(|r| self.column(r, |o| o.demand_forecast.unwrap_or(f64::NAN)));
                match published {
                    Some(f) if all_finite(&f) => f,
                    _ => {
                        forecast_fallback = true;
                        let observed = day_range.clone().map(|r| {
                            let mut f = published.clone().unwrap_or_else(|| vec![f64::NAN; HOURS]);
                            for (i, o) in self.series.observations[r].iter().enumerate() {
                                if f[i].is_nan() {
                                    f[i] = o.demand;
                                }
                            }
                            f
                        });
                        match observed {
                            Some(f) if all_finite(&f) => f,
                            Some(_) => return Err(DropReason::MissingDemandForecast),
                            // Live day with nothing published: carry the previous day forward.
                            None => prev_demand.clone(),
                        }
                    }
                }
            }
        };

        let inputs = BTreeMap::from([
            (ChannelGroup::PrevDemand, prev_demand),
            (ChannelGroup::PrevEmissions, prev_emissions),
            (ChannelGroup::PrevMarginalEmissions, prev_de),
            (ChannelGroup::PrevMarginalDemand, prev_dd),
            (ChannelGroup::DayaheadDemandForecast, forecast),
            (ChannelGroup::Calendar, calendar_channel_major(date, self.holidays)),
        ]);
        Ok(FeatureWindow { forecast_date: date, inputs, target, forecast_fallback })
    }
}

/// One training window per date whose previous day and own day are fully
/// observed.
pub fn build_windows(source: &WindowSource<'_>) -> WindowSet {
    let days = source.clock.covered_days(source.series);
    let results: Vec<(NaiveDate, Result<FeatureWindow, DropReason>)> =
        days.par_iter().map(|d| (*d, source.window(*d, None, true))).collect();
    let mut set = WindowSet::default();
    for (date, r) in results {
        match r {
            Ok(w) => set.windows.push(w),
            Err(reason) => set.dropped.push((date, reason)),
        }
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.7, val: 0.15, test: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    fn fit(values: impl Iterator<Item = f64>) -> ChannelStats {
        let v: Vec<f64> = values.collect();
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        ChannelStats { mean, std: var.sqrt().max(SIGMA_FLOOR) }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Z-score statistics fitted on training windows only. Calendar channels
/// are not normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: BTreeMap<ChannelGroup, ChannelStats>,
    pub target: ChannelStats,
}

pub fn fit_normalizer(train: &[FeatureWindow]) -> NormStats {
    let channels = ChannelGroup::ALL
        .into_iter()
        .filter(|g| g.is_normalized())
        .map(|g| (g, ChannelStats::fit(train.iter().flat_map(|w| w.channel(g).iter().copied()))))
        .collect();
    let target = ChannelStats::fit(train.iter().flat_map(|w| w.target.iter().flatten().copied()));
    NormStats { channels, target }
}

pub fn apply_normalizer(window: &FeatureWindow, stats: &NormStats) -> FeatureWindow {
    map_window(window, stats, ChannelStats::apply)
}

pub fn invert_normalizer(window: &FeatureWindow, stats: &NormStats) -> FeatureWindow {
    map_window(window, stats, ChannelStats::invert)
}

fn map_window(window: &FeatureWindow, stats: &NormStats, f: fn(&ChannelStats, f64) -> f64) -> FeatureWindow {
    let mut out = window.clone();
    for (g, s) in &stats.channels {
        if let Some(v) = out.inputs.get_mut(g) {
            v.iter_mut().for_each(|x| *x = f(s, *x));
        }
    }
    if let Some(t) = out.target.as_mut() {
        t.iter_mut().for_each(|x| *x = f(&stats.target, *x));
    }
    out
}

/// Chronologically ordered windows with train/val/test ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub windows: Vec<FeatureWindow>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub stats: NormStats,
}

impl Dataset {
    pub fn train(&self) -> &[FeatureWindow] {
        &self.windows[..self.n_train]
    }

    pub fn val(&self) -> &[FeatureWindow] {
        &self.windows[self.n_train..self.n_train + self.n_val]
    }

    pub fn test(&self) -> &[FeatureWindow] {
        &self.windows[self.n_train + self.n_val..]
    }

    pub fn split(&self, split: Split) -> &[FeatureWindow] {
        match split {
            Split::Train => self.train(),
            Split::Val => self.val(),
            Split::Test => self.test(),
        }
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else if index < self.n_train + self.n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Split sizes: val and test get `floor(n·fraction)` (at least one each),
/// train gets the rest.
pub fn split_counts(n: usize, fractions: SplitFractions) -> Result<(usize, usize, usize), FeatureError> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(FeatureError::BadFractions("fractions must be positive".into()));
    }
    if ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(FeatureError::BadFractions(format!("fractions sum to {}", train + val + test)));
    }
    if n < 3 {
        return Err(FeatureError::TooFewWindows(n));
    }
    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let mut n_val = floor(val).max(1);
    let mut n_test = floor(test).max(1);
    while n_val + n_test > n - 1 {
        if n_test >= n_val {
            n_test -= 1;
        } else {
            n_val -= 1;
        }
    }
    Ok((n - n_val - n_test, n_val, n_test))
}

pub fn chronological_split(mut windows: Vec<FeatureWindow>, fractions: SplitFractions) -> Result<Dataset, FeatureError> {
    windows.sort_by_key(|w| w.forecast_date);
    let (n_train, n_val, n_test) = split_counts(windows.len(), fractions)?;
    let stats = fit_normalizer(&windows[..n_train]);
    Ok(Dataset { windows, n_train, n_val, n_test, stats })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    version: u32,
    groups: Vec<(ChannelGroup, usize)>,
    dates: Vec<NaiveDate>,
    has_target: Vec<bool>,
    forecast_fallback: Vec<bool>,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    stats: NormStats,
}

/// Binary dataset bundle:
///
/// ```text
/// b"MEFDSET1" | u64 LE header length | header JSON |
/// per window: each group in enum order, channel-major f64 LE; then the
/// 24 target values (f64 LE) when present
/// ```
pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<(), FeatureError> {
    let header = DatasetHeader {
        version: DATASET_VERSION,
        groups: ChannelGroup::ALL.iter().map(|g| (*g, g.channels())).collect(),
        dates: ds.windows.iter().map(|w| w.forecast_date).collect(),
        has_target: ds.windows.iter().map(|w| w.target.is_some()).collect(),
        forecast_fallback: ds.windows.iter().map(|w| w.forecast_fallback).collect(),
        n_train: ds.n_train,
        n_val: ds.n_val,
        n_test: ds.n_test,
        stats: ds.stats.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| FeatureError::Format(e.to_string()))?;
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for w in &ds.windows {
        w.check_shape()?;
        for g in ChannelGroup::ALL {
            for v in w.channel(g) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        for v in w.target.iter().flatten() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, FeatureError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset, FeatureError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(FeatureError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: DatasetHeader = serde_json::from_slice(&json).map_err(|e| FeatureError::Format(e.to_string()))?;
    if header.version != DATASET_VERSION {
        return Err(FeatureError::Format(format!("unsupported version {}", header.version)));
    }
    let mut windows = Vec::with_capacity(header.dates.len());
    for (i, date) in header.dates.iter().enumerate() {
        let mut inputs = BTreeMap::new();
        for (g, c) in &header.groups {
            inputs.insert(*g, read_f64s(&mut input, c * HOURS)?);
        }
        let target = if header.has_target[i] { Some(read_f64s(&mut input, HOURS)?) } else { None };
        windows.push(FeatureWindow {
            forecast_date: *date,
            inputs,
            target,
            forecast_fallback: header.forecast_fallback[i],
        });
    }
    Ok(Dataset {
        windows,
        n_train: header.n_train,
        n_val: header.n_val,
        n_test: header.n_test,
        stats: header.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Weekday;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn dummy_window(d: NaiveDate, value: f64) -> FeatureWindow {
        let inputs = ChannelGroup::ALL
            .into_iter()
            .map(|g| (g, vec![value; g.channels() * HOURS]))
            .collect();
        FeatureWindow { forecast_date: d, inputs, target: Some(vec![value; HOURS]), forecast_fallback: false }
    }

    #[test]
    fn calendar_monday_midnight_phase_zero() {
        let monday = date(2023, 1, 2);
        assert_eq!(monday.weekday(), Weekday::Mon);
        let rows = calendar_features(monday, &BTreeSet::new());
        assert_eq!(rows.len(), 24);
        assert_eq!(rows[0][0], 0.0);
        assert_eq!(rows[0][1], 1.0);
        assert_eq!(rows[0][4], 1.0);
        assert_eq!(rows[0][4..11].iter().sum::<f64>(), 1.0);
        assert_eq!(rows[0][11], 0.0);
    }

    #[test]
    fn calendar_holiday_flag() {
        let d = date(2023, 7, 4);
        let rows = calendar_features(d, &BTreeSet::from([d]));
        assert!(rows.iter().all(|r| r[11] == 1.0));
    }

    #[test]
    fn calendar_hour_of_week_period() {
        let a = calendar_features(date(2023, 3, 8), &BTreeSet::new());
        let b = calendar_features(date(2023, 3, 15), &BTreeSet::new());
        for h in 0..24 {
            assert_eq!(a[h][0], b[h][0]);
            assert_eq!(a[h][1], b[h][1]);
            assert_eq!(a[h][4..11], b[h][4..11]);
        }
    }

    #[test]
    fn split_examples() {
        let f = SplitFractions::default();
        assert_eq!(split_counts(10, f).unwrap(), (8, 1, 1));
        assert_eq!(split_counts(3, f).unwrap(), (1, 1, 1));
        assert!(matches!(split_counts(2, f), Err(FeatureError::TooFewWindows(2))));
        let bad = SplitFractions { train: 0.5, val: 0.2, test: 0.2 };
        assert!(matches!(split_counts(10, bad), Err(FeatureError::BadFractions(_))));
        let neg = SplitFractions { train: 1.2, val: -0.1, test: -0.1 };
        assert!(matches!(split_counts(10, neg), Err(FeatureError::BadFractions(_))));
    }

    #[test]
    fn split_is_chronological() {
        let windows: Vec<_> = (0..20).rev().map(|i| dummy_window(date(2023, 1, 1) + Duration::days(i), i as f64)).collect();
        let ds = chronological_split(windows, SplitFractions::default()).unwrap();
        let max_train = ds.train().iter().map(|w| w.forecast_date).max().unwrap();
        let min_val = ds.val().iter().map(|w| w.forecast_date).min().unwrap();
        let max_val = ds.val().iter().map(|w| w.forecast_date).max().unwrap();
        let min_test = ds.test().iter().map(|w| w.forecast_date).min().unwrap();
        assert!(max_train < min_val && max_val < min_test);
    }

    #[test]
    fn zscore_by_hand() {
        let mut a = dummy_window(date(2023, 1, 1), 0.0);
        let b = dummy_window(date(2023, 1, 2), 2.0);
        let stats = fit_normalizer(&[a.clone(), b]);
        let s = stats.channels[&ChannelGroup::PrevDemand];
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        a.channel_mut(ChannelGroup::PrevDemand)[0] = 3.0;
        let z = apply_normalizer(&a, &stats);
        assert_eq!(z.channel(ChannelGroup::PrevDemand)[0], 2.0);
        // calendar passes through
        assert_eq!(z.channel(ChannelGroup::Calendar), a.channel(ChannelGroup::Calendar));
    }

    #[test]
    fn constant_channel_clamps_std() {
        let w = dummy_window(date(2023, 1, 1), 5.0);
        let stats = fit_normalizer(&[w.clone(), w.clone()]);
        assert_eq!(stats.target.std, SIGMA_FLOOR);
        let z = apply_normalizer(&w, &stats);
        assert!(z.channel(ChannelGroup::PrevEmissions).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dataset_bundle_round_trip() {
        let mut windows: Vec<_> = (0..6).map(|i| dummy_window(date(2023, 1, 1) + Duration::days(i), i as f64 * 1.1)).collect();
        windows[5].target = None;
        windows[5].forecast_fallback = true;
        let ds = chronological_split(windows, SplitFractions::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert!(read_dataset(&b"NOTMAGIC"[..]).is_err());
    }
}
