//! Derived emissions quantities: hour-over-hour marginal emissions and
//! marginal fossil generation, their ratio (the marginal emissions factor),
//! hourly grid intensity, daily average emissions factors, and hour-of-day
//! intensity profiles.
//!
//! Marginal quantities are first differences of the underlying hourly
//! series: `ΔE_t = E_t − E_{t−1}` and `ΔG_t = G_t − G_{t−1}` where `G` is
//! fossil (coal, gas, petroleum) generation. NaN is the sentinel for
//! undefined values and is skipped explicitly by every aggregate.

use std::io::Write;
use std::ops::Range;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, HourlyObservation, ValidatedSeries};

pub const SENTINEL: f64 = f64::NAN;
pub const DEFAULT_EPS_G: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("day {0} is not fully observed")]
    DayIncomplete(NaiveDate),
    #[error("day {0} has zero total generation")]
    ZeroGeneration(NaiveDate),
    #[error("series contains no complete day")]
    NoCompleteDay,
    #[error("csv error: {0}")]
    Csv(String),
}

/// Fixed UTC offset used to cut the UTC series into local days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayClock {
    pub utc_offset_hours: i32,
}

impl DayClock {
    pub const UTC: DayClock = DayClock { utc_offset_hours: 0 };

    pub fn new(utc_offset_hours: i32) -> Self {
        DayClock { utc_offset_hours }
    }

    /// Default offset for a balancing-authority code (standard time).
    pub fn for_region(region: &str) -> Self {
        let offset = match region.to_ascii_uppercase().as_str() {
            "CISO" | "CAISO" | "BPAT" | "PACW" | "LDWP" => -8,
            "ERCO" | "MISO" | "SWPP" => -6,
            "PJM" | "NYIS" | "ISNE" => -5,
            _ => 0,
        };
        DayClock::new(offset)
    }

    fn shift(&self) -> Duration {
        Duration::hours(self.utc_offset_hours as i64)
    }

    pub fn local_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        (ts + self.shift()).date_naive()
    }

    pub fn local_hour(&self, ts: DateTime<Utc>) -> usize {
        (ts + self.shift()).hour() as usize
    }

    /// UTC instant of local midnight starting `day`.
    pub fn day_start(&self, day: NaiveDate) -> DateTime<Utc> {
        day.and_hms_opt(0, 0, 0).expect("midnight").and_utc() - self.shift()
    }

    /// Indices of the 24 hours of `day`, if the series covers all of them.
    pub fn day_range(&self, series: &ValidatedSeries, day: NaiveDate) -> Option<Range<usize>> {
        let first = series.index_of(self.day_start(day))?;
        (first + 24 <= series.len()).then_some(first..first + 24)
    }

    /// Local days fully covered by the series, in order.
    pub fn covered_days(&self, series: &ValidatedSeries) -> Vec<NaiveDate> {
        if series.is_empty() {
            return Vec::new();
        }
        let first = self.local_date(series.start);
        let last = self.local_date(series.end() - Duration::hours(1));
        first
            .iter_days()
            .take_while(|d| *d <= last)
            .filter(|d| self.day_range(series, *d).is_some())
            .collect()
    }
}

/// Hour-aligned derived quantities for a validated series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedSeries {
    pub start: DateTime<Utc>,
    pub clock: DayClock,
    pub eps_g: f64,
    /// t CO₂
    pub delta_e: Vec<f64>,
    /// MWh
    pub delta_g_fossil: Vec<f64>,
    /// t/MWh
    pub mef: Vec<f64>,
    /// MWh
    pub marginal_demand: Vec<f64>,
    /// t/MWh
    pub intensity: Vec<f64>,
    pub aef_daily: Vec<(NaiveDate, f64)>,
    pub skipped_days: Vec<(NaiveDate, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityProfile {
    /// Mean intensity per local hour of day, t/MWh.
    pub hourly_mean: [f64; 24],
    /// Mean over every contributing hour, t/MWh.
    pub overall_mean: f64,
    pub period: (NaiveDate, NaiveDate),
}

/// `out[0]` is the sentinel; `out[t] = x[t] − x[t−1]`.
pub fn first_difference(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    if x.is_empty() {
        return out;
    }
    out.push(SENTINEL);
    out.extend(x.windows(2).map(|w| {
        if w[0].is_nan() || w[1].is_nan() {
            SENTINEL
        } else {
            w[1] - w[0]
        }
    }));
    out
}

pub fn fossil_generation(obs: &HourlyObservation) -> f64 {
    obs.generation.iter().filter(|(f, _)| f.is_fossil()).map(|(_, v)| *v).sum()
}

/// In-region generation from every source (imports excluded).
pub fn total_generation(obs: &HourlyObservation) -> f64 {
    obs.generation.iter().filter(|(f, _)| f.is_generated()).map(|(_, v)| *v).sum()
}

/// Ratio of summed emissions to summed generation; `None` when any input is
/// the sentinel or total generation is not positive.
pub fn emissions_ratio(co2: &[f64], generation: &[f64]) -> Option<f64> {
    if co2.iter().chain(generation).any(|v| v.is_nan()) {
        return None;
    }
    let g: f64 = generation.iter().sum();
    (g > 0.0).then(|| co2.iter().sum::<f64>() / g)
}

/// Daily average emissions factor, t/MWh.
pub fn average_emissions_factor(series: &ValidatedSeries, day: NaiveDate, clock: DayClock) -> Result<f64, SeriesError> {
    let range = clock.day_range(series, day).ok_or(SeriesError::DayIncomplete(day))?;
    let hours = &series.observations[range];
    if hours.iter().any(HourlyObservation::is_sentinel) {
        return Err(SeriesError::DayIncomplete(day));
    }
    let co2: Vec<f64> = hours.iter().map(|o| o.co2).collect();
    let gen: Vec<f64> = hours.iter().map(total_generation).collect();
    if co2.iter().chain(&gen).any(|v| v.is_nan()) {
        return Err(SeriesError::DayIncomplete(day));
    }
    emissions_ratio(&co2, &gen).ok_or(SeriesError::ZeroGeneration(day))
}

/// `ΔE/ΔG` when `|ΔG| ≥ eps_g`, else the sentinel.
pub fn marginal_intensity(delta_e: f64, delta_g: f64, eps_g: f64) -> f64 {
    if delta_e.is_nan() || delta_g.is_nan() || delta_g.abs() < eps_g {
        SENTINEL
    } else {
        delta_e / delta_g
    }
}

fn value_or_sentinel(o: &HourlyObservation, f: impl Fn(&HourlyObservation) -> f64) -> f64 {
    if o.is_sentinel() {
        SENTINEL
    } else {
        f(o)
    }
}

pub fn derive_all(series: &ValidatedSeries, eps_g: f64, clock: DayClock) -> DerivedSeries {
    let obs = &series.observations;
    let co2: Vec<f64> = obs.iter().map(|o| o.co2).collect();
    let demand: Vec<f64> = obs.iter().map(|o| o.demand).collect();
    let fossil: Vec<f64> = obs.iter().map(|o| value_or_sentinel(o, fossil_generation)).collect();

    let delta_e = first_difference(&co2);
    let delta_g_fossil = first_difference(&fossil);
    let marginal_demand = first_difference(&demand);
    let mef = delta_e
        .iter()
        .zip(&delta_g_fossil)
        .map(|(e, g)| marginal_intensity(*e, *g, eps_g))
        .collect();
    let intensity = obs
        .iter()
        .map(|o| {
            let g = value_or_sentinel(o, total_generation);
            if g.is_nan() || o.co2.is_nan() || g < eps_g {
                SENTINEL
            } else {
                o.co2 / g
            }
        })
        .collect();

    let mut aef_daily = Vec::new();
    let mut skipped_days = Vec::new();
    for day in clock.covered_days(series) {
        match average_emissions_factor(series, day, clock) {
            Ok(v) => aef_daily.push((day, v)),
            Err(e) => skipped_days.push((day, e.to_string())),
        }
    }

    DerivedSeries {
        start: series.start,
        clock,
        eps_g,
        delta_e,
        delta_g_fossil,
        mef,
        marginal_demand,
        intensity,
        aef_daily,
        skipped_days,
    }
}

/// Mean intensity per local hour of day over every fully covered day, plus
/// the overall mean.
pub fn intensity_profile(series: &ValidatedSeries, clock: DayClock, eps_g: f64) -> Result<IntensityProfile, SeriesError> {
    let derived = derive_all(series, eps_g, clock);
    profile_from_intensity(series, &derived.intensity, clock)
}

pub(crate) fn profile_from_intensity(
    series: &ValidatedSeries,
    intensity: &[f64],
    clock: DayClock,
) -> Result<IntensityProfile, SeriesError> {
    let days = clock.covered_days(series);
    let complete = |d: &NaiveDate| {
        clock.day_range(series, *d).is_some_and(|r| intensity[r].iter().all(|v| !v.is_nan()))
    };
    if !days.iter().any(complete) {
        return Err(SeriesError::NoCompleteDay);
    }

    let mut sums = [0.0; 24];
    let mut counts = [0usize; 24];
    for d in &days {
        let range = clock.day_range(series, *d).expect("covered day");
        for (h, v) in intensity[range].iter().enumerate() {
            if !v.is_nan() {
                sums[h] += v;
                counts[h] += 1;
            }
        }
    }
    let mut hourly_mean = [SENTINEL; 24];
    for h in 0..24 {
        if counts[h] > 0 {
            hourly_mean[h] = sums[h] / counts[h] as f64;
        }
    }
    let n: usize = counts.iter().sum();
    let overall_mean = sums.iter().sum::<f64>() / n as f64;
    Ok(IntensityProfile {
        hourly_mean,
        overall_mean,
        period: (days[0], *days.last().expect("non-empty")),
    })
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub const DERIVED_CSV_HEADER: &str = "timestamp,delta_e_t,delta_g_mwh,mef_t_per_mwh,intensity_t_per_mwh";
pub const PROFILE_CSV_HEADER: &str = "hour,hourly_mean_t_per_mwh,overall_mean_t_per_mwh";

pub fn write_derived_csv<W: Write>(derived: &DerivedSeries, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DERIVED_CSV_HEADER}")?;
    for i in 0..derived.delta_e.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            format_timestamp(derived.start + Duration::hours(i as i64)),
            cell(derived.delta_e[i]),
            cell(derived.delta_g_fossil[i]),
            cell(derived.mef[i]),
            cell(derived.intensity[i]),
        )?;
    }
    Ok(())
}

pub fn write_profile_csv<W: Write>(profile: &IntensityProfile, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{PROFILE_CSV_HEADER}")?;
    for (h, v) in profile.hourly_mean.iter().enumerate() {
        writeln!(out, "{h},{},{}", cell(*v), cell(profile.overall_mean))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FuelKind;
    use chrono::TimeZone;

    fn assert_seq(got: &[f64], want: &[f64]) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g.is_nan() && w.is_nan()) || g == w, "{got:?} vs {want:?}");
        }
    }

    fn hour(i: i64, co2: f64, gen: &[(FuelKind, f64)]) -> HourlyObservation {
        HourlyObservation {
            timestamp: Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap() + Duration::hours(i),
            region: "TEST".into(),
            demand: 100.0,
            demand_forecast: Some(100.0),
            net_imports: 0.0,
            generation: gen.iter().copied().collect(),
            co2,
        }
    }

    fn series(obs: Vec<HourlyObservation>) -> ValidatedSeries {
        ValidatedSeries {
            region: "TEST".into(),
            start: obs[0].timestamp,
            observations: obs,
            gap_report: vec![],
            clamped_negatives: 0,
        }
    }

    #[test]
    fn first_difference_examples() {
        let s = SENTINEL;
        assert_seq(&first_difference(&[2.0, 5.0, 4.0]), &[s, 3.0, -1.0]);
        assert_seq(&first_difference(&[7.0; 4]), &[s, 0.0, 0.0, 0.0]);
        assert_seq(&first_difference(&[1.0, s, 4.0]), &[s, s, s]);
        assert!(first_difference(&[]).is_empty());
    }

    #[test]
    fn fossil_generation_examples() {
        use FuelKind::*;
        assert_eq!(fossil_generation(&hour(0, 0.0, &[(Coal, 100.0), (NaturalGas, 200.0), (Solar, 500.0)])), 300.0);
        assert_eq!(fossil_generation(&hour(0, 0.0, &[(Solar, 500.0), (Wind, 300.0)])), 0.0);
        assert_eq!(fossil_generation(&hour(0, 0.0, &[])), 0.0);
    }

    #[test]
    fn aef_uniform_day() {
        let obs = (0..24).map(|i| hour(i, 100.0, &[(FuelKind::NaturalGas, 50.0)])).collect();
        let s = series(obs);
        let day = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap();
        assert_eq!(average_emissions_factor(&s, day, DayClock::UTC).unwrap(), 2.0);
        let prev = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        assert_eq!(average_emissions_factor(&s, prev, DayClock::UTC), Err(SeriesError::DayIncomplete(prev)));
    }

    #[test]
    fn aef_two_hour_toy() {
        assert_eq!(emissions_ratio(&[10.0, 20.0], &[5.0, 5.0]), Some(3.0));
        assert_eq!(emissions_ratio(&[10.0], &[0.0]), None);
    }

    #[test]
    fn aef_zero_generation_errors() {
        let obs = (0..24).map(|i| hour(i, 0.0, &[])).collect();
        let s = series(obs);
        let day = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap();
        assert_eq!(average_emissions_factor(&s, day, DayClock::UTC), Err(SeriesError::ZeroGeneration(day)));
    }

    #[test]
    fn marginal_intensity_examples() {
        assert_eq!(marginal_intensity(2.0, 4.0, 1.0), 0.5);
        assert!(marginal_intensity(3.0, 0.0, 1.0).is_nan());
        assert_eq!(marginal_intensity(-2.0, -4.0, 1.0), 0.5);
        assert!(marginal_intensity(SENTINEL, 4.0, 1.0).is_nan());
    }

    #[test]
    fn identical_hours_give_sentinel_mef() {
        let obs = (0..30).map(|i| hour(i, 10.0, &[(FuelKind::Coal, 20.0)])).collect();
        let d = derive_all(&series(obs), 1.0, DayClock::UTC);
        assert!(d.delta_e[1..].iter().all(|v| *v == 0.0));
        assert!(d.delta_g_fossil[1..].iter().all(|v| *v == 0.0));
        assert!(d.mef.iter().all(|v| v.is_nan()));
        assert!(d.delta_e[0].is_nan() && d.marginal_demand[0].is_nan());
        assert_eq!(d.aef_daily.len(), 1);
    }

    #[test]
    fn sentinel_hour_propagates_into_derived() {
        let mut obs: Vec<_> = (0..5).map(|i| hour(i, 10.0 + i as f64, &[(FuelKind::Coal, 20.0 + 2.0 * i as f64)])).collect();
        obs[2] = HourlyObservation::sentinel(obs[2].timestamp, "TEST", [FuelKind::Coal]);
        let d = derive_all(&series(obs), 1.0, DayClock::UTC);
        assert!(d.delta_g_fossil[2].is_nan() && d.delta_g_fossil[3].is_nan());
        assert!(d.intensity[2].is_nan());
        assert_eq!(d.mef[1], 0.5);
        assert_eq!(d.mef[4], 0.5);
    }

    #[test]
    fn profile_two_days_with_dip() {
        // intensity = co2 / 1 MWh
        let obs = (0..48)
            .map(|i| hour(i, if i % 24 == 12 { 0.5 } else { 1.0 }, &[(FuelKind::Hydro, 1.0)]))
            .collect();
        let p = intensity_profile(&series(obs), DayClock::UTC, 1e-9).unwrap();
        for (h, v) in p.hourly_mean.iter().enumerate() {
            assert_eq!(*v, if h == 12 { 0.5 } else { 1.0 });
        }
        assert!((p.overall_mean - (46.0 + 1.0) / 48.0).abs() < 1e-15);
    }

    #[test]
    fn profile_respects_offset() {
        let obs = (0..48)
            .map(|i| hour(i, if i % 24 == 20 { 0.5 } else { 1.0 }, &[(FuelKind::Hydro, 1.0)]))
            .collect();
        // 20:00 UTC is 12:00 local at −8 h; only one full local day is covered.
        let p = intensity_profile(&series(obs), DayClock::new(-8), 1e-9).unwrap();
        assert_eq!(p.hourly_mean[12], 0.5);
        assert_eq!(p.period.0, p.period.1);
    }

    #[test]
    fn profile_needs_complete_day() {
        let obs = (0..20).map(|i| hour(i, 1.0, &[(FuelKind::Hydro, 1.0)])).collect();
        assert_eq!(intensity_profile(&series(obs), DayClock::UTC, 1.0), Err(SeriesError::NoCompleteDay));
    }

    #[test]
    fn derived_csv_header() {
        let obs = (0..2).map(|i| hour(i, 1.0 + i as f64, &[(FuelKind::Coal, 2.0 + 2.0 * i as f64)])).collect();
        let d = derive_all(&series(obs), 1.0, DayClock::UTC);
        let mut buf = Vec::new();
        write_derived_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "timestamp,delta_e_t,delta_g_mwh,mef_t_per_mwh,intensity_t_per_mwh\n\
             2023-01-02T00:00Z,,,,0.5\n\
             2023-01-02T01:00Z,1,2,0.5,0.5\n"
        );
    }
}
