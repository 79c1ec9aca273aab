use std::collections::BTreeSet;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::{fuel_union, FillMethod, GapEntry, HourlyObservation, IngestError, Result, ValidatedSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapPolicy {
    /// Longest run of absent hours filled by linear interpolation.
    pub max_interpolate_hours: usize,
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy { max_interpolate_hours: 3 }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

fn interpolate(a: &HourlyObservation, b: &HourlyObservation, step: usize, span: usize) -> HourlyObservation {
    let t = step as f64 / span as f64;
    let fuels: BTreeSet<_> = a.generation.keys().chain(b.generation.keys()).copied().collect();
    HourlyObservation {
        timestamp: a.timestamp + Duration::hours(step as i64),
        region: a.region.clone(),
        demand: lerp(a.demand, b.demand, t),
        demand_forecast: match (a.demand_forecast, b.demand_forecast) {
            (Some(x), Some(y)) => Some(lerp(x, y, t)),
            _ => None,
        },
        net_imports: lerp(a.net_imports, b.net_imports, t),
        generation: fuels
            .into_iter()
            .map(|f| {
                let x = a.generation.get(&f).copied().unwrap_or(0.0);
                let y = b.generation.get(&f).copied().unwrap_or(0.0);
                (f, lerp(x, y, t))
            })
            .collect(),
        co2: lerp(a.co2, b.co2, t),
    }
}

fn clamp_negatives(o: &mut HourlyObservation) -> usize {
    let mut n = 0;
    let mut fix = |v: &mut f64| {
        if *v < 0.0 {
            *v = 0.0;
            n += 1;
        }
    };
    fix(&mut o.demand);
    fix(&mut o.co2);
    if let Some(f) = o.demand_forecast.as_mut() {
        fix(f);
    }
    o.generation.values_mut().for_each(fix);
    n
}

/// Sorts, de-duplicates (last row wins) and gap-fills observations into a
/// contiguous hourly series.
pub fn validate_series(observations: &[HourlyObservation], policy: GapPolicy) -> Result<ValidatedSeries> {
    let first = observations.first().ok_or(IngestError::Empty)?;
    if let Some(other) = observations.iter().find(|o| o.region != first.region) {
        return Err(IngestError::MixedRegions(first.region.clone(), other.region.clone()));
    }
    let region = first.region.clone();

    let mut sorted: Vec<HourlyObservation> = observations.to_vec();
    sorted.sort_by_key(|o| o.timestamp);

    let mut gap_report = Vec::new();
    let mut unique: Vec<HourlyObservation> = Vec::with_capacity(sorted.len());
    let mut dropped = 0usize;
    for o in sorted {
        match unique.last_mut() {
            Some(last) if last.timestamp == o.timestamp => {
                *last = o;
                dropped += 1;
            }
            _ => {
                if dropped > 0 {
                    let ts = unique.last().map(|l| l.timestamp).unwrap_or(o.timestamp);
                    gap_report.push(GapEntry { start: ts, length: dropped, method: FillMethod::Deduplicated });
                    dropped = 0;
                }
                unique.push(o);
            }
        }
    }
    if dropped > 0 {
        let ts = unique.last().map(|l| l.timestamp).unwrap_or(first.timestamp);
        gap_report.push(GapEntry { start: ts, length: dropped, method: FillMethod::Deduplicated });
    }

    let clamped_negatives: usize = unique.iter_mut().map(clamp_negatives).sum();
    if clamped_negatives > 0 {
        log::warn!("{region}: clamped {clamped_negatives} negative values to zero");
    }

    let fuels = fuel_union(&unique);
    let start = unique[0].timestamp;
    let mut filled: Vec<HourlyObservation> = Vec::with_capacity(unique.len());
    for o in unique {
        if let Some(prev) = filled.last() {
            let missing = (o.timestamp - prev.timestamp).num_hours() as usize - 1;
            if missing > 0 {
                let gap_start = prev.timestamp + Duration::hours(1);
                let interpolable =
                    missing <= policy.max_interpolate_hours && !prev.is_sentinel() && !o.is_sentinel();
                let prev = prev.clone();
                for step in 1..=missing {
                    filled.push(if interpolable {
                        interpolate(&prev, &o, step, missing + 1)
                    } else {
                        HourlyObservation::sentinel(
                            prev.timestamp + Duration::hours(step as i64),
                            &region,
                            fuels.iter().copied(),
                        )
                    });
                }
                gap_report.push(GapEntry {
                    start: gap_start,
                    length: missing,
                    method: if interpolable { FillMethod::Interpolated } else { FillMethod::Missing },
                });
            }
        }
        filled.push(o);
    }
    gap_report.sort_by_key(|g| g.start);

    Ok(ValidatedSeries { region, start, observations: filled, gap_report, clamped_negatives })
}
