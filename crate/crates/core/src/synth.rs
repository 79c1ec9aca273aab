//! Merit-order dispatch scenarios with known marginal emissions.
//!
//! Units are loaded in ascending marginal cost until net demand is met.
//! Between two hours served by the same partially loaded unit, every change
//! in emissions comes from that unit, so `ΔE/ΔG` equals its emission rate
//! exactly. That makes the generated series an oracle for the derived
//! marginal quantities and for the forecasting pipeline.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, FuelKind, HourlyObservation, ValidatedSeries};
use crate::series::DayClock;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("demand {demand} MWh is outside [0, {capacity}] MWh")]
    Infeasible { demand: f64, capacity: f64 },
    #[error("hour {hour}: {source}")]
    InfeasibleHour { hour: String, source: Box<SynthError> },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorUnit {
    pub name: String,
    pub fuel: FuelKind,
    /// MW
    pub capacity: f64,
    /// t/MWh
    pub emission_rate: f64,
    /// currency/MWh
    pub marginal_cost: f64,
}

impl GeneratorUnit {
    pub fn new(name: &str, fuel: FuelKind, capacity: f64, emission_rate: f64, marginal_cost: f64) -> Self {
        GeneratorUnit { name: name.to_string(), fuel, capacity, emission_rate, marginal_cost }
    }
}

/// Zero-emission baseload `A`, gas `B` at 0.4 t/MWh, coal `C` at 0.9 t/MWh,
/// 100 MW each.
pub fn three_unit_fleet() -> Vec<GeneratorUnit> {
    vec![
        GeneratorUnit::new("A", FuelKind::Nuclear, 100.0, 0.0, 0.0),
        GeneratorUnit::new("B", FuelKind::NaturalGas, 100.0, 0.4, 30.0),
        GeneratorUnit::new("C", FuelKind::Coal, 100.0, 0.9, 60.0),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    /// MWh per unit, in fleet order.
    pub outputs: Vec<f64>,
    /// t CO₂
    pub emissions: f64,
    pub marginal_unit: String,
    pub marginal_index: usize,
}

/// Unit indices in merit order: ascending cost, ties by name.
pub fn merit_order(fleet: &[GeneratorUnit]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fleet.len()).collect();
    order.sort_by(|&a, &b| {
        fleet[a]
            .marginal_cost
            .total_cmp(&fleet[b].marginal_cost)
            .then_with(|| fleet[a].name.cmp(&fleet[b].name))
    });
    order
}

pub fn merit_order_dispatch(fleet: &[GeneratorUnit], demand: f64) -> Result<Dispatch, SynthError> {
    let capacity: f64 = fleet.iter().map(|u| u.capacity).sum();
    if fleet.is_empty() || !(0.0..=capacity).contains(&demand) {
        return Err(SynthError::Infeasible { demand, capacity });
    }
    let order = merit_order(fleet);
    let mut outputs = vec![0.0; fleet.len()];
    let mut remaining = demand;
    let mut marginal = order[0];
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(fleet[i].capacity);
        outputs[i] = take;
        remaining -= take;
        marginal = i;
    }
    let emissions = outputs.iter().zip(fleet).map(|(o, u)| o * u.emission_rate).sum();
    Ok(Dispatch { outputs, emissions, marginal_unit: fleet[marginal].name.clone(), marginal_index: marginal })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub fleet: Vec<GeneratorUnit>,
    pub days: usize,
    pub start: NaiveDate,
    pub region: String,
    pub utc_offset_hours: i32,
    /// MWh
    pub base_demand: f64,
    /// MWh
    pub diurnal_amplitude: f64,
    /// Phase of the diurnal sinusoid; demand peaks six hours later.
    pub demand_phase_hour: f64,
    /// Peak midday solar output, MWh.
    pub solar_depth: f64,
    /// Standard deviation of hourly demand noise, MWh.
    pub noise_sigma: f64,
    /// Standard deviation of day-ahead forecast error, MWh.
    pub forecast_noise_sigma: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            fleet: three_unit_fleet(),
            days: 180,
            start: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            region: "SYN".into(),
            utc_offset_hours: 0,
            base_demand: 210.0,
            diurnal_amplitude: 60.0,
            demand_phase_hour: 11.0,
            solar_depth: 50.0,
            noise_sigma: 0.0,
            forecast_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn clock(&self) -> DayClock {
        DayClock::new(self.utc_offset_hours)
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.fleet.is_empty() {
            return Err(SynthError::Invalid("empty fleet".into()));
        }
        if let Some(u) = self.fleet.iter().find(|u| !(u.capacity > 0.0) || u.emission_rate < 0.0) {
            return Err(SynthError::Invalid(format!("unit `{}` needs capacity > 0 and rate >= 0", u.name)));
        }
        if self.noise_sigma < 0.0 || self.forecast_noise_sigma < 0.0 || self.solar_depth < 0.0 {
            return Err(SynthError::Invalid("noise and solar depth must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub timestamp: DateTime<Utc>,
    pub marginal_unit: String,
    /// Emission rate of the marginal unit when it also served the previous
    /// hour; NaN otherwise.
    pub true_mef: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub series: ValidatedSeries,
    pub truth: Vec<TruthRow>,
    pub dispatch: Vec<Dispatch>,
    /// Demand net of solar, MWh.
    pub net_demand: Vec<f64>,
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let clock = cfg.clock();
    let start = clock.day_start(cfg.start);

    let mut demand_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    demand_rng.set_stream(1);
    let mut forecast_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    forecast_rng.set_stream(2);
    let demand_noise = normal(cfg.noise_sigma);
    let forecast_noise = normal(cfg.forecast_noise_sigma);

    let hours = cfg.days * 24;
    let mut observations = Vec::with_capacity(hours);
    let mut dispatch = Vec::with_capacity(hours);
    let mut net_demand = Vec::with_capacity(hours);
    for i in 0..hours {
        let ts = start + Duration::hours(i as i64);
        let h = (i % 24) as f64;
        let mut demand = cfg.base_demand + cfg.diurnal_amplitude * (2.0 * PI * (h - cfg.demand_phase_hour) / 24.0).sin();
        if let Some(n) = &demand_noise {
            demand += n.sample(&mut demand_rng);
        }
        let demand = demand.max(0.0);
        let mut forecast = demand;
        if let Some(n) = &forecast_noise {
            forecast += n.sample(&mut forecast_rng);
        }
        let solar = (cfg.solar_depth * (PI * (h - 6.0) / 12.0).sin()).max(0.0).min(demand);
        let net = demand - solar;

        let d = merit_order_dispatch(&cfg.fleet, net).map_err(|e| SynthError::InfeasibleHour {
            hour: format_timestamp(ts),
            source: Box::new(e),
        })?;

        let mut generation = BTreeMap::new();
        for (u, out) in cfg.fleet.iter().zip(&d.outputs) {
            *generation.entry(u.fuel).or_insert(0.0) += out;
        }
        *generation.entry(FuelKind::Solar).or_insert(0.0) += solar;

        observations.push(HourlyObservation {
            timestamp: ts,
            region: cfg.region.clone(),
            demand,
            demand_forecast: Some(forecast.max(0.0)),
            net_imports: 0.0,
            generation,
            co2: d.emissions,
        });
        dispatch.push(d);
        net_demand.push(net);
    }

    let truth = dispatch
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let same = i > 0 && dispatch[i - 1].marginal_index == d.marginal_index;
            TruthRow {
                timestamp: observations[i].timestamp,
                marginal_unit: d.marginal_unit.clone(),
                true_mef: if same { cfg.fleet[d.marginal_index].emission_rate } else { f64::NAN },
            }
        })
        .collect();

    let series = ValidatedSeries {
        region: cfg.region.clone(),
        start,
        observations,
        gap_report: Vec::new(),
        clamped_negatives: 0,
    };
    Ok(Scenario { series, truth, dispatch, net_demand })
}

pub const SIDECAR_CSV_HEADER: &str = "timestamp,marginal_unit,true_mef";

pub fn write_sidecar_csv<W: Write>(truth: &[TruthRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SIDECAR_CSV_HEADER}")?;
    for r in truth {
        let mef = if r.true_mef.is_nan() { String::new() } else { r.true_mef.to_string() };
        writeln!(out, "{},{},{}", format_timestamp(r.timestamp), r.marginal_unit, mef)?;
    }
    Ok(())
}
