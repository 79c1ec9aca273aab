//! Python bindings: series loading and derivation, the synthetic grid, and
//! model training, prediction and persistence.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pythonize::pythonize;

use mefcast_core::cli::{meta_path, write_atomic, CliError, ModelMeta, RunConfig};
use mefcast_core::features::{build_windows, chronological_split, FeatureWindow, WindowSource};
use mefcast_core::ingest::{format_timestamp, parse_csv, serialize_csv, validate_series, CsvSchema, GapPolicy};
use mefcast_core::nn::{load_model, save_model};
use mefcast_core::series::{derive_all, intensity_profile, DayClock, DEFAULT_EPS_G};
use mefcast_core::synth::{generate_scenario, merit_order_dispatch, GeneratorUnit};
use mefcast_core::train_eval::{predict_day, sensitivity, train};
use mefcast_core::{FuelKind, ModelParams, ModelSpec, ValidatedSeries};

create_exception!(mefcast, MefcastError, PyValueError);

fn err(e: impl std::fmt::Display) -> PyErr {
    MefcastError::new_err(e.to_string())
}

fn config(json: Option<&str>) -> PyResult<RunConfig> {
    match json {
        Some(text) => RunConfig::from_json(text).map_err(err),
        None => Ok(RunConfig::default()),
    }
}

fn clock_for(series: &ValidatedSeries, utc_offset_hours: Option<i32>) -> DayClock {
    utc_offset_hours.map(DayClock::new).unwrap_or_else(|| DayClock::for_region(&series.region))
}

/// A validated, gap-filled hourly series for one region.
#[pyclass(name = "Series", module = "mefcast", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySeries {
    inner: ValidatedSeries,
}

#[pymethods]
impl PySeries {
    /// Reads and validates a series CSV.
    #[staticmethod]
    #[pyo3(signature = (path, max_interpolate_hours = 3))]
    fn from_csv(path: PathBuf, max_interpolate_hours: usize) -> PyResult<Self> {
        let f = File::open(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::validate(parse_csv(BufReader::new(f), &CsvSchema::default()).map_err(err)?, max_interpolate_hours)
    }

    /// Parses and validates CSV text.
    #[staticmethod]
    #[pyo3(signature = (text, max_interpolate_hours = 3))]
    fn parse(text: &str, max_interpolate_hours: usize) -> PyResult<Self> {
        Self::validate(parse_csv(text.as_bytes(), &CsvSchema::default()).map_err(err)?, max_interpolate_hours)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut out = Vec::new();
        serialize_csv(&self.inner.observations, &mut out).map_err(err)?;
        String::from_utf8(out).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn region(&self) -> &str {
        &self.inner.region
    }

    #[getter]
    fn timestamps(&self) -> Vec<String> {
        self.inner.observations.iter().map(|o| format_timestamp(o.timestamp)).collect()
    }

    #[getter]
    fn demand(&self) -> Vec<f64> {
        self.inner.observations.iter().map(|o| o.demand).collect()
    }

    #[getter]
    fn demand_forecast(&self) -> Vec<Option<f64>> {
        self.inner.observations.iter().map(|o| o.demand_forecast).collect()
    }

    #[getter]
    fn co2(&self) -> Vec<f64> {
        self.inner.observations.iter().map(|o| o.co2).collect()
    }

    /// Generation by fuel name, MWh.
    fn generation<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for fuel in self.inner.fuels() {
            let col: Vec<f64> = self.inner.observations.iter().map(|o| o.generation.get(&fuel).copied().unwrap_or(f64::NAN)).collect();
            d.set_item(fuel.name(), col)?;
        }
        Ok(d)
    }

    fn gap_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        pythonize(py, &self.inner.gap_report).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Series(region={:?}, hours={}, start={})", self.inner.region, self.inner.len(), format_timestamp(self.inner.start))
    }
}

impl PySeries {
    fn validate(obs: Vec<mefcast_core::HourlyObservation>, max_interpolate_hours: usize) -> PyResult<Self> {
        let inner = validate_series(&obs, GapPolicy { max_interpolate_hours }).map_err(err)?;
        Ok(PySeries { inner })
    }
}

/// Hour-over-hour differences, marginal and average intensity. Sentinel
/// values are NaN.
#[pyfunction]
#[pyo3(signature = (series, eps_g = DEFAULT_EPS_G, utc_offset_hours = None))]
fn derive<'py>(py: Python<'py>, series: &PySeries, eps_g: f64, utc_offset_hours: Option<i32>) -> PyResult<Bound<'py, PyDict>> {
    let d = derive_all(&series.inner, eps_g, clock_for(&series.inner, utc_offset_hours));
    let out = PyDict::new(py);
    out.set_item("delta_e", d.delta_e)?;
    out.set_item("delta_g_fossil", d.delta_g_fossil)?;
    out.set_item("mef", d.mef)?;
    out.set_item("marginal_demand", d.marginal_demand)?;
    out.set_item("intensity", d.intensity)?;
    out.set_item("aef_daily", d.aef_daily)?;
    Ok(out)
}

/// Mean intensity per local hour of day and the overall mean.
#[pyfunction]
#[pyo3(signature = (series, eps_g = DEFAULT_EPS_G, utc_offset_hours = None))]
fn profile(series: &PySeries, eps_g: f64, utc_offset_hours: Option<i32>) -> PyResult<(Vec<f64>, f64)> {
    let p = intensity_profile(&series.inner, clock_for(&series.inner, utc_offset_hours), eps_g).map_err(err)?;
    Ok((p.hourly_mean.to_vec(), p.overall_mean))
}

/// Merit-order dispatch. `fleet` holds `(name, fuel, capacity_mwh,
/// emission_rate_t_per_mwh, marginal_cost)` tuples.
#[pyfunction]
fn dispatch<'py>(py: Python<'py>, fleet: Vec<(String, String, f64, f64, f64)>, demand: f64) -> PyResult<Bound<'py, PyDict>> {
    let units = fleet
        .iter()
        .map(|(name, fuel, cap, rate, cost)| {
            let fuel = FuelKind::ALL
                .into_iter()
                .find(|f| f.name() == fuel || f.code() == fuel)
                .ok_or_else(|| err(format!("unknown fuel `{fuel}`")))?;
            Ok(GeneratorUnit::new(name, fuel, *cap, *rate, *cost))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let d = merit_order_dispatch(&units, demand).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("outputs", d.outputs)?;
    out.set_item("emissions", d.emissions)?;
    out.set_item("marginal_unit", d.marginal_unit)?;
    Ok(out)
}

/// Synthetic scenario from the `synth` section of a JSON run config.
/// Returns the series and `(timestamp, marginal_unit, true_mef)` rows.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn synth(config_json: Option<&str>) -> PyResult<(PySeries, Vec<(String, String, f64)>)> {
    let cfg = config(config_json)?;
    let s = generate_scenario(&cfg.synth).map_err(err)?;
    let truth = s.truth.into_iter().map(|r| (format_timestamp(r.timestamp), r.marginal_unit, r.true_mef)).collect();
    Ok((PySeries { inner: s.series }, truth))
}

/// A trained forecaster with its normalization statistics.
#[pyclass(name = "Model", module = "mefcast", frozen)]
struct PyModel {
    spec: ModelSpec,
    params: ModelParams,
    meta: ModelMeta,
    cfg: RunConfig,
}

impl PyModel {
    fn window(&self, series: &ValidatedSeries, date: Option<NaiveDate>) -> PyResult<FeatureWindow> {
        let clock = self.cfg.clock(&series.region);
        let derived = derive_all(series, self.cfg.features.eps_g, clock);
        let source = WindowSource { series, derived: &derived, clock, holidays: &self.cfg.features.holidays };
        let date = match date {
            Some(d) => d,
            None => clock
                .covered_days(series)
                .into_iter()
                .rev()
                .find(|d| series.observations[clock.day_range(series, *d).expect("covered")].iter().all(|o| !o.is_sentinel()))
                .map(|d| d + Duration::days(1))
                .ok_or_else(|| err("series has no complete day"))?,
        };
        source.window(date, None, false).map_err(|r| err(format!("no window for {date}: {r:?}")))
    }
}

#[pymethods]
impl PyModel {
    /// Trains on every window of `series`, split chronologically per the
    /// config. Returns the model and its training history.
    #[staticmethod]
    #[pyo3(signature = (series, config_json = None))]
    fn train<'py>(py: Python<'py>, series: &PySeries, config_json: Option<&str>) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let cfg = config(config_json)?;
        let series = series.inner.clone();
        let (params, history, meta) = py
            .detach(|| -> Result<_, CliError> {
                let clock = cfg.clock(&series.region);
                let derived = derive_all(&series, cfg.features.eps_g, clock);
                let holidays: &BTreeSet<NaiveDate> = &cfg.features.holidays;
                let source = WindowSource { series: &series, derived: &derived, clock, holidays };
                let ds = chronological_split(build_windows(&source).windows, cfg.features.split)?;
                let (params, history) = train(&cfg.model, &ds, &cfg.train)?;
                let trained_through = ds.val().last().map(|w| w.forecast_date).expect("val split is non-empty");
                Ok((params, history, ModelMeta { stats: ds.stats, trained_through, config_hash: cfg.hash() }))
            })
            .map_err(err)?;
        let history = pythonize(py, &history).map_err(err)?;
        Ok((PyModel { spec: cfg.model.clone(), params, meta, cfg }, history))
    }

    /// Loads a model file and its `.meta.json` sidecar.
    #[staticmethod]
    #[pyo3(signature = (path, config_json = None))]
    fn load(path: PathBuf, config_json: Option<&str>) -> PyResult<Self> {
        let f = File::open(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let (spec, params) = load_model(BufReader::new(f)).map_err(err)?;
        let text = std::fs::read_to_string(meta_path(&path)).map_err(err)?;
        let meta: ModelMeta = serde_json::from_str(&text).map_err(err)?;
        Ok(PyModel { spec, params, meta, cfg: config(config_json)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_atomic(&path, |w| Ok(save_model(&self.spec, &self.params, w)?)).map_err(err)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(err)?;
        write_atomic(&meta_path(&path), |w| Ok(w.write_all(meta.as_bytes())?)).map_err(err)
    }

    /// Emissions forecast for `date` (default: the day after the newest
    /// complete day), in tonnes, with the implied hourly differences.
    #[pyo3(signature = (series, date = None))]
    fn predict<'py>(&self, py: Python<'py>, series: &PySeries, date: Option<NaiveDate>) -> PyResult<Bound<'py, PyDict>> {
        let w = self.window(&series.inner, date)?;
        let f = predict_day(&self.params, &self.spec, &self.meta.stats, &w).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("forecast_date", w.forecast_date)?;
        out.set_item("emissions", f.emissions)?;
        out.set_item("delta_e", f.delta_e)?;
        out.set_item("target", w.target)?;
        Ok(out)
    }

    /// Per-hour response of total predicted emissions to the day-ahead
    /// demand forecast, t/MWh.
    #[pyo3(signature = (series, date = None, delta = 0.01))]
    fn sensitivity(&self, series: &PySeries, date: Option<NaiveDate>, delta: f64) -> PyResult<Vec<f64>> {
        let w = self.window(&series.inner, date)?;
        sensitivity(&self.params, &self.spec, &self.meta.stats, &w, delta).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.param_count()
    }

    #[getter]
    fn trained_through(&self) -> NaiveDate {
        self.meta.trained_through
    }

    #[getter]
    fn spec_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.spec).map_err(err)
    }
}

#[pymodule]
fn mefcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MefcastError", m.py().get_type::<MefcastError>())?;
    m.add_class::<PySeries>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(derive, m)?)?;
    m.add_function(wrap_pyfunction!(profile, m)?)?;
    m.add_function(wrap_pyfunction!(dispatch, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
