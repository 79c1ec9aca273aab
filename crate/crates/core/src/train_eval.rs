//! Training, day-ahead prediction, baselines, metrics, demand-forecast
//! sensitivity, and nowcast updates.

use std::collections::BTreeSet;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    apply_normalizer, ChannelGroup, Dataset, FeatureError, FeatureWindow, NormStats, WindowSource, HOURS,
};
use crate::ingest::{validate_series, format_timestamp, GapPolicy, HourlyObservation, IngestError, ValidatedSeries};
use crate::nn::{
    loss_and_gradients, model_forward, model_input, mse_loss, GradientSet, ModelInput, ModelParams, ModelSpec, NnError,
    OptimizerState,
};
use crate::series::{derive_all, DayClock, DEFAULT_EPS_G};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("window for {0} has no target")]
    NoTarget(NaiveDate),
    #[error("no history for {0}")]
    MissingHistory(NaiveDate),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 500, batch_size: 4, learning_rate: 2e-3, patience: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean normalized MSE over the training split after each epoch.
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_val(&self) -> f64 {
        self.val_mse[self.best_epoch]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_mse,val_mse")?;
        for (i, (t, v)) in self.train_mse.iter().zip(&self.val_mse).enumerate() {
            writeln!(out, "{},{t},{v}", i + 1)?;
        }
        Ok(())
    }
}

type Example = (ModelInput, Vec<f64>);

fn examples(windows: &[FeatureWindow], stats: &NormStats) -> Result<Vec<Example>> {
    windows
        .iter()
        .map(|w| {
            let z = apply_normalizer(w, stats);
            let target = z.target.clone().ok_or(TrainError::NoTarget(w.forecast_date))?;
            Ok((model_input(&z)?, target))
        })
        .collect()
}

fn mean_loss(spec: &ModelSpec, params: &ModelParams, set: &[Example]) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .map(|(x, t)| model_forward(spec, params, x).map(|(out, _)| mse_loss(out.data(), t)))
        .collect::<std::result::Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Minibatch Adam on normalized MSE. Returns the parameters of the epoch
/// with the lowest validation loss. Only the train and val splits are read.
pub fn train(spec: &ModelSpec, dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(TrainError::Config("epochs and batch_size must be at least 1".into()));
    }
    let train_set = examples(dataset.train(), &dataset.stats)?;
    let val_set = examples(dataset.val(), &dataset.stats)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }

    let mut params = crate::nn::init_params(spec)?;
    let mut opt = OptimizerState::new(&params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = TrainHistory { train_mse: vec![], val_mse: vec![], best_epoch: 0, stop_reason: StopReason::MaxEpochs };
    let mut best = params.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut idx = batch.to_vec();
            idx.sort_unstable();
            let results: Vec<(f64, GradientSet)> = idx
                .par_iter()
                .map(|&i| loss_and_gradients(spec, &params, &train_set[i].0, &train_set[i].1))
                .collect::<std::result::Result<_, _>>()?;
            let mut total = ModelParams::zeros(spec)?;
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                total.add_scaled(g, 1.0 / results.len() as f64);
            }
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, batch: b + 1 });
            }
            opt.step(&mut params, &total);
        }

        let train_mse = mean_loss(spec, &params, &train_set)?;
        let val_mse = mean_loss(spec, &params, &val_set)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, batch: 0 });
        }
        history.train_mse.push(train_mse);
        history.val_mse.push(val_mse);
        if epoch == 0 || val_mse < history.val_mse[history.best_epoch] {
            history.best_epoch = epoch;
            best = params.clone();
        } else if epoch - history.best_epoch > cfg.patience {
            history.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok((best, history))
}

/// Predicted emissions for one day and the implied hour-over-hour
/// marginal emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayForecast {
    /// t
    pub emissions: Vec<f64>,
    /// t; hour 0 is taken against the previous day's observed hour 23.
    pub delta_e: Vec<f64>,
}

/// Runs the model on a raw (unnormalized) window and returns emissions in
/// tonnes.
pub fn predict_day(params: &ModelParams, spec: &ModelSpec, stats: &NormStats, window: &FeatureWindow) -> Result<DayForecast> {
    window.check_shape()?;
    let z = apply_normalizer(window, stats);
    let (out, _) = model_forward(spec, params, &model_input(&z)?)?;
    let emissions: Vec<f64> = out.data().iter().map(|v| stats.target.invert(*v)).collect();
    let prev_last = window.channel(ChannelGroup::PrevEmissions)[HOURS - 1];
    let delta_e = emissions
        .iter()
        .enumerate()
        .map(|(h, e)| e - if h == 0 { prev_last } else { emissions[h - 1] })
        .collect();
    Ok(DayForecast { emissions, delta_e })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// t
    pub mae: f64,
    /// t
    pub rmse: f64,
    /// percent, over hours with |target| ≥ ε_G
    pub mape: f64,
    pub nrmse: f64,
    /// RMSE per hour of day, t
    pub per_hour_rmse: Vec<f64>,
    pub n_windows: usize,
}

pub fn metrics(preds: &[Vec<f64>], targets: &[Vec<f64>], eps_g: f64) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let (mut abs, mut sq, mut pct, mut n_pct, mut sum_t, mut n) = (0.0, 0.0, 0.0, 0usize, 0.0, 0usize);
    let mut hour_sq = vec![0.0; HOURS];
    for (p, t) in preds.iter().zip(targets) {
        for h in 0..HOURS {
            let e = p[h] - t[h];
            abs += e.abs();
            sq += e * e;
            hour_sq[h] += e * e;
            sum_t += t[h];
            n += 1;
            if t[h].abs() >= eps_g {
                pct += (e / t[h]).abs();
                n_pct += 1;
            }
        }
    }
    let mae = abs / n as f64;
    let rmse = (sq / n as f64).sqrt();
    debug_assert!(rmse + 1e-12 * rmse.max(1.0) >= mae, "rmse {rmse} < mae {mae}");
    let mean_t = sum_t / n as f64;
    Ok(Metrics {
        mae,
        rmse,
        mape: if n_pct > 0 { 100.0 * pct / n_pct as f64 } else { f64::NAN },
        nrmse: rmse / mean_t,
        per_hour_rmse: hour_sq.iter().map(|s| (s / preds.len() as f64).sqrt()).collect(),
        n_windows: preds.len(),
    })
}

fn targets_of(windows: &[FeatureWindow]) -> Result<Vec<Vec<f64>>> {
    windows.iter().map(|w| w.target.clone().ok_or(TrainError::NoTarget(w.forecast_date))).collect()
}

pub fn predict_all(params: &ModelParams, spec: &ModelSpec, stats: &NormStats, windows: &[FeatureWindow]) -> Result<Vec<Vec<f64>>> {
    windows
        .par_iter()
        .map(|w| predict_day(params, spec, stats, w).map(|f| f.emissions))
        .collect()
}

pub fn evaluate(params: &ModelParams, spec: &ModelSpec, stats: &NormStats, windows: &[FeatureWindow], eps_g: f64) -> Result<Metrics> {
    let targets = targets_of(windows)?;
    metrics(&predict_all(params, spec, stats, windows)?, &targets, eps_g)
}

/// The previous day's observed emissions, verbatim.
pub fn baseline_persistence(series: &ValidatedSeries, date: NaiveDate, clock: DayClock) -> Result<Vec<f64>> {
    let prev = date - Duration::days(1);
    let range = clock.day_range(series, prev).ok_or(TrainError::MissingHistory(date))?;
    let v: Vec<f64> = series.observations[range].iter().map(|o| o.co2).collect();
    if v.iter().any(|x| x.is_nan()) {
        return Err(TrainError::MissingHistory(date));
    }
    Ok(v)
}

/// Per-hour-of-day mean of the training targets.
pub fn baseline_hourly_mean(train: &[FeatureWindow]) -> Result<Vec<f64>> {
    let targets = targets_of(train)?;
    if targets.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    Ok((0..HOURS).map(|h| targets.iter().map(|t| t[h]).sum::<f64>() / targets.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: Metrics,
    pub persistence: Metrics,
    pub hourly_mean: Metrics,
}

/// Model metrics on `split` next to the persistence and train-period
/// hourly-mean baselines.
pub fn evaluate_with_baselines(
    params: &ModelParams,
    spec: &ModelSpec,
    dataset: &Dataset,
    split: crate::features::Split,
    eps_g: f64,
) -> Result<EvalReport> {
    let windows = dataset.split(split);
    let targets = targets_of(windows)?;
    let persistence: Vec<Vec<f64>> = windows.iter().map(|w| w.channel(ChannelGroup::PrevEmissions).to_vec()).collect();
    let hm = baseline_hourly_mean(dataset.train())?;
    Ok(EvalReport {
        model: evaluate(params, spec, &dataset.stats, windows, eps_g)?,
        persistence: metrics(&persistence, &targets, eps_g)?,
        hourly_mean: metrics(&vec![hm; windows.len()], &targets, eps_g)?,
    })
}

/// Empirical response of total predicted emissions to a relative bump of
/// the day-ahead demand forecast at each hour, t/MWh. Hours whose forecast
/// is below ε_G give NaN.
pub fn sensitivity(
    params: &ModelParams,
    spec: &ModelSpec,
    stats: &NormStats,
    window: &FeatureWindow,
    delta: f64,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(TrainError::Config(format!("perturbation must be positive, got {delta}")));
    }
    let base = predict_day(params, spec, stats, window)?;
    let base_total: f64 = base.emissions.iter().sum();
    (0..HOURS)
        .into_par_iter()
        .map(|h| {
            let value = window.channel(ChannelGroup::DayaheadDemandForecast)[h];
            if value.abs() < DEFAULT_EPS_G {
                return Ok(f64::NAN);
            }
            let mut bumped = window.clone();
            let bump = delta * value;
            bumped.channel_mut(ChannelGroup::DayaheadDemandForecast)[h] = value + bump;
            let p = predict_day(params, spec, stats, &bumped)?;
            Ok((p.emissions.iter().sum::<f64>() - base_total) / bump)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub persistence: Metrics,
    pub hourly_mean: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub forecast_date: NaiveDate,
    pub predicted: Vec<f64>,
    pub predicted_delta_e: Vec<f64>,
    pub target: Option<Vec<f64>>,
    pub metrics: Option<Metrics>,
    pub baselines: Option<BaselineMetrics>,
    pub sensitivity: Option<Vec<f64>>,
    pub forecast_fallback: bool,
}

impl ForecastReport {
    pub fn build(
        params: &ModelParams,
        spec: &ModelSpec,
        stats: &NormStats,
        window: &FeatureWindow,
        hourly_mean: Option<&[f64]>,
        sensitivity_delta: Option<f64>,
        eps_g: f64,
    ) -> Result<ForecastReport> {
        let f = predict_day(params, spec, stats, window)?;
        let (metrics, baselines) = match &window.target {
            Some(t) => {
                let targets = vec![t.clone()];
                let persistence = vec![window.channel(ChannelGroup::PrevEmissions).to_vec()];
                (
                    Some(metrics(&[f.emissions.clone()], &targets, eps_g)?),
                    Some(BaselineMetrics {
                        persistence: metrics(&persistence, &targets, eps_g)?,
                        hourly_mean: hourly_mean.map(|hm| metrics(&[hm.to_vec()], &targets, eps_g)).transpose()?,
                    }),
                )
            }
            None => (None, None),
        };
        let sensitivity = sensitivity_delta.map(|d| sensitivity(params, spec, stats, window, d)).transpose()?;
        Ok(ForecastReport {
            forecast_date: window.forecast_date,
            predicted: f.emissions,
            predicted_delta_e: f.delta_e,
            target: window.target.clone(),
            metrics,
            baselines,
            sensitivity,
            forecast_fallback: window.forecast_fallback,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let cell = |v: Option<f64>| v.filter(|x| !x.is_nan()).map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "hour,predicted_t,predicted_delta_e_t,target_t,sensitivity_t_per_mwh")?;
        for h in 0..HOURS {
            writeln!(
                out,
                "{h},{},{},{},{}",
                self.predicted[h],
                self.predicted_delta_e[h],
                cell(self.target.as_ref().map(|t| t[h])),
                cell(self.sensitivity.as_ref().map(|s| s[h])),
            )?;
        }
        Ok(())
    }
}

/// Series state kept between nowcast updates. The model is never touched.
#[derive(Debug, Clone)]
pub struct NowcastState {
    pub series: ValidatedSeries,
    pub clock: DayClock,
    pub policy: GapPolicy,
    pub holidays: BTreeSet<NaiveDate>,
    pub eps_g: f64,
    /// Last forecast date covered by the training data.
    pub trained_through: NaiveDate,
    pub staleness_days: i64,
}

#[derive(Debug, Clone)]
pub struct NowcastUpdate {
    /// Window for the day after the newest complete day.
    pub next_window: Option<FeatureWindow>,
    pub newest_complete_day: Option<NaiveDate>,
    /// Complete days gained by this append.
    pub new_complete_days: usize,
    pub retrain_due: bool,
}

impl NowcastState {
    fn complete_days(&self) -> Vec<NaiveDate> {
        self.clock
            .covered_days(&self.series)
            .into_iter()
            .filter(|d| {
                let r = self.clock.day_range(&self.series, *d).expect("covered day");
                self.series.observations[r].iter().all(|o| !o.is_sentinel())
            })
            .collect()
    }

    /// Appends observations that continue the series, re-validates
    /// (interpolating short holes), and rebuilds the next prediction window.
    pub fn append(&mut self, new: &[HourlyObservation], dayahead: Option<&[f64]>) -> Result<NowcastUpdate> {
        let before = self.complete_days().len();
        if let Some(first) = new.iter().map(|o| o.timestamp).min() {
            let expected = self.series.end();
            if first != expected {
                return Err(IngestError::NonContiguous {
                    expected: format_timestamp(expected),
                    actual: format_timestamp(first),
                }
                .into());
            }
            let mut all = self.series.observations.clone();
            all.extend_from_slice(new);
            let mut validated = validate_series(&all, self.policy)?;
            validated.gap_report.splice(0..0, self.series.gap_report.iter().cloned());
            validated.gap_report.sort_by_key(|g| g.start);
            validated.gap_report.dedup();
            self.series = validated;
        }

        let complete = self.complete_days();
        let newest = complete.last().copied();
        let derived = derive_all(&self.series, self.eps_g, self.clock);
        let source = WindowSource { series: &self.series, derived: &derived, clock: self.clock, holidays: &self.holidays };
        let next_window = newest.and_then(|d| source.window(d + Duration::days(1), dayahead, false).ok());
        Ok(NowcastUpdate {
            next_window,
            newest_complete_day: newest,
            new_complete_days: complete.len().saturating_sub(before),
            retrain_due: newest.is_some_and(|d| (d - self.trained_through).num_days() > self.staleness_days),
        })
    }
}

/// Free-function form of [`NowcastState::append`].
pub fn nowcast_append(state: &mut NowcastState, new: &[HourlyObservation], dayahead: Option<&[f64]>) -> Result<NowcastUpdate> {
    state.append(new, dayahead)
}
