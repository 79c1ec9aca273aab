mod common;

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{noisy_config, scenario_dataset};
use mefcast_core::features::{chronological_split, ChannelGroup, Dataset, Split, SplitFractions, HOURS};
use mefcast_core::ingest::{GapPolicy, IngestError, ValidatedSeries};
use mefcast_core::nn::{ModelSpec, PoolSpec};
use mefcast_core::series::{DayClock, DEFAULT_EPS_G};
use mefcast_core::synth::generate_scenario;
use mefcast_core::train_eval::{
    baseline_hourly_mean, baseline_persistence, evaluate_with_baselines, metrics, predict_day, sensitivity, train,
    ForecastReport, NowcastState, StopReason, TrainConfig, TrainError,
};

fn small_spec(seed: u64) -> ModelSpec {
    let mut spec = ModelSpec::default_architecture(seed);
    for h in spec.heads.iter_mut() {
        for l in h.layers.iter_mut() {
            l.kernels = 3;
            l.pool = Some(PoolSpec { width: 4, stride: 4 });
        }
    }
    spec.trunk = vec![16, HOURS];
    spec
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, learning_rate: 2e-3, patience: epochs, seed: 1 }
}

fn dataset(days: usize, seed: u64) -> Dataset {
    scenario_dataset(&noisy_config(days, seed), SplitFractions::default()).1
}

#[test]
fn test_split_never_reaches_training() {
    let ds = dataset(30, 1);
    let spec = small_spec(2);
    let (params, history) = train(&spec, &ds, &quick(8)).unwrap();

    let mut windows = ds.windows.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for w in windows[ds.n_train + ds.n_val..].iter_mut() {
        w.target.as_mut().unwrap().iter_mut().for_each(|v| *v = rng.random_range(-1e6..1e6));
        w.channel_mut(ChannelGroup::PrevEmissions).iter_mut().for_each(|v| *v = 7.0);
    }
    let corrupted = chronological_split(windows, SplitFractions::default()).unwrap();
    let (params2, history2) = train(&spec, &corrupted, &quick(8)).unwrap();
    assert_eq!(params, params2);
    assert_eq!(history, history2);
}

#[test]
fn zero_patience_stops_at_first_non_improving_epoch() {
    let ds = dataset(30, 2);
    let cfg = TrainConfig { epochs: 300, patience: 0, learning_rate: 0.05, ..quick(300) };
    let (_, h) = train(&small_spec(1), &ds, &cfg).unwrap();
    assert_eq!(h.stop_reason, StopReason::EarlyStop);
    let n = h.val_mse.len();
    assert_eq!(h.best_epoch, n - 2);
    assert!(h.val_mse.windows(2).take(n - 2).all(|p| p[1] < p[0]));
    assert!(h.val_mse[n - 1] >= h.val_mse[n - 2]);
    assert_eq!(h.best_val(), h.val_mse[n - 2]);
}

#[test]
fn patience_counts_epochs_without_improvement() {
    let ds = dataset(30, 2);
    let cfg = TrainConfig { epochs: 300, patience: 3, learning_rate: 0.05, ..quick(300) };
    let (_, h) = train(&small_spec(1), &ds, &cfg).unwrap();
    if h.stop_reason == StopReason::EarlyStop {
        assert_eq!(h.val_mse.len(), h.best_epoch + 3 + 2);
        assert!(h.val_mse[h.best_epoch + 1..].iter().all(|v| *v >= h.best_val()));
    } else {
        assert_eq!(h.val_mse.len(), 300);
    }
}

#[test]
fn bad_configs_are_rejected() {
    let ds = dataset(12, 1);
    assert!(matches!(train(&small_spec(0), &ds, &quick(0)), Err(TrainError::Config(_))));
    let cfg = TrainConfig { batch_size: 0, ..quick(2) };
    assert!(matches!(train(&small_spec(0), &ds, &cfg), Err(TrainError::Config(_))));
    let no_val = chronological_split(ds.windows.clone(), SplitFractions { train: 0.9, val: 0.0, test: 0.1 });
    if let Ok(no_val) = no_val {
        assert!(matches!(train(&small_spec(0), &no_val, &quick(2)), Err(TrainError::EmptySplit("val"))));
    }
}

#[test]
fn exploding_learning_rate_is_a_numeric_error() {
    let ds = dataset(20, 4);
    let cfg = TrainConfig { learning_rate: 1e200, ..quick(30) };
    match train(&small_spec(0), &ds, &cfg) {
        Err(TrainError::NonFiniteLoss { .. }) | Err(TrainError::Nn(_)) => {}
        other => panic!("expected a numeric failure, got {:?}", other.map(|(_, h)| h)),
    }
}

#[test]
fn prediction_is_pure_and_in_tonnes() {
    let ds = dataset(20, 5);
    let spec = small_spec(3);
    let (params, _) = train(&spec, &ds, &quick(20)).unwrap();
    let w = ds.test()[0].clone();
    let a = predict_day(&params, &spec, &ds.stats, &w).unwrap();
    let b = predict_day(&params, &spec, &ds.stats, &w).unwrap();
    assert_eq!(a, b);
    assert_eq!(w, ds.test()[0]);
    assert_eq!(a.emissions.len(), HOURS);
    let target = w.target.as_ref().unwrap();
    let mean_target = target.iter().sum::<f64>() / 24.0;
    let mean_pred = a.emissions.iter().sum::<f64>() / 24.0;
    assert!((mean_pred - mean_target).abs() < 0.5 * mean_target, "{mean_pred} vs {mean_target}");
    assert_eq!(a.delta_e[0], a.emissions[0] - w.channel(ChannelGroup::PrevEmissions)[23]);
    assert_eq!(a.delta_e[5], a.emissions[5] - a.emissions[4]);
}

#[test]
fn metric_identities_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.random_range(1..6);
        let mut row = |lo: f64| (0..HOURS).map(|_| rng.random_range(lo..100.0)).collect::<Vec<f64>>();
        let preds: Vec<_> = (0..n).map(|_| row(-50.0)).collect();
        let targets: Vec<_> = (0..n).map(|_| row(1.0)).collect();
        let m = metrics(&preds, &targets, DEFAULT_EPS_G).unwrap();
        assert!(m.mae >= 0.0 && m.rmse >= 0.0 && m.mape >= 0.0);
        assert!(m.rmse + 1e-12 >= m.mae);
        let mean_sq = m.per_hour_rmse.iter().map(|r| r * r).sum::<f64>() / HOURS as f64;
        assert!((mean_sq.sqrt() - m.rmse).abs() <= 1e-9 * m.rmse.max(1.0));
        assert_eq!(m.n_windows, n);
        let perfect = metrics(&targets, &targets, DEFAULT_EPS_G).unwrap();
        assert_eq!((perfect.mae, perfect.rmse, perfect.mape), (0.0, 0.0, 0.0));
    }
    assert!(metrics(&[], &[], DEFAULT_EPS_G).is_err());
}

#[test]
fn baselines_match_their_definitions() {
    let cfg = noisy_config(20, 6);
    let (scenario, ds) = scenario_dataset(&cfg, SplitFractions::default());
    let w = &ds.test()[0];
    let p = baseline_persistence(&scenario.series, w.forecast_date, cfg.clock()).unwrap();
    assert_eq!(p, w.channel(ChannelGroup::PrevEmissions));
    let far = NaiveDate::from_ymd_opt(2030, 1, 1).unwrap();
    assert!(matches!(baseline_persistence(&scenario.series, far, cfg.clock()), Err(TrainError::MissingHistory(_))));

    let hm = baseline_hourly_mean(ds.train()).unwrap();
    let h7: f64 = ds.train().iter().map(|w| w.target.as_ref().unwrap()[7]).sum::<f64>() / ds.n_train as f64;
    assert!((hm[7] - h7).abs() < 1e-9);
}

#[test]
fn model_beats_persistence_on_a_second_scenario() {
    let cfg = noisy_config(180, 3);
    let fractions = SplitFractions { train: 0.758, val: 0.09, test: 0.152 };
    let (_, ds) = scenario_dataset(&cfg, fractions);
    let spec = ModelSpec::default_architecture(3);
    let (params, _) = train(&spec, &ds, &TrainConfig { seed: 3, ..TrainConfig::default() }).unwrap();
    let report = evaluate_with_baselines(&params, &spec, &ds, Split::Test, DEFAULT_EPS_G).unwrap();
    assert!(report.model.rmse < report.persistence.rmse, "{} vs {}", report.model.rmse, report.persistence.rmse);
}

#[test]
fn sensitivity_handles_tiny_forecasts() {
    let ds = dataset(20, 5);
    let spec = small_spec(3);
    let (params, _) = train(&spec, &ds, &quick(5)).unwrap();
    let mut w = ds.test()[0].clone();
    w.channel_mut(ChannelGroup::DayaheadDemandForecast)[5] = 0.5;
    let s = sensitivity(&params, &spec, &ds.stats, &w, 0.01).unwrap();
    assert!(s[5].is_nan());
    assert!(s.iter().enumerate().all(|(h, v)| h == 5 || v.is_finite()));
    assert!(sensitivity(&params, &spec, &ds.stats, &w, 0.0).is_err());

    let report = ForecastReport::build(&params, &spec, &ds.stats, &w, None, Some(0.01), DEFAULT_EPS_G).unwrap();
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 25);
    // NaN sensitivity is written as an empty cell
    assert!(text.lines().nth(6).unwrap().ends_with(','));
    assert!(report.metrics.is_some() && report.baselines.as_ref().unwrap().hourly_mean.is_none());
}

fn nowcast_fixture(days: usize, observed_days: usize, trained_through_day: i64) -> (NowcastState, ValidatedSeries) {
    let cfg = noisy_config(days, 9);
    let full = generate_scenario(&cfg).unwrap().series;
    let mut head = full.clone();
    head.observations.truncate(observed_days * 24);
    let state = NowcastState {
        series: head,
        clock: DayClock::UTC,
        policy: GapPolicy::default(),
        holidays: BTreeSet::new(),
        eps_g: DEFAULT_EPS_G,
        trained_through: cfg.start + Duration::days(trained_through_day),
        staleness_days: 7,
    };
    (state, full)
}

#[test]
fn nowcast_append_advances_one_day() {
    let (mut state, full) = nowcast_fixture(14, 10, 8);
    let day11 = &full.observations[240..264];
    let forecast: Vec<f64> = (0..24).map(|h| 200.0 + h as f64).collect();
    let up = state.append(day11, Some(&forecast)).unwrap();
    let d11 = NaiveDate::from_ymd_opt(2023, 1, 11).unwrap();
    assert_eq!(up.newest_complete_day, Some(d11));
    assert_eq!(up.new_complete_days, 1);
    assert!(!up.retrain_due);
    let w = up.next_window.unwrap();
    assert_eq!(w.forecast_date, d11 + Duration::days(1));
    assert!(w.target.is_none());
    assert_eq!(w.channel(ChannelGroup::DayaheadDemandForecast), forecast.as_slice());
    let obs: Vec<f64> = day11.iter().map(|o| o.co2).collect();
    assert_eq!(w.channel(ChannelGroup::PrevEmissions), obs.as_slice());
    assert_eq!(state.series.len(), 264);
}

#[test]
fn nowcast_rejects_a_discontinuous_append() {
    let (mut state, full) = nowcast_fixture(14, 10, 8);
    let err = state.append(&full.observations[264..288], None).unwrap_err();
    assert!(matches!(err, TrainError::Ingest(IngestError::NonContiguous { .. })), "{err}");
    assert_eq!(state.series.len(), 240);
}

#[test]
fn nowcast_fills_short_holes_and_flags_staleness() {
    let (mut state, full) = nowcast_fixture(14, 10, 1);
    let holey: Vec<_> =
        full.observations[240..264].iter().enumerate().filter(|(i, _)| !(5..7).contains(i)).map(|(_, o)| o.clone()).collect();
    let up = state.append(&holey, None).unwrap();
    assert_eq!(up.new_complete_days, 1);
    assert!(up.retrain_due);
    assert!(up.next_window.unwrap().forecast_fallback);
    assert!(state.series.gap_report.iter().any(|g| g.start == full.observations[245].timestamp));

    // An empty append changes nothing and reports no new days.
    let again = state.append(&[], None).unwrap();
    assert_eq!(again.new_complete_days, 0);
}
