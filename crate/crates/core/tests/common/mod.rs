#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;

use mefcast_core::features::{build_windows, chronological_split, Dataset, SplitFractions, WindowSource};
use mefcast_core::ingest::{FuelKind, HourlyObservation, ValidatedSeries};
use mefcast_core::series::{derive_all, DEFAULT_EPS_G};
use mefcast_core::synth::{generate_scenario, Scenario, ScenarioConfig};

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

/// Values with awkward binary expansions, so text round trips are tested
/// on more than integers.
pub fn messy<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// A random contiguous series. With `sentinels`, roughly one hour in
/// twenty is a missing-hour sentinel.
pub fn random_series<R: Rng>(rng: &mut R, hours: usize, sentinels: bool) -> ValidatedSeries {
    let pool = [
        FuelKind::Coal,
        FuelKind::NaturalGas,
        FuelKind::Nuclear,
        FuelKind::Hydro,
        FuelKind::Wind,
        FuelKind::Solar,
        FuelKind::Other,
    ];
    let fuels: BTreeSet<FuelKind> = pool.iter().copied().filter(|_| rng.random_bool(0.6)).chain([FuelKind::NaturalGas]).collect();
    let region = ["CISO", "ERCO", "PJM", "SYN"][rng.random_range(0..4)];
    let with_forecast = rng.random_bool(0.7);
    let start = t0() + Duration::hours(rng.random_range(0..10_000));
    let observations = (0..hours)
        .map(|i| {
            let ts = start + Duration::hours(i as i64);
            if sentinels && i > 0 && rng.random_bool(0.05) {
                return HourlyObservation::sentinel(ts, region, fuels.iter().copied());
            }
            let generation: BTreeMap<FuelKind, f64> = fuels.iter().map(|f| (*f, messy(rng, 0.0, 5000.0))).collect();
            HourlyObservation {
                timestamp: ts,
                region: region.to_string(),
                demand: messy(rng, 1000.0, 40000.0),
                demand_forecast: with_forecast.then(|| messy(rng, 1000.0, 40000.0)),
                net_imports: messy(rng, -3000.0, 3000.0),
                generation,
                co2: messy(rng, 0.0, 20000.0),
            }
        })
        .collect();
    ValidatedSeries { region: region.to_string(), start, observations, gap_report: vec![], clamped_negatives: 0 }
}

pub fn noisy_config(days: usize, seed: u64) -> ScenarioConfig {
    let base = ScenarioConfig::default();
    ScenarioConfig {
        days,
        seed,
        noise_sigma: 0.03 * base.base_demand,
        forecast_noise_sigma: 0.01 * base.base_demand,
        ..base
    }
}

/// Scenario plus its chronologically split windows.
pub fn scenario_dataset(cfg: &ScenarioConfig, fractions: SplitFractions) -> (Scenario, Dataset) {
    let scenario = generate_scenario(cfg).expect("feasible scenario");
    let clock = cfg.clock();
    let derived = derive_all(&scenario.series, DEFAULT_EPS_G, clock);
    let holidays = BTreeSet::new();
    let source = WindowSource { series: &scenario.series, derived: &derived, clock, holidays: &holidays };
    let set = build_windows(&source);
    let ds = chronological_split(set.windows, fractions).expect("enough windows");
    (scenario, ds)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Minimal HTTP/1.1 server for exercising the remote client. Each request
/// is answered by `handler(path_and_query) -> (status, body)` and the
/// connection is closed.
pub mod stub {
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};
    use std::thread;

    pub struct StubServer {
        pub base_url: String,
        pub hits: Arc<AtomicUsize>,
        pub paths: Arc<Mutex<Vec<String>>>,
    }

    pub fn serve<F>(handler: F) -> StubServer
    where
        F: Fn(&str, usize) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v2/data/", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let paths = Arc::new(Mutex::new(Vec::new()));
        let handler = Arc::new(handler);
        let (h, p) = (hits.clone(), paths.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (h, p, handler) = (h.clone(), p.clone(), handler.clone());
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                    loop {
                        let mut header = String::new();
                        if reader.read_line(&mut header).unwrap_or(0) == 0 || header == "\r\n" {
                            break;
                        }
                    }
                    let n = h.fetch_add(1, Ordering::SeqCst);
                    p.lock().unwrap().push(path.clone());
                    let (status, body) = handler(&path, n);
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(reply.as_bytes());
                });
            }
        });
        StubServer { base_url, hits, paths }
    }

    /// Value of a query parameter, percent-decoding only what the tests need.
    pub fn query_param(path: &str, key: &str) -> Option<String> {
        let q = path.split_once('?')?.1;
        q.split('&').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            let k = k.replace("%5B", "[").replace("%5D", "]");
            (k == key).then(|| v.replace("%3A", ":"))
        })
    }
}
