//! Paged client for an EIA-style hourly grid data API.
//!
//! Each `response.data[]` row describes one hour:
//!
//! ```json
//! {"period": "2023-01-01T08", "respondent": "CISO", "demand": 21000,
//!  "demand_forecast": 21500, "net_imports": -1200, "co2": 4100,
//!  "NG": 9000, "SUN": "2000"}
//! ```
//!
//! Fuel columns use EIA fuel codes (`COL`, `NG`, `OIL`, `NUC`, `WAT`, `WND`,
//! `SUN`, `BAT`, `IMP`, `OTH`). Numbers may arrive as JSON numbers or numeric
//! strings; `null` means absent.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{parse_timestamp, FuelKind, HourlyObservation, IngestError, Result};

pub const API_KEY_ENV: &str = "MEFCAST_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: String,
    pub region: String,
    pub start: DateTime<Utc>,
    /// Exclusive.
    pub end: DateTime<Utc>,
    pub page_length: usize,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub concurrency: usize,
}

impl RemoteConfig {
    pub fn new(base_url: &str, api_key: &str, region: &str, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        RemoteConfig {
            base_url: base_url.to_string(),
            api_key: api_key.to_string(),
            region: region.to_string(),
            start,
            end,
            page_length: 5000,
            max_attempts: 3,
            backoff_ms: 250,
            concurrency: 4,
        }
    }
}

struct Page {
    total: usize,
    rows: Vec<HourlyObservation>,
}

enum Attempt {
    Retry(String),
    Fatal(IngestError),
}

fn number(v: Option<&Value>) -> std::result::Result<Option<f64>, String> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n.as_f64().map(Some).ok_or_else(|| format!("bad number {n}")),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(Value::String(s)) => s.trim().parse().map(Some).map_err(|_| format!("bad number `{s}`")),
        Some(other) => Err(format!("expected number, got {other}")),
    }
}

fn decode_row(row: &Value, region: &str) -> std::result::Result<HourlyObservation, String> {
    let obj = row.as_object().ok_or("row is not an object")?;
    let period = obj.get("period").and_then(Value::as_str).ok_or("row lacks `period`")?;
    let timestamp = parse_timestamp(period)?;
    let respondent = obj.get("respondent").and_then(Value::as_str).unwrap_or(region);
    let mut generation = BTreeMap::new();
    for (key, value) in obj {
        if let Some(fuel) = FuelKind::from_code(key) {
            if let Some(v) = number(Some(value))? {
                generation.insert(fuel, v);
            }
        }
    }
    Ok(HourlyObservation {
        timestamp,
        region: respondent.to_string(),
        demand: number(obj.get("demand"))?.unwrap_or(f64::NAN),
        demand_forecast: number(obj.get("demand_forecast"))?,
        net_imports: number(obj.get("net_imports"))?.unwrap_or(f64::NAN),
        generation,
        co2: number(obj.get("co2"))?.unwrap_or(f64::NAN),
    })
}

fn decode_page(body: &str, offset: usize, region: &str) -> Result<Page> {
    let decode_err = |message: String| IngestError::Decode { offset, message };
    let doc: Value = serde_json::from_str(body).map_err(|e| decode_err(e.to_string()))?;
    let response = doc.get("response").ok_or_else(|| decode_err("missing `response`".into()))?;
    let data = response
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| decode_err("missing `response.data`".into()))?;
    let total = match number(response.get("total")).map_err(decode_err)? {
        Some(t) => t as usize,
        None => data.len(),
    };
    let rows = data
        .iter()
        .map(|r| decode_row(r, region))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(decode_err)?;
    Ok(Page { total, rows })
}

fn fetch_page(client: &reqwest::blocking::Client, cfg: &RemoteConfig, offset: usize) -> Result<Page> {
    let last_hour = cfg.end - chrono::Duration::hours(1);
    let params = [
        ("api_key", cfg.api_key.clone()),
        ("frequency", "hourly".to_string()),
        ("facets[respondent][]", cfg.region.clone()),
        ("start", cfg.start.format("%Y-%m-%dT%H").to_string()),
        ("end", last_hour.format("%Y-%m-%dT%H").to_string()),
        ("sort[0][column]", "period".to_string()),
        ("sort[0][direction]", "asc".to_string()),
        ("offset", offset.to_string()),
        ("length", cfg.page_length.to_string()),
    ];
    let url = reqwest::Url::parse_with_params(&cfg.base_url, &params)
        .map_err(|e| IngestError::InvalidRequest(format!("bad base url: {e}")))?;

    let attempt = || -> std::result::Result<Page, Attempt> {
        let resp = client.get(url.clone()).send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(Attempt::Fatal(IngestError::Auth(format!("server returned {status}"))));
        }
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("server returned {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(IngestError::Transport {
                attempts: 1,
                message: format!("server returned {status}"),
            }));
        }
        let body = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        decode_page(&body, offset, &cfg.region).map_err(Attempt::Fatal)
    };

    let attempts = cfg.max_attempts.max(1);
    let mut last = String::new();
    for n in 0..attempts {
        if n > 0 {
            thread::sleep(StdDuration::from_millis(cfg.backoff_ms << (n - 1)));
        }
        match attempt() {
            Ok(page) => return Ok(page),
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Retry(msg)) => {
                log::debug!("page at offset {offset}: attempt {} failed: {msg}", n + 1);
                last = msg;
            }
        }
    }
    Err(IngestError::Transport { attempts, message: last })
}

/// Downloads every page of the hourly series in `[start, end)`. Pages after
/// the first are requested concurrently; the merged result is sorted by
/// timestamp.
pub fn fetch_remote(cfg: &RemoteConfig) -> Result<Vec<HourlyObservation>> {
    if cfg.api_key.trim().is_empty() {
        return Err(IngestError::Auth(format!("no API key (set {API_KEY_ENV})")));
    }
    if cfg.start > cfg.end {
        return Err(IngestError::InvalidRequest("range start is after end".into()));
    }
    if cfg.page_length == 0 {
        return Err(IngestError::InvalidRequest("page length must be positive".into()));
    }
    if cfg.start == cfg.end {
        return Ok(Vec::new());
    }

    let client = reqwest::blocking::Client::builder()
        .timeout(StdDuration::from_secs(60))
        .build()
        .map_err(|e| IngestError::Transport { attempts: 0, message: e.to_string() })?;

    let first = fetch_page(&client, cfg, 0)?;
    let offsets: Vec<usize> = (1..first.total.div_ceil(cfg.page_length))
        .map(|p| p * cfg.page_length)
        .collect();

    let mut pages: Vec<(usize, Vec<HourlyObservation>)> = vec![(0, first.rows)];
    for chunk in offsets.chunks(cfg.concurrency.max(1)) {
        let fetched: Vec<Result<(usize, Vec<HourlyObservation>)>> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&off| {
                    let client = &client;
                    s.spawn(move || fetch_page(client, cfg, off).map(|p| (off, p.rows)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(IngestError::Transport { attempts: 0, message: "page worker panicked".into() })
                    })
                })
                .collect()
        });
        for page in fetched {
            pages.push(page?);
        }
    }

    pages.sort_by_key(|(off, _)| *off);
    let mut rows: Vec<HourlyObservation> = pages.into_iter().flat_map(|(_, r)| r).collect();
    rows.sort_by_key(|o| o.timestamp);
    Ok(rows)
}
