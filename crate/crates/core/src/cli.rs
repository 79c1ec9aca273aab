//! The `mefcast` command line: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure. Every output
//! file is written to a temporary sibling and renamed into place, and each
//! run writes `<out>.manifest.json` recording the config hash and seed.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{build_windows, chronological_split, FeatureError, NormStats, Split, SplitFractions, WindowSource};
use crate::ingest::{
    fetch_remote, parse_csv, serialize_csv, validate_series, CsvSchema, GapEntry, GapPolicy, IngestError, RemoteConfig,
    ValidatedSeries, API_KEY_ENV,
};
use crate::nn::{load_model, save_model, ModelParams, ModelSpec, NnError};
use crate::series::{derive_all, intensity_profile, write_derived_csv, write_profile_csv, DayClock, SeriesError, DEFAULT_EPS_G};
use crate::synth::{generate_scenario, write_sidecar_csv, ScenarioConfig, SynthError};
use crate::train_eval::{
    baseline_hourly_mean, evaluate_with_baselines, sensitivity, train, ForecastReport, NowcastState, TrainConfig, TrainError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidRequest(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            NnError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Nn(n) => n.into(),
            TrainError::Feature(f) => f.into(),
            TrainError::Ingest(i) => i.into(),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub region: Option<String>,
    /// Local-day offset; defaults by region when absent.
    pub utc_offset_hours: Option<i32>,
    pub gap_policy: GapPolicy,
    pub schema: CsvSchema,
    pub base_url: String,
    pub page_length: usize,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub concurrency: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            region: None,
            utc_offset_hours: None,
            gap_policy: GapPolicy::default(),
            schema: CsvSchema::default(),
            base_url: "https://api.eia.gov/v2/electricity/rto/region-data/data/".into(),
            page_length: 5000,
            max_attempts: 3,
            backoff_ms: 250,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub eps_g: f64,
    pub split: SplitFractions,
    pub holidays: BTreeSet<NaiveDate>,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection { eps_g: DEFAULT_EPS_G, split: SplitFractions::default(), holidays: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySection {
    /// Relative bump applied to the day-ahead demand forecast.
    pub delta: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection { delta: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NowcastSection {
    /// Days past the training period before a retrain is flagged.
    pub staleness_days: i64,
}

impl Default for NowcastSection {
    fn default() -> Self {
        NowcastSection { staleness_days: 7 }
    }
}

/// Every tunable default, overridable from a JSON file. Unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ingest: IngestSection,
    pub features: FeaturesSection,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub sensitivity: SensitivitySection,
    pub synth: ScenarioConfig,
    pub nowcast: NowcastSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.model.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn canonical_json(&self) -> String {
        // Round-tripping through Value sorts object keys.
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn clock(&self, region: &str) -> DayClock {
        match self.ingest.utc_offset_hours {
            Some(h) => DayClock::new(h),
            None => DayClock::for_region(region),
        }
    }
}

/// Saved next to a model file as `<model>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub stats: NormStats,
    pub trained_through: NaiveDate,
    pub config_hash: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_report: Option<&'a [GapEntry]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped_windows: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "mefcast", version, about = "Grid emissions derivation and day-ahead forecasting")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct IoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Local forecast date; the day after the newest complete day when absent.
    #[arg(long)]
    date: Option<NaiveDate>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a CSV or fetch from the remote API, then validate.
    Ingest {
        #[arg(long = "in", conflicts_with_all = ["from", "to"])]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        region: Option<String>,
        /// First local date (inclusive).
        #[arg(long)]
        from: Option<NaiveDate>,
        /// Last local date (inclusive).
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    /// Hour-over-hour differences, marginal intensity, and intensity.
    Derive(IoArgs),
    /// 24-row intensity profile.
    Profile {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    /// Synthetic merit-order scenario plus ground-truth sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        from: Option<NaiveDate>,
    },
    /// Train a model on a series CSV.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Forecast one day.
    Predict(ModelArgs),
    /// Test-split metrics against the baselines.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-hour response to the day-ahead demand forecast.
    Sensitivity(ModelArgs),
    /// Append fresh observations and forecast the next day.
    Nowcast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        append: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the extended series.
        #[arg(long)]
        series_out: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code. Errors go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mefcast: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn emit<F>(out: Option<&Path>, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(p) => write_atomic(p, body),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// `<model>.meta.json`
pub fn meta_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    emit(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

struct RunContext<'a> {
    command: &'a str,
    cfg: &'a RunConfig,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
}

impl RunContext<'_> {
    /// Writes the manifest beside the first output, when there is one.
    fn finish(self, gap_report: Option<&[GapEntry]>, dropped_windows: Option<usize>) -> Result<()> {
        let Some(first) = self.outputs.first() else { return Ok(()) };
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: self.cfg.hash(),
            seed: self.cfg.train.seed,
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            gap_report,
            dropped_windows,
        };
        log::info!("{}: config {} seed {}", m.command, m.config_hash, m.seed);
        write_json(&manifest_path(first), &m)
    }
}

fn read_series(path: &Path, cfg: &RunConfig) -> Result<ValidatedSeries> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let obs = parse_csv(BufReader::new(f), &cfg.ingest.schema)?;
    Ok(validate_series(&obs, cfg.ingest.gap_policy)?)
}

fn filter_dates(series: ValidatedSeries, clock: DayClock, from: Option<NaiveDate>, to: Option<NaiveDate>, policy: GapPolicy) -> Result<ValidatedSeries> {
    if from.is_none() && to.is_none() {
        return Ok(series);
    }
    if let (Some(a), Some(b)) = (from, to) {
        if a > b {
            return Err(CliError::Usage(format!("--from {a} is after --to {b}")));
        }
    }
    let kept: Vec<_> = series
        .observations
        .iter()
        .filter(|o| {
            let d = clock.local_date(o.timestamp);
            from.is_none_or(|f| d >= f) && to.is_none_or(|t| d <= t)
        })
        .cloned()
        .collect();
    Ok(validate_series(&kept, policy)?)
}

fn load_trained(model: &Path) -> Result<(ModelSpec, ModelParams, ModelMeta)> {
    let f = File::open(model).map_err(|e| CliError::Data(format!("{}: {e}", model.display())))?;
    let (spec, params) = load_model(BufReader::new(f))?;
    let mp = meta_path(model);
    let text = std::fs::read_to_string(&mp).map_err(|e| CliError::Data(format!("{}: {e}", mp.display())))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", mp.display())))?;
    Ok((spec, params, meta))
}

fn newest_complete_day(series: &ValidatedSeries, clock: DayClock) -> Option<NaiveDate> {
    clock.covered_days(series).into_iter().rev().find(|d| {
        let r = clock.day_range(series, *d).expect("covered day");
        series.observations[r].iter().all(|o| !o.is_sentinel())
    })
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest { input, out, region, from, to } => {
            let mut ctx = RunContext { command: "ingest", cfg: &cfg, inputs: vec![], outputs: out.iter().cloned().collect() };
            let obs = match input {
                Some(p) => {
                    ctx.inputs.push(p.display().to_string());
                    let f = File::open(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                    parse_csv(BufReader::new(f), &cfg.ingest.schema)?
                }
                None => {
                    let region = region
                        .or_else(|| cfg.ingest.region.clone())
                        .ok_or_else(|| CliError::Usage("--region is required for a remote fetch".into()))?;
                    let (Some(from), Some(to)) = (from, to) else {
                        return Err(CliError::Usage("--from and --to are required for a remote fetch".into()));
                    };
                    let key = std::env::var(API_KEY_ENV).unwrap_or_default();
                    let clock = cfg.clock(&region);
                    let mut rc = RemoteConfig::new(
                        &cfg.ingest.base_url,
                        &key,
                        &region,
                        clock.day_start(from),
                        clock.day_start(to + Duration::days(1)),
                    );
                    rc.page_length = cfg.ingest.page_length;
                    rc.max_attempts = cfg.ingest.max_attempts;
                    rc.backoff_ms = cfg.ingest.backoff_ms;
                    rc.concurrency = cfg.ingest.concurrency;
                    ctx.inputs.push(format!("{}?region={region}&from={from}&to={to}", cfg.ingest.base_url));
                    fetch_remote(&rc)?
                }
            };
            let series = validate_series(&obs, cfg.ingest.gap_policy)?;
            emit(out.as_deref(), |w| Ok(serialize_csv(&series.observations, w)?))?;
            ctx.finish(Some(&series.gap_report), None)
        }
        Command::Derive(io) => {
            let series = read_series(&io.input, &cfg)?;
            let derived = derive_all(&series, cfg.features.eps_g, cfg.clock(&series.region));
            emit(io.out.as_deref(), |w| Ok(write_derived_csv(&derived, w)?))?;
            RunContext {
                command: "derive",
                cfg: &cfg,
                inputs: vec![io.input.display().to_string()],
                outputs: io.out.into_iter().collect(),
            }
            .finish(Some(&series.gap_report), None)
        }
        Command::Profile { io, from, to } => {
            let series = read_series(&io.input, &cfg)?;
            let clock = cfg.clock(&series.region);
            let series = filter_dates(series, clock, from, to, cfg.ingest.gap_policy)?;
            let profile = intensity_profile(&series, clock, cfg.features.eps_g)?;
            emit(io.out.as_deref(), |w| Ok(write_profile_csv(&profile, w)?))?;
            RunContext {
                command: "profile",
                cfg: &cfg,
                inputs: vec![io.input.display().to_string()],
                outputs: io.out.into_iter().collect(),
            }
            .finish(None, None)
        }
        Command::Synth { out, sidecar, region, from } => {
            let mut sc = cfg.synth.clone();
            if let Some(r) = region {
                sc.region = r;
            }
            if let Some(d) = from {
                sc.start = d;
            }
            let scenario = generate_scenario(&sc)?;
            write_atomic(&out, |w| Ok(serialize_csv(&scenario.series.observations, w)?))?;
            let sidecar = sidecar.unwrap_or_else(|| out.with_extension("truth.csv"));
            write_atomic(&sidecar, |w| Ok(write_sidecar_csv(&scenario.truth, w)?))?;
            RunContext { command: "synth", cfg: &cfg, inputs: vec![], outputs: vec![out, sidecar] }.finish(None, None)
        }
        Command::Train { input, out, history, dataset } => {
            let series = read_series(&input, &cfg)?;
            let clock = cfg.clock(&series.region);
            let derived = derive_all(&series, cfg.features.eps_g, clock);
            let source = WindowSource { series: &series, derived: &derived, clock, holidays: &cfg.features.holidays };
            let set = build_windows(&source);
            for (d, r) in &set.dropped {
                log::debug!("dropped window {d}: {r:?}");
            }
            let ds = chronological_split(set.windows, cfg.features.split)?;
            let (params, hist) = train(&cfg.model, &ds, &cfg.train)?;
            let trained_through = ds.val().last().or(ds.train().last()).map(|w| w.forecast_date).expect("non-empty split");
            write_atomic(&out, |w| Ok(save_model(&cfg.model, &params, w)?))?;
            let meta = ModelMeta { stats: ds.stats.clone(), trained_through, config_hash: cfg.hash() };
            let mp = meta_path(&out);
            write_json(&mp, &meta)?;
            let mut outputs = vec![out, mp];
            if let Some(h) = history {
                write_atomic(&h, |w| Ok(hist.write_csv(w)?))?;
                outputs.push(h);
            }
            if let Some(d) = dataset {
                write_atomic(&d, |w| Ok(crate::features::write_dataset(&ds, w)?))?;
                outputs.push(d);
            }
            RunContext { command: "train", cfg: &cfg, inputs: vec![input.display().to_string()], outputs }
                .finish(Some(&series.gap_report), Some(set.dropped.len()))
        }
        Command::Predict(args) => forecast_command("predict", &cfg, args, false),
        Command::Sensitivity(args) => forecast_command("sensitivity", &cfg, args, true),
        Command::Evaluate { model, input, out } => {
            let (spec, params, meta) = load_trained(&model)?;
            let series = read_series(&input, &cfg)?;
            let clock = cfg.clock(&series.region);
            let derived = derive_all(&series, cfg.features.eps_g, clock);
            let source = WindowSource { series: &series, derived: &derived, clock, holidays: &cfg.features.holidays };
            let mut ds = chronological_split(build_windows(&source).windows, cfg.features.split)?;
            ds.stats = meta.stats;
            let report = evaluate_with_baselines(&params, &spec, &ds, Split::Test, cfg.features.eps_g)?;
            emit_json(out.as_deref(), &report)?;
            RunContext {
                command: "evaluate",
                cfg: &cfg,
                inputs: vec![model.display().to_string(), input.display().to_string()],
                outputs: out.into_iter().collect(),
            }
            .finish(None, None)
        }
        Command::Nowcast { model, input, append, out, series_out } => {
            let (spec, params, meta) = load_trained(&model)?;
            let series = read_series(&input, &cfg)?;
            let clock = cfg.clock(&series.region);
            let f = File::open(&append).map_err(|e| CliError::Data(format!("{}: {e}", append.display())))?;
            let new = parse_csv(BufReader::new(f), &cfg.ingest.schema)?;
            let mut state = NowcastState {
                series,
                clock,
                policy: cfg.ingest.gap_policy,
                holidays: cfg.features.holidays.clone(),
                eps_g: cfg.features.eps_g,
                trained_through: meta.trained_through,
                staleness_days: cfg.nowcast.staleness_days,
            };
            let update = state.append(&new, None)?;
            let report = match &update.next_window {
                Some(w) => Some(ForecastReport::build(&params, &spec, &meta.stats, w, None, None, cfg.features.eps_g)?),
                None => None,
            };
            #[derive(Serialize)]
            struct NowcastReport {
                newest_complete_day: Option<NaiveDate>,
                new_complete_days: usize,
                retrain_due: bool,
                forecast: Option<ForecastReport>,
            }
            let body = NowcastReport {
                newest_complete_day: update.newest_complete_day,
                new_complete_days: update.new_complete_days,
                retrain_due: update.retrain_due,
                forecast: report,
            };
            if update.retrain_due {
                log::warn!("model is stale: trained through {}", meta.trained_through);
            }
            emit_json(out.as_deref(), &body)?;
            let mut outputs: Vec<PathBuf> = out.into_iter().collect();
            if let Some(s) = series_out {
                write_atomic(&s, |w| Ok(serialize_csv(&state.series.observations, w)?))?;
                outputs.push(s);
            }
            RunContext {
                command: "nowcast",
                cfg: &cfg,
                inputs: vec![model.display().to_string(), input.display().to_string(), append.display().to_string()],
                outputs,
            }
            .finish(Some(&state.series.gap_report), None)
        }
    }
}

fn forecast_command(command: &str, cfg: &RunConfig, args: ModelArgs, sensitivity_only: bool) -> Result<()> {
    let (spec, params, meta) = load_trained(&args.model)?;
    let series = read_series(&args.input, cfg)?;
    let clock = cfg.clock(&series.region);
    let derived = derive_all(&series, cfg.features.eps_g, clock);
    let source = WindowSource { series: &series, derived: &derived, clock, holidays: &cfg.features.holidays };
    let date = match args.date {
        Some(d) => d,
        None => newest_complete_day(&series, clock)
            .map(|d| d + Duration::days(1))
            .ok_or_else(|| CliError::Data("series has no complete day".into()))?,
    };
    let window = source.window(date, None, false).map_err(|r| CliError::Data(format!("no window for {date}: {r:?}")))?;
    let out = args.out.as_deref();
    if sensitivity_only {
        let s = sensitivity(&params, &spec, &meta.stats, &window, cfg.sensitivity.delta)?;
        emit(out, |w| {
            writeln!(w, "hour,sensitivity_t_per_mwh")?;
            for (h, v) in s.iter().enumerate() {
                if v.is_nan() {
                    writeln!(w, "{h},")?;
                } else {
                    writeln!(w, "{h},{v}")?;
                }
            }
            Ok(())
        })?;
    } else {
        // The hourly-mean baseline needs the training windows; rebuild them.
        let set = build_windows(&source);
        let hm = chronological_split(set.windows, cfg.features.split).ok().and_then(|ds| baseline_hourly_mean(ds.train()).ok());
        let report =
            ForecastReport::build(&params, &spec, &meta.stats, &window, hm.as_deref(), Some(cfg.sensitivity.delta), cfg.features.eps_g)?;
        match out {
            Some(p) if p.extension().is_some_and(|e| e == "json") => emit_json(out, &report)?,
            _ => emit(out, |w| Ok(report.write_csv(w)?))?,
        }
    }
    RunContext {
        command,
        cfg,
        inputs: vec![args.model.display().to_string(), args.input.display().to_string()],
        outputs: args.out.into_iter().collect(),
    }
    .finish(None, None)
}
