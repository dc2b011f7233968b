//! Experiment configuration, seeded runs, and the on-disk result bundle.
//!
//! A run directory holds `config.snapshot` (the validated TOML config with
//! every default spelled out), `summary.json`, `hist_timeavg.csv`,
//! `hist_snapshot.csv`, `mean_path.csv` and, on request, `events.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::format::{fmt17, Json};
use crate::mean_field::{
    pde_integrate, pde_window, wave_speed, write_diagnostics_csv, DensityField, Grid, PdeOptions, PdeSample,
    StationaryLaw, WaveProfile,
};
use crate::measures::{build_histogram, default_bins, ks_histogram, ols, wasserstein1_histogram, Histogram, TimeAverage};
use crate::model::{LengthSpec, RateSpec, SystemState};
use crate::sim::{simulate, Engine, EventCsvWriter, EventRecord, InitialCondition, MonotoneCheck, ObservationSchedule, Observer, SimConfig, SimSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthKind {
    Exponential,
    Deterministic,
}

impl LengthKind {
    pub fn spec(self) -> LengthSpec {
        match self {
            LengthKind::Exponential => LengthSpec::Exponential,
            LengthKind::Deterministic => LengthSpec::Deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramConfig {
    pub window: [f64; 2],
    pub bins: usize,
    pub snapshot_time: f64,
    /// Start of the time average.
    pub burn_in: f64,
}

fn rate_as_text<S: Serializer>(w: &RateSpec, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&w.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub n: usize,
    #[serde(serialize_with = "rate_as_text")]
    pub rate: RateSpec,
    pub length: LengthKind,
    pub horizon: f64,
    pub seed: u64,
    pub observations: usize,
    pub engine: Engine,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_cap: Option<u64>,
    pub record_events: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub histogram: HistogramConfig,
    pub initial: InitialCondition,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHistogram {
    window: Option<Vec<f64>>,
    bins: Option<i64>,
    snapshot_time: Option<f64>,
    burn_in: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<String>,
    n: Option<i64>,
    rate: Option<String>,
    length: Option<LengthKind>,
    horizon: Option<f64>,
    seed: Option<i64>,
    observations: Option<i64>,
    engine: Option<Engine>,
    event_cap: Option<i64>,
    record_events: Option<bool>,
    output: Option<PathBuf>,
    histogram: Option<RawHistogram>,
    initial: Option<InitialCondition>,
}

pub const DEFAULT_HORIZON: f64 = 1000.0;
pub const DEFAULT_OBSERVATIONS: usize = 1000;
pub const DEFAULT_WINDOW: [f64; 2] = [-10.0, 10.0];
pub const DEFAULT_SEED: u64 = 1;

/// First backquoted token of a parser message, which names the offending key.
fn key_in(message: &str) -> String {
    message.split('`').nth(1).unwrap_or("<document>").to_string()
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(key, "missing required key"))
}

fn positive(v: i64, key: &str) -> Result<usize> {
    if v < 1 {
        return Err(Error::config(key, format!("must be at least 1, got {v}")));
    }
    Ok(v as usize)
}

/// Parses and validates a TOML config, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(key_in(e.message()), e.message().to_string()))?;
    let scenario = required(raw.scenario, "scenario")?;
    let n = positive(required(raw.n, "n")?, "n")?;
    let rate: RateSpec = required(raw.rate, "rate")?
        .parse()
        .map_err(|e: Error| Error::config("rate", e.to_string()))?;
    let horizon = raw.horizon.unwrap_or(DEFAULT_HORIZON);
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::config("horizon", format!("must be finite and ≥ 0, got {horizon}")));
    }
    let seed = raw.seed.unwrap_or(DEFAULT_SEED as i64);
    if seed < 0 {
        return Err(Error::config("seed", format!("must be ≥ 0, got {seed}")));
    }
    let observations = positive(raw.observations.unwrap_or(DEFAULT_OBSERVATIONS as i64), "observations")?;
    let event_cap = match raw.event_cap {
        Some(c) if c < 1 => return Err(Error::config("event_cap", format!("must be at least 1, got {c}"))),
        c => c.map(|c| c as u64),
    };
    let h = raw.histogram.unwrap_or(RawHistogram {
        window: None,
        bins: None,
        snapshot_time: None,
        burn_in: None,
    });
    let window = match h.window {
        None => DEFAULT_WINDOW,
        Some(v) if v.len() == 2 && v[0] < v[1] && v.iter().all(|x| x.is_finite()) => [v[0], v[1]],
        Some(v) => return Err(Error::config("histogram.window", format!("need [a0, a1] with a0 < a1, got {v:?}"))),
    };
    let bins = match h.bins {
        None => default_bins(n),
        Some(b) => positive(b, "histogram.bins")?,
    };
    let snapshot_time = h.snapshot_time.unwrap_or(horizon / 2.0);
    if !(0.0..=horizon).contains(&snapshot_time) {
        return Err(Error::config("histogram.snapshot_time", format!("must lie in [0, {horizon}], got {snapshot_time}")));
    }
    let burn_in = h.burn_in.unwrap_or(0.0);
    if !(0.0..=horizon).contains(&burn_in) {
        return Err(Error::config("histogram.burn_in", format!("must lie in [0, {horizon}], got {burn_in}")));
    }
    let initial = raw.initial.unwrap_or(InitialCondition::Zero);
    if let InitialCondition::Explicit { positions } = &initial {
        if positions.len() != n {
            return Err(Error::config("initial.positions", format!("has {} entries but n = {n}", positions.len())));
        }
    }
    Ok(ExperimentConfig {
        scenario,
        n,
        rate,
        length: raw.length.unwrap_or(LengthKind::Exponential),
        horizon,
        seed: seed as u64,
        observations,
        engine: raw.engine.unwrap_or_default(),
        event_cap,
        record_events: raw.record_events.unwrap_or(false),
        output: raw.output,
        histogram: HistogramConfig {
            window,
            bins,
            snapshot_time,
            burn_in,
        },
        initial,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path)?)
}

impl ExperimentConfig {
    /// Canonical TOML; parsing it back gives an identical config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    fn sized(scenario: &str, rate: RateSpec, n: usize, horizon: f64) -> Self {
        ExperimentConfig {
            scenario: scenario.to_string(),
            n,
            rate,
            length: LengthKind::Exponential,
            horizon,
            seed: DEFAULT_SEED,
            observations: DEFAULT_OBSERVATIONS,
            engine: Engine::Auto,
            event_cap: None,
            record_events: false,
            output: None,
            histogram: HistogramConfig {
                window: DEFAULT_WINDOW,
                bins: default_bins(n),
                snapshot_time: horizon / 2.0,
                burn_in: 0.0,
            },
            initial: InitialCondition::Zero,
        }
    }
}

pub const PRESETS: [&str; 4] = ["fig4_6", "fig4_6_small", "fig7_9", "fig7_9_small"];

/// Exponential rate β = 1 (`fig4_6`) and step rate a = 2, b = 1 (`fig7_9`)
/// at n = 10⁴, T = 1000; the `_small` variants use n = 10³, T = 200.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let exp = || RateSpec::Exponential { beta: 1.0 };
    let step = || RateSpec::Step { a: 2.0, b: 1.0 };
    Ok(match name {
        "fig4_6" => ExperimentConfig::sized(name, exp(), 10_000, 1000.0),
        "fig4_6_small" => ExperimentConfig::sized(name, exp(), 1000, 200.0),
        "fig7_9" => ExperimentConfig::sized(name, step(), 10_000, 1000.0),
        "fig7_9_small" => ExperimentConfig::sized(name, step(), 1000, 200.0),
        _ => return Err(Error::config("scenario", format!("unknown preset `{name}`, expected one of {PRESETS:?}"))),
    })
}

/// OLS slope of the trailing `fraction` of (t, m) samples.
pub fn fit_speed(samples: &[(f64, f64)], fraction: f64) -> Result<(f64, f64)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Fit(format!("window fraction must be in (0, 1], got {fraction}")));
    }
    let start = ((samples.len() as f64) * (1.0 - fraction)).floor() as usize;
    let window = &samples[start.min(samples.len())..];
    if window.len() < 10 {
        return Err(Error::Fit(format!("need at least 10 samples in the fit window, got {}", window.len())));
    }
    if window.iter().all(|(t, _)| *t == window[0].0) {
        return Err(Error::Fit("all sample times coincide".into()));
    }
    ols(window)
}

/// Distances of the centered histograms to the mean-field stationary law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub ks_timeavg: f64,
    pub w1_timeavg: f64,
    pub ks_snapshot: f64,
    pub w1_snapshot: f64,
}

#[derive(Debug, Clone)]
pub struct RunBundle {
    pub config: ExperimentConfig,
    pub summary: SimSummary,
    pub time_avg: Histogram,
    pub snapshot: (f64, Histogram),
    pub mean_path: Vec<(f64, f64)>,
    pub speed_fit: Option<(f64, f64)>,
    pub wave_speed: Option<f64>,
    pub distances: Option<Distances>,
    pub monotone_violations: u64,
}

struct RunObserver<W: Write> {
    a0: f64,
    a1: f64,
    bins: usize,
    avg: TimeAverage,
    snapshot_time: f64,
    snapshot: Option<(f64, Histogram)>,
    mean_path: Vec<(f64, f64)>,
    monotone: MonotoneCheck,
    events: Option<EventCsvWriter<W>>,
}

impl<W: Write> Observer for RunObserver<W> {
    fn observe(&mut self, t: f64, state: &SystemState) -> Result<()> {
        let m = state.center_of_mass();
        let h = build_histogram(state.positions(), m, self.a0, self.a1, self.bins)?;
        if self.snapshot.is_none() && t >= self.snapshot_time {
            self.snapshot = Some((t, h.clone()));
        }
        self.avg.push(t, h)?;
        self.mean_path.push((t, m));
        self.monotone.observe(t, state)
    }

    fn on_event(&mut self, e: &EventRecord, state: &SystemState) -> Result<()> {
        self.monotone.on_event(e, state)?;
        match &mut self.events {
            Some(w) => w.on_event(e, state),
            None => Ok(()),
        }
    }
}

fn execute<W: Write>(config: &ExperimentConfig, events: Option<W>) -> Result<RunBundle> {
    let w = &config.rate;
    let z = config.length.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = config.initial.build(config.n, &mut rng)?;
    let [a0, a1] = config.histogram.window;
    let mut obs = RunObserver {
        a0,
        a1,
        bins: config.histogram.bins,
        avg: TimeAverage::new(config.histogram.burn_in),
        // Grid times are j·T/count; allow for rounding in that product.
        snapshot_time: config.histogram.snapshot_time - 1e-9 * config.horizon,
        snapshot: None,
        mean_path: Vec::new(),
        monotone: MonotoneCheck::default(),
        events: events.map(EventCsvWriter::new).transpose()?,
    };
    let sim_config = SimConfig {
        horizon: config.horizon,
        event_cap: config.event_cap,
        schedule: ObservationSchedule::Grid { count: config.observations },
        engine: config.engine,
    };
    let summary = simulate(&mut state, w, &z, &sim_config, &mut rng, &mut obs)?;
    let end = summary.final_time;
    if obs.mean_path.last().is_none_or(|(t, _)| *t < end) {
        obs.observe(end, &state)?;
    }
    let RunObserver {
        avg,
        snapshot,
        mean_path,
        monotone,
        events,
        ..
    } = obs;
    if let Some(w) = events {
        w.into_inner().flush()?;
    }
    let time_avg = avg.finish(end)?;
    let snapshot = snapshot.ok_or_else(|| Error::Numeric("no observation reached the snapshot time".into()))?;
    let speed_fit = fit_speed(&mean_path, 0.5).ok();
    let exact_law = config.length == LengthKind::Exponential && !w.is_constant();
    let wave = if exact_law { wave_speed(w).ok() } else { None };
    let distances = if exact_law {
        let law = StationaryLaw::for_rate(w)?;
        let cdf = |x: f64| law.cdf(x);
        Some(Distances {
            ks_timeavg: ks_histogram(&time_avg, &cdf),
            w1_timeavg: wasserstein1_histogram(&time_avg, &cdf, 1.0)?,
            ks_snapshot: ks_histogram(&snapshot.1, &cdf),
            w1_snapshot: wasserstein1_histogram(&snapshot.1, &cdf, 1.0)?,
        })
    } else {
        None
    };
    Ok(RunBundle {
        config: config.clone(),
        summary,
        time_avg,
        snapshot,
        mean_path,
        speed_fit,
        wave_speed: wave,
        distances,
        monotone_violations: monotone.violations,
    })
}

/// Runs in memory; `record_events` is ignored.
pub fn run_scenario(config: &ExperimentConfig) -> Result<RunBundle> {
    execute::<std::io::Sink>(config, None)
}

/// Runs and writes the bundle into `dir`, streaming events when requested.
pub fn run_scenario_to(config: &ExperimentConfig, dir: &Path) -> Result<RunBundle> {
    fs::create_dir_all(dir)?;
    let bundle = if config.record_events {
        execute(config, Some(BufWriter::new(File::create(dir.join("events.csv"))?)))?
    } else {
        execute::<std::io::Sink>(config, None)?
    };
    bundle.write(dir)?;
    Ok(bundle)
}

impl RunBundle {
    pub fn speed_relative_error(&self) -> Option<f64> {
        match (self.speed_fit, self.wave_speed) {
            (Some((slope, _)), Some(c)) => Some((slope - c).abs() / c),
            _ => None,
        }
    }

    pub fn summary_json(&self) -> Json {
        let cfg = &self.config;
        let d = self.distances;
        Json::obj()
            .with("scenario", cfg.scenario.as_str())
            .with("seed", cfg.seed)
            .with("n", cfg.n)
            .with("rate", cfg.rate.to_string())
            .with("length", format!("{:?}", cfg.length).to_lowercase())
            .with("horizon", cfg.horizon)
            .with("engine", serde_json::to_value(self.summary.engine).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .with("events", self.summary.events)
            .with("final_time", self.summary.final_time)
            .with("final_center", self.summary.final_center)
            .with("truncated", self.summary.truncated)
            .with("observations", self.mean_path.len())
            .with("bins", cfg.histogram.bins)
            .with("window", Json::Arr(vec![cfg.histogram.window[0].into(), cfg.histogram.window[1].into()]))
            .with("snapshot_time", self.snapshot.0)
            .with("speed_fit", self.speed_fit.map(|(s, _)| s))
            .with("speed_fit_stderr", self.speed_fit.map(|(_, e)| e))
            .with("wave_speed", self.wave_speed)
            .with("speed_relative_error", self.speed_relative_error())
            .with("ks_timeavg", d.map(|d| d.ks_timeavg))
            .with("w1_timeavg", d.map(|d| d.w1_timeavg))
            .with("ks_snapshot", d.map(|d| d.ks_snapshot))
            .with("w1_snapshot", d.map(|d| d.w1_snapshot))
            .with("outside_fraction_timeavg", self.time_avg.outside_fraction())
            .with("monotone_violations", self.monotone_violations)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.config.save(&dir.join("config.snapshot"))?;
        fs::write(dir.join("summary.json"), self.summary_json().render())?;
        self.time_avg.write_csv(BufWriter::new(File::create(dir.join("hist_timeavg.csv"))?))?;
        self.snapshot.1.write_csv(BufWriter::new(File::create(dir.join("hist_snapshot.csv"))?))?;
        let mut out = BufWriter::new(File::create(dir.join("mean_path.csv"))?);
        writeln!(out, "t,mean")?;
        for (t, m) in &self.mean_path {
            writeln!(out, "{},{}", fmt17(*t), fmt17(*m))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Initial density for the mean-field integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdeInitial {
    Gaussian { mean: f64, sd: f64 },
    /// The centered traveling profile.
    Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub rate: String,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: f64,
    #[serde(default = "default_pde_initial")]
    pub initial: PdeInitial,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_h() -> f64 {
    0.01
}
fn default_dt() -> f64 {
    1e-3
}
fn default_sample_every() -> f64 {
    0.5
}
fn default_pde_initial() -> PdeInitial {
    PdeInitial::Gaussian { mean: 0.0, sd: 0.1 }
}

pub fn parse_pde_config(text: &str) -> Result<PdeConfig> {
    let cfg: PdeConfig = toml::from_str(text).map_err(|e| Error::config(key_in(e.message()), e.message().to_string()))?;
    cfg.rate.parse::<RateSpec>().map_err(|e| Error::config("rate", e.to_string()))?;
    if !(cfg.h > 0.0) {
        return Err(Error::config("h", "must be positive"));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::config("dt", "must be positive"));
    }
    if !(cfg.duration >= 0.0) {
        return Err(Error::config("duration", "must be ≥ 0"));
    }
    if !(cfg.sample_every > 0.0) {
        return Err(Error::config("sample_every", "must be positive"));
    }
    Ok(cfg)
}

/// Integrates on a co-moving window, recording W₁ to the stationary law.
pub fn run_pde(cfg: &PdeConfig) -> Result<(DensityField, Vec<PdeSample>)> {
    let w: RateSpec = cfg.rate.parse()?;
    let (left, right) = pde_window(&w, cfg.dt, cfg.h)?;
    let h = cfg.h;
    let grid = Grid::new((left / h).ceil() * h, (right / h).floor() * h, h)?;
    let rho0 = match cfg.initial {
        PdeInitial::Gaussian { mean, sd } => {
            let g = Grid { lo: grid.lo + mean, ..grid };
            DensityField::gaussian(g, mean, sd)
        }
        PdeInitial::Profile => {
            let p = WaveProfile::traveling(&w)?;
            let mut f = DensityField::from_fn(grid, |x| p.density(x));
            f.normalize();
            f
        }
    };
    let law = StationaryLaw::for_rate(&w)?;
    let cdf = |x: f64| law.cdf(x);
    let opts = PdeOptions {
        sample_every: cfg.sample_every,
        comoving_offset: Some(left),
        reference: Some(&cdf),
    };
    pde_integrate(&rho0, &w, &LengthSpec::Exponential, cfg.duration, cfg.dt, &opts)
}

pub fn run_pde_to(cfg: &PdeConfig, dir: &Path) -> Result<(DensityField, Vec<PdeSample>)> {
    let (rho, samples) = run_pde(cfg)?;
    fs::create_dir_all(dir)?;
    write_diagnostics_csv(&samples, BufWriter::new(File::create(dir.join("pde_diagnostics.csv"))?))?;
    rho.write_csv(BufWriter::new(File::create(dir.join("density_final.csv"))?))?;
    Ok((rho, samples))
}
