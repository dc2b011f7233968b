//! Exact event-driven simulation of the n-particle jump process.
//!
//! Three samplers produce the same law:
//!
//! * [`Engine::Direct`] recomputes every rate wᵢ = w(xᵢ − m) at each event,
//!   draws the holding time from the total and scans for the jumping index.
//! * [`Engine::ExponentialTree`] exploits w(x − m) = e^{−βx}·e^{βm}: the
//!   selection weights e^{−βxᵢ} do not depend on m, so they live in a sum
//!   tree and only the jumping particle's leaf changes per event.
//! * [`Engine::Thinning`] proposes at the constant rate n·sup w with a
//!   uniformly chosen particle and accepts with probability w(xᵢ − m)/sup w.
//!
//! [`simulate_coupled`] runs the thinning construction with both layers kept:
//! the dominating layer takes every proposal, the base layer only accepted ones.

use std::io::Write;

use rand::{Rng, RngCore};
use rand_distr::{Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::model::{LengthSpec, RateSpec, SystemState};

/// One jump of the process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub particle_index: usize,
    pub jump_length: f64,
    pub new_center: f64,
}

/// Σᵢ w(xᵢ − m).
pub fn total_rate(state: &SystemState, w: &RateSpec) -> Result<f64> {
    let m = state.center_of_mass();
    let r: f64 = state.positions().iter().map(|&x| w.value(x - m)).sum();
    if !r.is_finite() {
        return Err(Error::Numeric(format!("total rate is {r}")));
    }
    Ok(r)
}

/// Performs one event with the direct competing-exponentials scheme.
pub fn step<R: RngCore>(state: &mut SystemState, w: &RateSpec, z: &LengthSpec, rng: &mut R) -> Result<EventRecord> {
    let mut rates = Vec::with_capacity(state.len());
    let (dt, i) = direct_draw(state, w, rng, &mut rates)?;
    let dz = z.sample(rng)?;
    let t = state.time() + dt;
    Ok(apply(state, t, i, dz))
}

fn direct_draw<R: RngCore>(state: &SystemState, w: &RateSpec, rng: &mut R, rates: &mut Vec<f64>) -> Result<(f64, usize)> {
    let m = state.center_of_mass();
    rates.clear();
    rates.extend(state.positions().iter().map(|&x| w.value(x - m)));
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Stall {
            time: state.time(),
            rate: total,
        });
    }
    let dt = rng.sample::<f64, _>(Exp1) / total;
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut pick = rates.len() - 1;
    for (i, r) in rates.iter().enumerate() {
        cum += r;
        if u <= cum {
            pick = i;
            break;
        }
    }
    Ok((dt, pick))
}

fn apply(state: &mut SystemState, t: f64, i: usize, dz: f64) -> EventRecord {
    state.advance_to(t);
    state.jump(i, dz);
    EventRecord {
        time: t,
        particle_index: i,
        jump_length: dz,
        new_center: state.center_of_mass(),
    }
}

/// Sampler choice; all are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Tree for the exponential family, thinning for bounded rates.
    #[default]
    Auto,
    Direct,
    ExponentialTree,
    Thinning,
}

/// When the observer is shown the state.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationSchedule {
    /// `count` equispaced times j·T/count, j = 0..count, on [0, T).
    Grid { count: usize },
    /// Every `interval` time units starting at 0 (for open-ended runs).
    Every { interval: f64 },
    /// Explicit ascending times.
    Times(Vec<f64>),
}

impl ObservationSchedule {
    fn time_at(&self, j: usize, horizon: f64) -> Option<f64> {
        match self {
            ObservationSchedule::Grid { count } => {
                if horizon == 0.0 {
                    (j == 0).then_some(0.0)
                } else {
                    (j < *count).then(|| horizon * j as f64 / *count as f64)
                }
            }
            ObservationSchedule::Every { interval } => Some(*interval * j as f64),
            ObservationSchedule::Times(ts) => ts.get(j).copied(),
        }
    }
}

/// Run parameters for [`simulate`].
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub horizon: f64,
    pub event_cap: Option<u64>,
    pub schedule: ObservationSchedule,
    pub engine: Engine,
}

impl SimConfig {
    pub fn new(horizon: f64) -> Self {
        SimConfig {
            horizon,
            event_cap: None,
            schedule: ObservationSchedule::Grid { count: 1000 },
            engine: Engine::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub events: u64,
    pub final_time: f64,
    pub final_center: f64,
    /// The event cap stopped the run before the horizon.
    pub truncated: bool,
    pub engine: Engine,
}

/// Callbacks invoked by [`simulate`].
pub trait Observer {
    /// Called at each scheduled time with the right-continuous state.
    fn observe(&mut self, _t: f64, _state: &SystemState) -> Result<()> {
        Ok(())
    }
    /// Called after every jump, with `state` already updated.
    fn on_event(&mut self, _event: &EventRecord, _state: &SystemState) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Adapts a closure over (time, state) into an [`Observer`].
pub struct ObserveFn<F>(pub F);

impl<F: FnMut(f64, &SystemState)> Observer for ObserveFn<F> {
    fn observe(&mut self, t: f64, state: &SystemState) -> Result<()> {
        (self.0)(t, state);
        Ok(())
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn observe(&mut self, t: f64, state: &SystemState) -> Result<()> {
        self.0.observe(t, state)?;
        self.1.observe(t, state)
    }
    fn on_event(&mut self, e: &EventRecord, state: &SystemState) -> Result<()> {
        self.0.on_event(e, state)?;
        self.1.on_event(e, state)
    }
}

/// Binary sum tree over non-negative weights.
#[derive(Debug, Clone)]
struct SumTree {
    size: usize,
    n: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(weights: &[f64]) -> Self {
        let size = weights.len().next_power_of_two();
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + weights.len()].copy_from_slice(weights);
        for k in (1..size).rev() {
            nodes[k] = nodes[2 * k] + nodes[2 * k + 1];
        }
        SumTree {
            size,
            n: weights.len(),
            nodes,
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut k = self.size + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Index whose cumulative interval contains `u` ∈ [0, total).
    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let left = 2 * k;
            if u <= self.nodes[left] {
                k = left;
            } else {
                u -= self.nodes[left];
                k = left + 1;
            }
        }
        (k - self.size).min(self.n - 1)
    }
}

// Rebuild the exponential tree when β·|m − reference| exceeds this.
const REBASE_SPAN: f64 = 30.0;

enum Sampler {
    Direct { rates: Vec<f64> },
    Tree { beta: f64, reference: f64, tree: SumTree },
    Thinning { bound: f64 },
}

impl Sampler {
    fn new(engine: Engine, state: &SystemState, w: &RateSpec) -> Result<(Self, Engine)> {
        let resolved = match (engine, w) {
            (Engine::Auto, RateSpec::Exponential { .. }) => Engine::ExponentialTree,
            (Engine::Auto, _) if w.bound().is_some() => Engine::Thinning,
            (Engine::Auto, _) => Engine::Direct,
            (e, _) => e,
        };
        let sampler = match resolved {
            Engine::Direct | Engine::Auto => Sampler::Direct { rates: Vec::new() },
            Engine::ExponentialTree => {
                let RateSpec::Exponential { beta } = *w else {
                    return Err(Error::Unsupported(format!("exponential tree sampler needs an exponential rate, got {w}")));
                };
                let reference = state.center_of_mass();
                Sampler::Tree {
                    beta,
                    reference,
                    tree: Self::exp_tree(state, beta, reference),
                }
            }
            Engine::Thinning => {
                let bound = w
                    .bound()
                    .ok_or_else(|| Error::Unsupported(format!("thinning needs a bounded rate, got {w}")))?;
                Sampler::Thinning { bound }
            }
        };
        Ok((sampler, resolved))
    }

    fn exp_tree(state: &SystemState, beta: f64, reference: f64) -> SumTree {
        let weights: Vec<f64> = state.positions().iter().map(|&x| (-beta * (x - reference)).exp()).collect();
        SumTree::new(&weights)
    }

    /// Next accepted event strictly before `horizon`, as (time, index).
    fn next<R: RngCore>(&mut self, state: &SystemState, w: &RateSpec, horizon: f64, rng: &mut R) -> Result<Option<(f64, usize)>> {
        match self {
            Sampler::Direct { rates } => {
                let (dt, i) = direct_draw(state, w, rng, rates)?;
                let t = state.time() + dt;
                Ok((t < horizon).then_some((t, i)))
            }
            Sampler::Tree { beta, reference, tree } => {
                let m = state.center_of_mass();
                if (*beta * (m - *reference)).abs() > REBASE_SPAN {
                    *reference = m;
                    *tree = Self::exp_tree(state, *beta, m);
                }
                let weight_sum = tree.total();
                let total = weight_sum * (*beta * (m - *reference)).exp();
                if !(total > 0.0) || !total.is_finite() {
                    return Err(Error::Stall {
                        time: state.time(),
                        rate: total,
                    });
                }
                let t = state.time() + rng.sample::<f64, _>(Exp1) / total;
                let i = tree.find(rng.random::<f64>() * weight_sum);
                Ok((t < horizon).then_some((t, i)))
            }
            Sampler::Thinning { bound } => {
                let n = state.len();
                let proposal_rate = n as f64 * *bound;
                let m = state.center_of_mass();
                let mut t = state.time();
                loop {
                    t += rng.sample::<f64, _>(Exp1) / proposal_rate;
                    if t >= horizon {
                        return Ok(None);
                    }
                    let i = rng.random_range(0..n);
                    let accept = w.value(state.positions()[i] - m) / *bound;
                    if rng.random::<f64>() < accept {
                        return Ok(Some((t, i)));
                    }
                }
            }
        }
    }

    fn after_jump(&mut self, state: &SystemState, i: usize) {
        if let Sampler::Tree { beta, reference, tree } = self {
            tree.set(i, (-*beta * (state.positions()[i] - *reference)).exp());
        }
    }
}

/// Drives the process to `config.horizon` (or the event cap), calling the
/// observer on the configured schedule and after every event.
pub fn simulate<R: RngCore, O: Observer + ?Sized>(
    state: &mut SystemState,
    w: &RateSpec,
    z: &LengthSpec,
    config: &SimConfig,
    rng: &mut R,
    observer: &mut O,
) -> Result<SimSummary> {
    if !(config.horizon >= 0.0) {
        return Err(Error::Domain(format!("horizon must be ≥ 0, got {}", config.horizon)));
    }
    let (mut sampler, engine) = Sampler::new(config.engine, state, w)?;
    let horizon = config.horizon;
    let start = state.time();
    let mut next_obs = 0usize;
    let mut events = 0u64;

    let observe_until = |t_limit: f64, inclusive: bool, state: &SystemState, observer: &mut O, next_obs: &mut usize| -> Result<()> {
        while let Some(t_obs) = config.schedule.time_at(*next_obs, horizon) {
            let t_abs = start + t_obs;
            let due = if inclusive { t_abs <= t_limit } else { t_abs < t_limit };
            if !due || t_obs > horizon {
                break;
            }
            observer.observe(t_abs, state)?;
            *next_obs += 1;
        }
        Ok(())
    };

    let mut truncated = false;
    loop {
        if config.event_cap.is_some_and(|cap| events >= cap) {
            truncated = horizon > 0.0;
            break;
        }
        let Some((t, i)) = sampler.next(state, w, start + horizon, rng)? else {
            observe_until(start + horizon, true, state, observer, &mut next_obs)?;
            state.advance_to(start + horizon);
            break;
        };
        observe_until(t, false, state, observer, &mut next_obs)?;
        let dz = z.sample(rng)?;
        let event = apply(state, t, i, dz);
        sampler.after_jump(state, i);
        events += 1;
        observer.on_event(&event, state)?;
    }
    if horizon == 0.0 && next_obs == 0 {
        observer.observe(start, state)?;
    }
    Ok(SimSummary {
        events,
        final_time: state.time(),
        final_center: state.center_of_mass(),
        truncated,
        engine,
    })
}

/// Initial particle configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Every particle at 0.
    Zero,
    /// I.i.d. normal positions.
    Normal { mean: f64, sd: f64 },
    /// I.i.d. uniform positions on [lo, hi).
    Uniform { lo: f64, hi: f64 },
    Explicit { positions: Vec<f64> },
}

impl InitialCondition {
    pub fn build<R: RngCore>(&self, n: usize, rng: &mut R) -> Result<SystemState> {
        let positions = match self {
            InitialCondition::Zero => vec![0.0; n],
            InitialCondition::Normal { mean, sd } => {
                let law = Normal::new(*mean, *sd).map_err(|e| Error::Model(e.to_string()))?;
                (0..n).map(|_| rng.sample(law)).collect()
            }
            InitialCondition::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::Model(format!("uniform initial law needs lo < hi, got [{lo}, {hi})")));
                }
                (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
            }
            InitialCondition::Explicit { positions } => {
                if positions.len() != n {
                    return Err(Error::Model(format!("explicit initial list has {} entries, n = {n}", positions.len())));
                }
                positions.clone()
            }
        };
        SystemState::new(positions)
    }
}

/// Initial state, every event, and the time the trajectory is valid up to.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub initial: Vec<f64>,
    pub start_time: f64,
    pub events: Vec<EventRecord>,
    pub end_time: f64,
}

impl Trajectory {
    /// Simulates and records every event.
    pub fn record<R: RngCore>(state: &mut SystemState, w: &RateSpec, z: &LengthSpec, config: &SimConfig, rng: &mut R) -> Result<(Self, SimSummary)> {
        struct Recorder(Vec<EventRecord>);
        impl Observer for Recorder {
            fn on_event(&mut self, e: &EventRecord, _: &SystemState) -> Result<()> {
                self.0.push(*e);
                Ok(())
            }
        }
        let initial = state.positions().to_vec();
        let start_time = state.time();
        let mut rec = Recorder(Vec::new());
        let summary = simulate(state, w, z, config, rng, &mut rec)?;
        Ok((
            Trajectory {
                initial,
                start_time,
                events: rec.0,
                end_time: summary.final_time,
            },
            summary,
        ))
    }
}

/// Streams events as `time,particle_index,jump_length,center_of_mass`.
pub struct EventCsvWriter<W: Write> {
    out: W,
}

impl<W: Write> EventCsvWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "time,particle_index,jump_length,center_of_mass")?;
        Ok(EventCsvWriter { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Observer for EventCsvWriter<W> {
    fn on_event(&mut self, e: &EventRecord, _: &SystemState) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{}",
            fmt17(e.time),
            e.particle_index,
            fmt17(e.jump_length),
            fmt17(e.new_center)
        )?;
        Ok(())
    }
}

/// Counts coordinates that moved backwards between observations or events.
#[derive(Debug, Default)]
pub struct MonotoneCheck {
    last: Vec<f64>,
    last_center: f64,
    pub violations: u64,
}

impl Observer for MonotoneCheck {
    fn observe(&mut self, _t: f64, state: &SystemState) -> Result<()> {
        let m = state.center_of_mass();
        if !self.last.is_empty() {
            self.violations += self.last.iter().zip(state.positions()).filter(|(a, b)| b < a).count() as u64;
            if m < self.last_center - 1e-9 * m.abs().max(1.0) {
                self.violations += 1;
            }
        }
        self.last.clear();
        self.last.extend_from_slice(state.positions());
        self.last_center = m;
        Ok(())
    }

    fn on_event(&mut self, e: &EventRecord, _: &SystemState) -> Result<()> {
        if e.jump_length < 0.0 {
            self.violations += 1;
        }
        Ok(())
    }
}

/// Outcome of a coupled (base, dominating) run.
#[derive(Debug, Clone)]
pub struct CoupledReport {
    pub proposals: u64,
    pub accepted: u64,
    /// Events where some x̃ᵢ < xᵢ.
    pub position_violations: u64,
    /// Proposals where the base increment exceeded the dominating one.
    pub increment_violations: u64,
    pub base: SystemState,
    pub dominating: SystemState,
}

impl CoupledReport {
    pub fn acceptance_fraction(&self) -> f64 {
        self.accepted as f64 / self.proposals.max(1) as f64
    }

    pub fn violations(&self) -> u64 {
        self.position_violations + self.increment_violations
    }
}

/// The dominating coupled system: every particle of the dominating layer
/// jumps at rate `sup w`; each proposal moves the base particle by the same
/// length with probability w(xᵢ − m)/sup w. Both layers are checked at
/// every proposal epoch.
pub fn simulate_coupled<R: RngCore>(
    initial: &SystemState,
    w: &RateSpec,
    z: &LengthSpec,
    proposals: u64,
    rng: &mut R,
) -> Result<CoupledReport> {
    let bound = w
        .bound()
        .ok_or_else(|| Error::Unsupported(format!("coupling needs a bounded rate, got {w}")))?;
    let mut base = initial.clone();
    let mut dom = initial.clone();
    let n = base.len();
    let rate = n as f64 * bound;
    let mut t = base.time();
    let mut report = CoupledReport {
        proposals: 0,
        accepted: 0,
        position_violations: 0,
        increment_violations: 0,
        base: base.clone(),
        dominating: dom.clone(),
    };
    for _ in 0..proposals {
        t += rng.sample::<f64, _>(Exp1) / rate;
        let i = rng.random_range(0..n);
        let dz = z.sample(rng)?;
        let accept = w.value(base.positions()[i] - base.center_of_mass()) / bound;
        dom.advance_to(t);
        dom.jump(i, dz);
        base.advance_to(t);
        let base_increment = if rng.random::<f64>() < accept {
            base.jump(i, dz);
            report.accepted += 1;
            dz
        } else {
            0.0
        };
        report.proposals += 1;
        if dom.positions()[i] < base.positions()[i] {
            report.position_violations += 1;
        }
        // Increments over any interval are sums of these per-proposal ones.
        if base_increment > dz {
            report.increment_violations += 1;
        }
    }
    report.position_violations += dom
        .positions()
        .iter()
        .zip(base.positions())
        .filter(|(d, b)| d < b)
        .count() as u64;
    report.base = base;
    report.dominating = dom;
    Ok(report)
}
