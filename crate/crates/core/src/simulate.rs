//! Trajectory simulation and expected departure counts.
//!
//! Replication `r` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `r`. Holding times are `Exp(1)/q` and the target is chosen by inverting
//! the cumulative rates in the order of [`JointModel::for_each_transition`].

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{JointModel, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state {state} has no outgoing transitions")]
    ZeroExitRate { state: State },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Time(f64),
    Jumps(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon: Horizon,
    pub replications: usize,
    /// Fraction of the horizon discarded before counting.
    pub warmup: f64,
    pub initial: State,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.replications == 0 {
            return Err(SimError::InvalidConfig(
                "replications must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(SimError::InvalidConfig(format!(
                "warmup {} is outside [0, 1)",
                self.warmup
            )));
        }
        match self.horizon {
            Horizon::Time(t) if !(t > 0.0 && t.is_finite()) => Err(SimError::InvalidConfig(
                format!("time horizon {t} must be positive"),
            )),
            Horizon::Jumps(0) => Err(SimError::InvalidConfig(
                "jump horizon must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Departure,
    Env,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Departure => "departure",
            EventKind::Env => "env",
        }
    }

    fn classify(from: State, to: State) -> Self {
        match to.level.cmp(&from.level) {
            std::cmp::Ordering::Greater => EventKind::Arrival,
            std::cmp::Ordering::Less => EventKind::Departure,
            std::cmp::Ordering::Equal => EventKind::Env,
        }
    }
}

/// Counts over the measured window of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationSummary {
    pub departures: u64,
    pub arrivals: u64,
    pub jumps: u64,
    pub elapsed: f64,
    pub final_state: State,
}

impl ReplicationSummary {
    pub fn throughput(&self) -> f64 {
        self.departures as f64 / self.elapsed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputEstimate {
    pub mean: f64,
    /// Student-t 95% half-width; infinite for a single replication.
    pub half_width: f64,
    pub per_replication: Vec<f64>,
}

impl ThroughputEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let r = samples.len();
        let mean = samples.iter().sum::<f64>() / r as f64;
        let half_width = if r < 2 {
            f64::INFINITY
        } else {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (r - 1) as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975);
            t * (var / r as f64).sqrt()
        };
        Self {
            mean,
            half_width,
            per_replication: samples,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.half_width
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.half_width, self.mean + self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub estimate: ThroughputEstimate,
    pub replications: Vec<ReplicationSummary>,
}

pub fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

struct Stepper<'a> {
    model: &'a JointModel,
    targets: Vec<(State, f64)>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a JointModel) -> Self {
        Self {
            model,
            targets: Vec::new(),
        }
    }

    /// Holding time and next state.
    fn step(&mut self, state: State, rng: &mut ChaCha8Rng) -> Result<(f64, State), SimError> {
        self.targets.clear();
        let mut total = 0.0;
        self.model.for_each_transition(state, None, |to, rate| {
            if rate > 0.0 {
                self.targets.push((to, rate));
                total += rate;
            }
        });
        if !(total > 0.0) {
            return Err(SimError::ZeroExitRate { state });
        }
        let hold: f64 = rng.sample::<f64, _>(Exp1) / total;
        let mut u = rng.random::<f64>() * total;
        let mut next = self.targets[self.targets.len() - 1].0;
        for &(to, rate) in &self.targets {
            if u < rate {
                next = to;
                break;
            }
            u -= rate;
        }
        Ok((hold, next))
    }
}

fn run_replication(
    model: &JointModel,
    config: &SimConfig,
    replication: usize,
    mut log: impl FnMut(f64, State, EventKind),
) -> Result<ReplicationSummary, SimError> {
    let mut rng = replication_rng(config.seed, replication);
    let mut stepper = Stepper::new(model);
    let mut state = config.initial;
    let mut time = 0.0;
    let mut jumps: u64 = 0;
    let mut summary = ReplicationSummary {
        departures: 0,
        arrivals: 0,
        jumps: 0,
        elapsed: 0.0,
        final_state: state,
    };
    match config.horizon {
        Horizon::Time(end) => {
            let start = config.warmup * end;
            loop {
                let (hold, next) = stepper.step(state, &mut rng)?;
                if time + hold > end {
                    break;
                }
                time += hold;
                let kind = EventKind::classify(state, next);
                state = next;
                log(time, state, kind);
                if time >= start {
                    summary.jumps += 1;
                    match kind {
                        EventKind::Departure => summary.departures += 1,
                        EventKind::Arrival => summary.arrivals += 1,
                        EventKind::Env => {}
                    }
                }
            }
            summary.elapsed = end - start;
        }
        Horizon::Jumps(total) => {
            let skip = (config.warmup * total as f64).floor() as u64;
            let mut start_time = 0.0;
            while jumps < total {
                let (hold, next) = stepper.step(state, &mut rng)?;
                time += hold;
                jumps += 1;
                let kind = EventKind::classify(state, next);
                state = next;
                log(time, state, kind);
                if jumps == skip {
                    start_time = time;
                }
                if jumps > skip {
                    summary.jumps += 1;
                    match kind {
                        EventKind::Departure => summary.departures += 1,
                        EventKind::Arrival => summary.arrivals += 1,
                        EventKind::Env => {}
                    }
                }
            }
            summary.elapsed = time - start_time;
        }
    }
    summary.final_state = state;
    Ok(summary)
}

/// Estimate the long-run departure rate from independent replications.
pub fn simulate(model: &JointModel, config: &SimConfig) -> Result<SimulationResult, SimError> {
    config.validate()?;
    let replications = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(model, config, r, |_, _, _| {}))
        .collect::<Result<Vec<_>, _>>()?;
    let estimate =
        ThroughputEstimate::from_samples(replications.iter().map(|s| s.throughput()).collect());
    Ok(SimulationResult {
        estimate,
        replications,
    })
}

/// Event log of one replication as CSV `time,n,k,event`, starting with the
/// initial state tagged `start`.
pub fn trace<W: io::Write>(
    model: &JointModel,
    config: &SimConfig,
    replication: usize,
    out: W,
) -> Result<ReplicationSummary, TraceError> {
    config.validate()?;
    let labels = model.env().labels();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "n", "k", "event"])?;
    w.write_record([
        "0".to_string(),
        config.initial.level.to_string(),
        labels[config.initial.env].clone(),
        "start".to_string(),
    ])?;
    let mut failure = None;
    let summary = run_replication(model, config, replication, |t, s, kind| {
        if failure.is_none() {
            if let Err(e) = w.write_record([
                t.to_string(),
                s.level.to_string(),
                labels[s.env].clone(),
                kind.name().into(),
            ]) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    w.flush()?;
    Ok(summary)
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Expected departures within `j` jumps of the embedded jump chain of the
/// model truncated at `cap`, for `j = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepartureValueTable {
    pub cap: usize,
    pub env_size: usize,
    pub horizon: usize,
    layers: Vec<Vec<f64>>,
}

impl DepartureValueTable {
    /// Table with a single layer, for checking hand-made values.
    pub fn from_values(cap: usize, env_size: usize, horizon: usize, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            (cap + 1) * env_size,
            "values must cover the rectangle"
        );
        Self {
            cap,
            env_size,
            horizon,
            layers: vec![values],
        }
    }

    /// `v_horizon(state)`.
    pub fn value(&self, state: State) -> f64 {
        self.layers.last().expect("at least one layer")[state.level * self.env_size + state.env]
    }

    /// `v_j(state)` when intermediate layers were kept.
    pub fn value_at(&self, j: usize, state: State) -> Option<f64> {
        let offset = self.horizon + 1 - self.layers.len();
        j.checked_sub(offset)
            .and_then(|i| self.layers.get(i))
            .map(|l| l[state.level * self.env_size + state.env])
    }

    /// States from which the cap can be reached within the horizon.
    pub fn boundary_affected(&self, state: State) -> bool {
        state.level + self.horizon > self.cap
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..=self.cap).flat_map(move |n| (0..self.env_size).map(move |k| State::new(n, k)))
    }
}

pub fn departure_values(model: &JointModel, cap: usize, horizon: usize) -> DepartureValueTable {
    let env_size = model.env_size();
    let size = (cap + 1) * env_size;
    let mut chain: Vec<Vec<(usize, f64, bool)>> = Vec::with_capacity(size);
    for i in 0..size {
        let from = State::new(i / env_size, i % env_size);
        let total = model.exit_rate(from, Some(cap));
        let mut row = Vec::new();
        if total > 0.0 {
            model.for_each_transition(from, Some(cap), |to, rate| {
                row.push((
                    to.level * env_size + to.env,
                    rate / total,
                    to.level < from.level,
                ));
            });
        } else {
            row.push((i, 1.0, false));
        }
        chain.push(row);
    }
    let mut layers = vec![vec![0.0; size]];
    for j in 0..horizon {
        let prev = &layers[j];
        let next = chain
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(to, p, dep)| p * (if dep { 1.0 } else { 0.0 } + prev[to]))
                    .sum()
            })
            .collect();
        layers.push(next);
    }
    DepartureValueTable {
        cap,
        env_size,
        horizon,
        layers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotoneViolation {
    pub lower: State,
    pub upper: State,
    /// `v(lower) − v(upper) > 0`.
    pub margin: f64,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotoneReport {
    /// No violation away from the truncation boundary.
    pub isotone: bool,
    pub violations: Vec<IsotoneViolation>,
}

/// Check the product order on the covering pairs `(m,k) ≤ (m+1,k)` and
/// `(m,k) ≤ (m,k+1)`.
pub fn isotone_check(table: &DepartureValueTable) -> IsotoneReport {
    let mut violations = Vec::new();
    for lower in table.states() {
        let mut covers = Vec::with_capacity(2);
        if lower.level < table.cap {
            covers.push(State::new(lower.level + 1, lower.env));
        }
        if lower.env + 1 < table.env_size {
            covers.push(State::new(lower.level, lower.env + 1));
        }
        for upper in covers {
            let margin = table.value(lower) - table.value(upper);
            if margin > 0.0 {
                violations.push(IsotoneViolation {
                    lower,
                    upper,
                    margin,
                    boundary: table.boundary_affected(lower) || table.boundary_affected(upper),
                });
            }
        }
    }
    IsotoneReport {
        isotone: violations.iter().all(|v| v.boundary),
        violations,
    }
}
