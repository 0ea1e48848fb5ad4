//! Ergodicity certificates for non-separable models.
//!
//! A certificate combines a Lyapunov function `L̃` for the isolated queue with
//! the mean absorption times `τ_n` of the environment in the blocked set:
//!
//! ```text
//! L(n,k) = L̃(n) + 1{k ∈ K_B}·c_n·τ_n(k),   c_n = (ε̃/4)·ĉ_n.
//! ```
//!
//! Every ingredient is periodic beyond the merged tail start, so the
//! representatives `0..N0*+p*` decide the infimum of `ĉ_n` exactly and the
//! drift is spot-checked up to level `N0* + 2p* + 2`.

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::level::Tail;
use crate::linalg::absorption_times;
use crate::model::{JointModel, State};
use crate::separability::queue_marginal;

/// Allowed slack in the drift inequality.
pub const DRIFT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LyapunovKind {
    LinearDrift,
    HittingTime,
}

impl LyapunovKind {
    pub fn name(self) -> &'static str {
        match self {
            LyapunovKind::LinearDrift => "linear_drift",
            LyapunovKind::HittingTime => "hitting_time",
        }
    }
}

impl fmt::Display for LyapunovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LyapunovKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear_drift" => Ok(LyapunovKind::LinearDrift),
            "hitting_time" => Ok(LyapunovKind::HittingTime),
            other => Err(format!("unknown Lyapunov kind `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicityError {
    #[error("blocked states {states:?} cannot leave the blocked set at level {level}")]
    SingularSystem { level: usize, states: Vec<usize> },
    #[error("no working state can enter the blocked set at level {level}")]
    BothBranchesZero { level: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NecessaryCheck {
    pub passes: bool,
    pub tail_ratio: f64,
}

/// The isolated queue must be ergodic for the joint process to be.
pub fn check_necessary(model: &JointModel) -> NecessaryCheck {
    match queue_marginal(model) {
        Ok(q) => NecessaryCheck {
            passes: q.summable,
            tail_ratio: q.tail_ratio,
        },
        Err(_) => NecessaryCheck {
            passes: false,
            tail_ratio: f64::NAN,
        },
    }
}

/// Mean time for the environment to leave `K_B` at a frozen level.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionTable {
    pub level: usize,
    /// Indexed by environment state; zero on `K_W`.
    pub tau: Vec<f64>,
    /// Worst residual of the first-entrance equations over `K_B`.
    pub residual: f64,
}

pub fn solve_tau(model: &JointModel, n: usize) -> Result<AbsorptionTable, ErgodicityError> {
    let env = model.env();
    let blocked = env.blocked_states();
    let v = env.generator_at(n);
    let inside = DMatrix::from_fn(blocked.len(), blocked.len(), |i, j| {
        if i == j {
            0.0
        } else {
            v[(blocked[i], blocked[j])]
        }
    });
    let exit: Vec<f64> = blocked
        .iter()
        .map(|&k| env.working_states().iter().map(|&l| v[(k, l)]).sum())
        .collect();
    let local =
        absorption_times(&inside, &exit).map_err(|stuck| ErgodicityError::SingularSystem {
            level: n,
            states: stuck.into_iter().map(|i| blocked[i]).collect(),
        })?;
    let mut tau = vec![0.0; env.size()];
    for (i, &k) in blocked.iter().enumerate() {
        tau[k] = local[i];
    }
    let residual = blocked
        .iter()
        .map(|&k| {
            let drift: f64 = (0..env.size())
                .filter(|&l| l != k)
                .map(|l| v[(k, l)] * (tau[l] - tau[k]))
                .sum();
            (drift + 1.0).abs()
        })
        .fold(0.0, f64::max);
    Ok(AbsorptionTable {
        level: n,
        tau,
        residual,
    })
}

/// `ĉ_n` and its two branches; an infinite branch had nothing to bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CHat {
    pub level: usize,
    pub service_branch: f64,
    pub environment_branch: f64,
    pub value: f64,
}

fn reciprocal_or_inf(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        f64::INFINITY
    }
}

pub fn c_hat(model: &JointModel, n: usize) -> Result<CHat, ErgodicityError> {
    let table = solve_tau(model, n)?;
    c_hat_from(model, &table)
}

fn c_hat_from(model: &JointModel, table: &AbsorptionTable) -> Result<CHat, ErgodicityError> {
    let env = model.env();
    let n = table.level;
    let blocked = env.blocked_states();
    if blocked.is_empty() {
        return Ok(CHat {
            level: n,
            service_branch: f64::INFINITY,
            environment_branch: f64::INFINITY,
            value: f64::INFINITY,
        });
    }
    let mu = model.mu(n + 1);
    let mut service: f64 = 0.0;
    let mut environment: f64 = 0.0;
    for k in env.working_states() {
        let s: f64 = blocked
            .iter()
            .map(|&l| env.r(n + 1, k, l) * table.tau[l])
            .sum();
        let e: f64 = blocked.iter().map(|&l| env.v(n, k, l) * table.tau[l]).sum();
        service = service.max(mu * s);
        environment = environment.max(e);
    }
    if service == 0.0 && environment == 0.0 {
        return Err(ErgodicityError::BothBranchesZero { level: n });
    }
    let (service_branch, environment_branch) =
        (reciprocal_or_inf(service), reciprocal_or_inf(environment));
    Ok(CHat {
        level: n,
        service_branch,
        environment_branch,
        value: service_branch.min(environment_branch),
    })
}

/// Lyapunov function `L̃` of the isolated queue, stored as increments
/// `L̃(n) − L̃(n−1)` that are constant beyond the table.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueLyapunov {
    pub kind: LyapunovKind,
    /// `increments[i]` is `L̃(i+1) − L̃(i)`.
    pub increments: Vec<f64>,
    pub tail_increment: f64,
    /// Levels `0..exception_levels` form `F̃`.
    pub exception_levels: usize,
    pub epsilon_tilde: f64,
}

impl QueueLyapunov {
    pub fn increment(&self, n: usize) -> f64 {
        self.increments
            .get(n)
            .copied()
            .unwrap_or(self.tail_increment)
    }

    pub fn value(&self, n: usize) -> f64 {
        let table = n.min(self.increments.len());
        let head: f64 = self.increments[..table].iter().sum();
        head + (n - table) as f64 * self.tail_increment
    }

    pub fn in_exception_set(&self, n: usize) -> bool {
        n < self.exception_levels
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CannotBuild {
    NoPositiveDrift { kind: LyapunovKind },
    PeriodicTail { period: usize },
    GrowingRates,
}

impl fmt::Display for CannotBuild {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CannotBuild::NoPositiveDrift { kind } => {
                write!(f, "{kind}: μ − λ is not eventually bounded away from 0")
            }
            CannotBuild::PeriodicTail { period } => {
                write!(
                    f,
                    "hitting_time needs constant tail rates, tail period is {period}"
                )
            }
            CannotBuild::GrowingRates => f.write_str("rates grow with the queue length"),
        }
    }
}

pub fn build_mm1_lyapunov(
    model: &JointModel,
    kind: LyapunovKind,
) -> Result<QueueLyapunov, CannotBuild> {
    let rates = model.rates();
    if !rates.is_bounded() {
        return Err(CannotBuild::GrowingRates);
    }
    let tail = rates.tail();
    let drift = |n: usize| rates.mu(n) - rates.lambda(n);
    match kind {
        LyapunovKind::LinearDrift => {
            let start = tail.start.max(1);
            let tail_min = (start..start + tail.period)
                .map(drift)
                .fold(f64::INFINITY, f64::min);
            if !(tail_min > 0.0) {
                return Err(CannotBuild::NoPositiveDrift { kind });
            }
            let mut first = start;
            while first > 1 && drift(first - 1) > 0.0 {
                first -= 1;
            }
            let epsilon_tilde = (first..start).map(drift).fold(tail_min, f64::min);
            Ok(QueueLyapunov {
                kind,
                increments: Vec::new(),
                tail_increment: 1.0,
                exception_levels: first,
                epsilon_tilde,
            })
        }
        LyapunovKind::HittingTime => {
            if tail.period != 1 {
                return Err(CannotBuild::PeriodicTail {
                    period: tail.period,
                });
            }
            let start = tail.start.max(1);
            let gap = drift(start);
            if !(gap > 0.0) {
                return Err(CannotBuild::NoPositiveDrift { kind });
            }
            // d_n = E[time from n to n−1]; constant 1/(μ−λ) on the tail.
            let tail_increment = 1.0 / gap;
            let mut d = vec![0.0; start];
            let mut next = tail_increment;
            for n in (1..start).rev() {
                next = (1.0 + rates.lambda(n) * next) / rates.mu(n);
                d[n] = next;
            }
            Ok(QueueLyapunov {
                kind,
                increments: d[1..].to_vec(),
                tail_increment,
                exception_levels: 1,
                epsilon_tilde: 1.0,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub base: QueueLyapunov,
    pub tail: Tail,
    /// `τ_n` for the representatives `n < N0* + p*`.
    pub tau: Vec<AbsorptionTable>,
    pub c_hat: Vec<CHat>,
    /// `c_n = (ε̃/4)·ĉ_n` for the representatives.
    pub c: Vec<f64>,
    pub epsilon: f64,
    /// Drift was verified on levels `0..=check_horizon`.
    pub check_horizon: usize,
    /// Largest `(Q·L)(n,k) + ε` over the checked states outside `F`.
    pub worst_margin: f64,
    working: Vec<bool>,
}

impl LyapunovCertificate {
    pub fn kind(&self) -> LyapunovKind {
        self.base.kind
    }

    pub fn epsilon_tilde(&self) -> f64 {
        self.base.epsilon_tilde
    }

    pub fn c_at(&self, n: usize) -> f64 {
        self.c[self.tail.representative(n)]
    }

    pub fn tau_at(&self, n: usize, k: usize) -> f64 {
        self.tau[self.tail.representative(n)].tau[k]
    }

    pub fn in_exception_set(&self, state: State) -> bool {
        self.base.in_exception_set(state.level)
    }

    pub fn lyapunov(&self, state: State) -> f64 {
        let base = self.base.value(state.level);
        if self.working[state.env] {
            base
        } else {
            base + self.c_at(state.level) * self.tau_at(state.level, state.env)
        }
    }

    /// `(Q·L)(state)`.
    pub fn drift(&self, model: &JointModel, state: State) -> f64 {
        let here = self.lyapunov(state);
        let mut total = 0.0;
        model.for_each_transition(state, None, |to, rate| {
            total += rate * (self.lyapunov(to) - here);
        });
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NotCertifiedReason {
    NecessaryFails {
        tail_ratio: f64,
    },
    NoLyapunov(CannotBuild),
    CHatInfimumZero {
        level: usize,
    },
    DriftCheckFails {
        state: State,
        drift: f64,
        epsilon: f64,
    },
    UnsupportedTail,
}

impl fmt::Display for NotCertifiedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotCertifiedReason::NecessaryFails { tail_ratio } => {
                write!(f, "isolated queue is not ergodic (tail ratio {tail_ratio})")
            }
            NotCertifiedReason::NoLyapunov(c) => write!(f, "no queue Lyapunov function: {c}"),
            NotCertifiedReason::CHatInfimumZero { level } => {
                write!(f, "c_n vanishes at representative level {level}")
            }
            NotCertifiedReason::DriftCheckFails {
                state,
                drift,
                epsilon,
            } => write!(f, "drift {drift} at {state} exceeds -{epsilon}"),
            NotCertifiedReason::UnsupportedTail => {
                f.write_str("environment rates grow with the queue length")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certification {
    Certified(LyapunovCertificate),
    NotCertified(NotCertifiedReason),
}

/// Build `L` and verify the Foster drift condition.
pub fn certify(model: &JointModel, kind: LyapunovKind) -> Result<Certification, ErgodicityError> {
    let necessary = check_necessary(model);
    if !necessary.passes {
        return Ok(Certification::NotCertified(
            NotCertifiedReason::NecessaryFails {
                tail_ratio: necessary.tail_ratio,
            },
        ));
    }
    let base = match build_mm1_lyapunov(model, kind) {
        Ok(b) => b,
        Err(e) => {
            return Ok(Certification::NotCertified(NotCertifiedReason::NoLyapunov(
                e,
            )))
        }
    };
    if !model.is_bounded() {
        return Ok(Certification::NotCertified(
            NotCertifiedReason::UnsupportedTail,
        ));
    }
    let tail = model.effective_tail();
    let representatives = tail.start + tail.period;
    let tau = (0..representatives)
        .map(|n| solve_tau(model, n))
        .collect::<Result<Vec<_>, _>>()?;
    let c_hat = tau
        .iter()
        .map(|t| c_hat_from(model, t))
        .collect::<Result<Vec<_>, _>>()?;
    let quarter = base.epsilon_tilde / 4.0;
    let c: Vec<f64> = c_hat.iter().map(|h| quarter * h.value).collect();
    if let Some(level) = c.iter().position(|&x| !(x > 0.0)) {
        return Ok(Certification::NotCertified(
            NotCertifiedReason::CHatInfimumZero { level },
        ));
    }
    let epsilon = c.iter().copied().fold(base.epsilon_tilde / 2.0, f64::min);
    let check_horizon = tail.start + 2 * tail.period + 2;
    let mut cert = LyapunovCertificate {
        base,
        tail,
        tau,
        c_hat,
        c,
        epsilon,
        check_horizon,
        worst_margin: f64::NEG_INFINITY,
        working: (0..model.env_size())
            .map(|k| model.env().is_working(k))
            .collect(),
    };
    for n in 0..=check_horizon {
        for k in 0..model.env_size() {
            let state = State::new(n, k);
            let drift = cert.drift(model, state);
            if cert.in_exception_set(state) {
                if !drift.is_finite() {
                    return Ok(Certification::NotCertified(
                        NotCertifiedReason::DriftCheckFails {
                            state,
                            drift,
                            epsilon,
                        },
                    ));
                }
                continue;
            }
            if !(drift <= -epsilon + DRIFT_SLACK) {
                return Ok(Certification::NotCertified(
                    NotCertifiedReason::DriftCheckFails {
                        state,
                        drift,
                        epsilon,
                    },
                ));
            }
            cert.worst_margin = cert.worst_margin.max(drift + epsilon);
        }
    }
    Ok(Certification::Certified(cert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::LevelSeq;
    use crate::model::{
        catalog, generator_from_rates, CatalogModel, CatalogParams, EnvironmentSpec, RateFamily,
    };
    use approx::assert_relative_eq;

    fn inventory(
        model: CatalogModel,
        lambda: f64,
        mu: f64,
        nu: f64,
        gamma: f64,
        b: usize,
    ) -> JointModel {
        catalog(
            model,
            &CatalogParams {
                lambda: Some(lambda),
                mu: Some(mu),
                nu: Some(nu),
                gamma: Some(gamma),
                b: Some(b),
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn mm1(lambda: f64, mu: f64) -> JointModel {
        catalog(
            CatalogModel::Mm1Plain,
            &CatalogParams {
                rates: Some(RateFamily::constant(lambda, mu)),
                ..Default::default()
            },
        )
        .unwrap()
    }

    /// Labels a, b, c with a, b blocked and the given generator rows.
    fn three_state(rows: [f64; 9]) -> JointModel {
        let v = generator_from_rates(DMatrix::from_row_slice(3, 3, &rows));
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let env = EnvironmentSpec::new(
            vec!["a".into(), "b".into(), "c".into()],
            &[0, 1],
            LevelSeq::constant(v),
            LevelSeq::constant(r),
        )
        .unwrap();
        JointModel::new(RateFamily::constant(1.0, 2.0), env)
    }

    #[test]
    fn necessary_condition() {
        assert!(check_necessary(&mm1(1.0, 2.0)).passes);
        assert_eq!(
            check_necessary(&mm1(2.0, 1.0)),
            NecessaryCheck {
                passes: false,
                tail_ratio: 2.0
            }
        );
        assert!(!check_necessary(&mm1(1.0, 1.0)).passes);
    }

    #[test]
    fn tau_single_blocked_state() {
        let m = inventory(CatalogModel::BaseStock, 1.0, 2.0, 0.4, 0.0, 2);
        let t = solve_tau(&m, 3).unwrap();
        assert_relative_eq!(t.tau[0], 2.5, epsilon = 1e-15);
        assert_eq!(&t.tau[1..], &[0.0, 0.0]);
    }

    #[test]
    fn tau_two_blocked_chain() {
        let (a, c) = (0.5, 4.0);
        let m = three_state([0.0, a, 0.0, 0.0, 0.0, c, 1.0, 0.0, 0.0]);
        let t = solve_tau(&m, 0).unwrap();
        assert_relative_eq!(t.tau[1], 1.0 / c, epsilon = 1e-15);
        assert_relative_eq!(t.tau[0], 1.0 / a + 1.0 / c, epsilon = 1e-14);
        assert!(t.residual <= 1e-10);
    }

    #[test]
    fn tau_trapped_blocked_state() {
        let m = three_state([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            solve_tau(&m, 0),
            Err(ErgodicityError::SingularSystem {
                level: 0,
                states: vec![0, 1]
            })
        );
    }

    #[test]
    fn c_hat_base_stock() {
        let (nu, mu) = (0.7, 1.9);
        let m = inventory(CatalogModel::BaseStock, 1.0, mu, nu, 0.0, 3);
        for n in 0..4 {
            let h = c_hat(&m, n).unwrap();
            assert_eq!(h.environment_branch, f64::INFINITY);
            assert!((h.value - nu / mu).abs() <= 1e-14);
        }
    }

    #[test]
    fn c_hat_perishable_o() {
        let m = inventory(CatalogModel::PerishableO, 1.0, 2.0, 1.0, 1.0, 2);
        // τ_n(0) = 1/ν = 1; v_0(1,0) = γ gives a finite environment branch
        let h0 = c_hat(&m, 0).unwrap();
        assert_relative_eq!(h0.service_branch, 0.5, epsilon = 1e-15);
        assert_relative_eq!(h0.environment_branch, 1.0, epsilon = 1e-15);
        let h1 = c_hat(&m, 1).unwrap();
        assert_eq!(h1.environment_branch, f64::INFINITY);
        assert_relative_eq!(h1.value, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn c_hat_without_blocked_states() {
        let h = c_hat(&mm1(1.0, 2.0), 0).unwrap();
        assert_eq!(h.value, f64::INFINITY);
    }

    #[test]
    fn linear_drift_base() {
        let l = build_mm1_lyapunov(&mm1(1.0, 2.0), LyapunovKind::LinearDrift).unwrap();
        assert_eq!(l.exception_levels, 1);
        assert_eq!(l.epsilon_tilde, 1.0);
        assert_eq!(l.value(7), 7.0);
        assert_eq!(
            build_mm1_lyapunov(&mm1(2.0, 1.0), LyapunovKind::LinearDrift),
            Err(CannotBuild::NoPositiveDrift {
                kind: LyapunovKind::LinearDrift
            })
        );
    }

    #[test]
    fn linear_drift_skips_bad_prefix() {
        // μ − λ: n=1 → −1, n=2 → 0.5, tail → 1
        let rates = RateFamily::new(
            LevelSeq::new(vec![1.0, 2.0, 1.5], vec![1.0]).unwrap(),
            LevelSeq::new(vec![0.0, 1.0, 2.0], vec![2.0]).unwrap(),
        );
        let m = catalog(
            CatalogModel::Mm1Plain,
            &CatalogParams {
                rates: Some(rates),
                ..Default::default()
            },
        )
        .unwrap();
        let l = build_mm1_lyapunov(&m, LyapunovKind::LinearDrift).unwrap();
        assert_eq!(l.exception_levels, 2);
        assert_eq!(l.epsilon_tilde, 0.5);
    }

    #[test]
    fn hitting_time_base() {
        let l = build_mm1_lyapunov(&mm1(1.0, 2.0), LyapunovKind::HittingTime).unwrap();
        for n in 0..10 {
            assert_eq!(l.value(n), n as f64);
        }
        assert_eq!(l.exception_levels, 1);
        assert!(build_mm1_lyapunov(&mm1(2.0, 1.0), LyapunovKind::HittingTime).is_err());
    }

    #[test]
    fn hitting_time_prefix_recursion() {
        let rates = RateFamily::new(
            LevelSeq::new(vec![3.0, 2.0, 0.5], vec![1.0]).unwrap(),
            LevelSeq::new(vec![0.0, 1.0, 4.0], vec![3.0]).unwrap(),
        );
        let m = catalog(
            CatalogModel::Mm1Plain,
            &CatalogParams {
                rates: Some(rates.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let l = build_mm1_lyapunov(&m, LyapunovKind::HittingTime).unwrap();
        for n in 1..12 {
            let drift = rates.lambda(n) * (l.value(n + 1) - l.value(n))
                + rates.mu(n) * (l.value(n - 1) - l.value(n));
            assert_relative_eq!(drift, -1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn certify_base_stock_epsilon() {
        let m = inventory(CatalogModel::BaseStock, 1.0, 2.0, 1.0, 0.0, 3);
        let Certification::Certified(cert) = certify(&m, LyapunovKind::LinearDrift).unwrap() else {
            panic!("base stock must certify");
        };
        assert_relative_eq!(cert.epsilon, 0.125, epsilon = 1e-15);
        assert!(cert.worst_margin <= DRIFT_SLACK);
    }

    #[test]
    fn certify_perishable_o_both_kinds() {
        let m = inventory(CatalogModel::PerishableO, 1.0, 2.0, 1.0, 1.0, 2);
        for kind in [LyapunovKind::LinearDrift, LyapunovKind::HittingTime] {
            let Certification::Certified(cert) = certify(&m, kind).unwrap() else {
                panic!("perishable_o must certify with {kind}");
            };
            assert!(cert.epsilon > 0.0);
            for n in 0..=cert.check_horizon {
                for k in 0..3 {
                    let s = State::new(n, k);
                    if !cert.in_exception_set(s) {
                        assert!(cert.drift(&m, s) <= -cert.epsilon + DRIFT_SLACK);
                    }
                }
            }
        }
    }

    #[test]
    fn certify_overloaded_fails_necessary() {
        let m = inventory(CatalogModel::PerishableO, 2.0, 1.0, 1.0, 1.0, 2);
        assert_eq!(
            certify(&m, LyapunovKind::LinearDrift).unwrap(),
            Certification::NotCertified(NotCertifiedReason::NecessaryFails { tail_ratio: 2.0 })
        );
    }

    #[test]
    fn certify_plain_queue() {
        let Certification::Certified(cert) =
            certify(&mm1(1.0, 2.0), LyapunovKind::LinearDrift).unwrap()
        else {
            panic!("stable M/M/1 must certify");
        };
        assert_eq!(cert.epsilon, 0.5);
    }
}
