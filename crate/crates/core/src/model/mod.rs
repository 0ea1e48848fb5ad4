//! Queueing-environment systems.
//!
//! A [`JointModel`] couples a single-server queue with level dependent rates
//! to a finite environment `K = K_W ⊎ K_B`. While the environment sits in a
//! blocked state the queue is frozen: no arrivals are admitted and no service
//! happens. The joint generator on `ℕ₀ × K` has exactly three transition
//! shapes out of `(n, k)`:
//!
//! * `(n+1, k)` at rate `λ(n)` if `k ∈ K_W`,
//! * `(n-1, ℓ)` at rate `μ(n) R_n(k, ℓ)` if `n > 0` and `k ∈ K_W`,
//! * `(n, ℓ)`, `ℓ ≠ k`, at rate `v_n(k, ℓ)`.
//!
//! The state space is infinite, so rows are generated on demand and the joint
//! generator is never materialised.

pub mod catalog;
pub mod file;

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::level::{LevelSeq, LevelSeqError, MatrixSeq, RateSeq, Tail};

pub use catalog::{catalog, catalog_by_name, CatalogModel, CatalogParams};
pub use file::{load_model, ModelDocument};

/// Row sums of generators and stochastic matrices are accepted within this.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed matrix in {family}: expected {expected}x{expected}, got {rows}x{cols}")]
    MalformedMatrix {
        family: &'static str,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("environment must contain at least one state")]
    EmptyEnvironment,
    #[error("duplicate environment label {0:?}")]
    DuplicateLabel(String),
    #[error("unknown environment label {0:?}")]
    UnknownLabel(String),
    #[error("blocked index {0} out of range")]
    BlockedOutOfRange(usize),
    #[error("jump matrices must not grow with the queue length")]
    GrowingJump,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown catalog model {0:?}")]
    UnknownModel(String),
    #[error("model file: {0}")]
    Parse(String),
    #[error(transparent)]
    Level(#[from] LevelSeqError),
}

/// A state `(n, k)` of the joint process; `env` indexes the ordered label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub level: usize,
    pub env: usize,
}

impl State {
    pub fn new(level: usize, env: usize) -> Self {
        Self { level, env }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.level, self.env)
    }
}

/// Arrival rates `λ(n)` and service rates `μ(n)`; `μ(0)` is zero by definition
/// whatever the family stores at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFamily {
    lambda: RateSeq,
    mu: RateSeq,
}

impl RateFamily {
    pub fn new(lambda: RateSeq, mu: RateSeq) -> Self {
        Self { lambda, mu }
    }

    pub fn constant(lambda: f64, mu: f64) -> Self {
        Self::new(RateSeq::constant(lambda), RateSeq::constant(mu))
    }

    pub fn lambda(&self, n: usize) -> f64 {
        self.lambda.at(n)
    }

    pub fn mu(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.mu.at(n)
        }
    }

    pub fn lambda_seq(&self) -> &RateSeq {
        &self.lambda
    }

    pub fn mu_seq(&self) -> &RateSeq {
        &self.mu
    }

    pub fn tail(&self) -> Tail {
        Tail::of(&self.lambda).merge(Tail::of(&self.mu))
    }

    pub fn is_bounded(&self) -> bool {
        self.lambda.is_bounded() && self.mu.is_bounded()
    }
}

/// Finite environment with its blocked/working partition, the continuous
/// movement generators `V_n` and the service-triggered jump matrices `R_n`.
///
/// `R_n` is only consulted for `n >= 1`; the entry stored for level 0 must
/// still be well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    labels: Vec<String>,
    blocked: Vec<bool>,
    generator: MatrixSeq,
    jump: MatrixSeq,
}

impl EnvironmentSpec {
    pub fn new(
        labels: Vec<String>,
        blocked: &[usize],
        generator: MatrixSeq,
        jump: MatrixSeq,
    ) -> Result<Self, ModelError> {
        let size = labels.len();
        if size == 0 {
            return Err(ModelError::EmptyEnvironment);
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(ModelError::DuplicateLabel(l.clone()));
            }
        }
        let mut mask = vec![false; size];
        for &b in blocked {
            if b >= size {
                return Err(ModelError::BlockedOutOfRange(b));
            }
            mask[b] = true;
        }
        for (family, seq) in [("generator", &generator), ("jump", &jump)] {
            for m in seq.components() {
                if m.nrows() != size || m.ncols() != size {
                    return Err(ModelError::MalformedMatrix {
                        family,
                        expected: size,
                        rows: m.nrows(),
                        cols: m.ncols(),
                    });
                }
            }
        }
        if !jump.is_bounded() {
            return Err(ModelError::GrowingJump);
        }
        Ok(Self {
            labels,
            blocked: mask,
            generator,
            jump,
        })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn is_blocked(&self, k: usize) -> bool {
        self.blocked[k]
    }

    pub fn is_working(&self, k: usize) -> bool {
        !self.blocked[k]
    }

    pub fn blocked_states(&self) -> Vec<usize> {
        (0..self.size()).filter(|&k| self.blocked[k]).collect()
    }

    pub fn working_states(&self) -> Vec<usize> {
        (0..self.size()).filter(|&k| !self.blocked[k]).collect()
    }

    /// `v_n(k, ℓ)`.
    pub fn v(&self, n: usize, k: usize, l: usize) -> f64 {
        self.generator.entry(n, k, l)
    }

    /// `R_n(k, ℓ)`.
    pub fn r(&self, n: usize, k: usize, l: usize) -> f64 {
        self.jump.entry(n, k, l)
    }

    pub fn generator_at(&self, n: usize) -> DMatrix<f64> {
        self.generator.at(n)
    }

    pub fn jump_at(&self, n: usize) -> DMatrix<f64> {
        self.jump.at(n)
    }

    pub fn generator_seq(&self) -> &MatrixSeq {
        &self.generator
    }

    pub fn jump_seq(&self) -> &MatrixSeq {
        &self.jump
    }

    pub fn tail(&self) -> Tail {
        Tail::of(&self.generator).merge(Tail::of(&self.jump))
    }
}

/// The queue and its environment, with the merged tail discipline.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    rates: RateFamily,
    env: EnvironmentSpec,
    tail: Tail,
}

/// One row of the joint generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRow {
    pub state: State,
    pub transitions: Vec<(State, f64)>,
    pub diagonal: f64,
}

impl JointModel {
    pub fn new(rates: RateFamily, env: EnvironmentSpec) -> Self {
        let tail = rates.tail().merge(env.tail());
        Self { rates, env, tail }
    }

    pub fn rates(&self) -> &RateFamily {
        &self.rates
    }

    pub fn env(&self) -> &EnvironmentSpec {
        &self.env
    }

    pub fn env_size(&self) -> usize {
        self.env.size()
    }

    pub fn lambda(&self, n: usize) -> f64 {
        self.rates.lambda(n)
    }

    pub fn mu(&self, n: usize) -> f64 {
        self.rates.mu(n)
    }

    /// Merged `(N0*, p*)`.
    pub fn effective_tail(&self) -> Tail {
        self.tail
    }

    /// No family grows with the queue length.
    pub fn is_bounded(&self) -> bool {
        self.rates.is_bounded() && self.env.generator.is_bounded()
    }

    /// Levels that pin down every "for all n" condition: one tail period past
    /// the prefix, or two when some family grows (the conditions are then
    /// affine in the block index).
    pub fn check_levels(&self) -> usize {
        let blocks = if self.is_bounded() { 1 } else { 2 };
        self.tail.start + blocks * self.tail.period
    }

    /// Visit every off-diagonal transition out of `state`. With `cap` set,
    /// arrivals at level `cap` are suppressed (truncated generator).
    pub fn for_each_transition(
        &self,
        state: State,
        cap: Option<usize>,
        mut f: impl FnMut(State, f64),
    ) {
        let State { level: n, env: k } = state;
        let size = self.env.size();
        if self.env.is_working(k) {
            if cap != Some(n) {
                let rate = self.rates.lambda(n);
                if rate > 0.0 {
                    f(State::new(n + 1, k), rate);
                }
            }
            if n > 0 {
                let mu = self.rates.mu(n);
                for l in 0..size {
                    let rate = mu * self.env.r(n, k, l);
                    if rate > 0.0 {
                        f(State::new(n - 1, l), rate);
                    }
                }
            }
        }
        for l in 0..size {
            if l != k {
                let rate = self.env.v(n, k, l);
                if rate > 0.0 {
                    f(State::new(n, l), rate);
                }
            }
        }
    }

    /// Total exit rate of `state`.
    pub fn exit_rate(&self, state: State, cap: Option<usize>) -> f64 {
        let mut total = 0.0;
        self.for_each_transition(state, cap, |_, r| total += r);
        total
    }

    pub fn generator_row(&self, state: State) -> GeneratorRow {
        let mut transitions = Vec::with_capacity(2 * self.env.size() + 1);
        self.for_each_transition(state, None, |s, r| transitions.push((s, r)));
        let diagonal = -transitions.iter().map(|(_, r)| r).sum::<f64>();
        GeneratorRow {
            state,
            transitions,
            diagonal,
        }
    }
}

/// Which part of the model a validation finding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Generator,
    GeneratorGrowth,
    Jump,
    Arrival,
    Service,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Generator => "V",
            Family::GeneratorGrowth => "V growth",
            Family::Jump => "R",
            Family::Arrival => "lambda",
            Family::Service => "mu",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    NonConservativeRow {
        family: Family,
        level: usize,
        row: usize,
        sum: f64,
    },
    NegativeRate {
        family: Family,
        level: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    NonPositiveRate {
        family: Family,
        level: usize,
        value: f64,
    },
    /// Warning level: the restricted state graph is not strongly connected.
    /// `component` lists the states that cannot reach, or cannot be reached
    /// from, the root `(0, first state)`.
    NotIrreducible { component: Vec<State> },
}

impl ValidationIssue {
    pub fn is_warning(&self) -> bool {
        matches!(self, ValidationIssue::NotIrreducible { .. })
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::NonConservativeRow {
                family,
                level,
                row,
                sum,
            } => write!(f, "{family} at level {level}: row {row} sums to {sum}"),
            ValidationIssue::NegativeRate {
                family,
                level,
                row,
                col,
                value,
            } => write!(
                f,
                "{family} at level {level}: entry ({row},{col}) = {value} < 0"
            ),
            ValidationIssue::NonPositiveRate {
                family,
                level,
                value,
            } => write!(f, "{family}({level}) = {value} is not positive"),
            ValidationIssue::NotIrreducible { component } => {
                let shown: Vec<String> = component.iter().take(8).map(|s| s.to_string()).collect();
                write!(
                    f,
                    "state graph not strongly connected; {} offending states, e.g. {}",
                    component.len(),
                    shown.join(" ")
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n_check: usize,
    pub issues: Vec<ValidationIssue>,
    pub connected: bool,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| !i.is_warning())
    }
}

fn check_generator(
    m: &DMatrix<f64>,
    family: Family,
    level: usize,
    issues: &mut Vec<ValidationIssue>,
) {
    for row in 0..m.nrows() {
        let mut sum = 0.0;
        for col in 0..m.ncols() {
            let value = m[(row, col)];
            if row != col && value < 0.0 {
                issues.push(ValidationIssue::NegativeRate {
                    family,
                    level,
                    row,
                    col,
                    value,
                });
            }
            sum += value;
        }
        if sum.abs() > ROW_SUM_TOL {
            issues.push(ValidationIssue::NonConservativeRow {
                family,
                level,
                row,
                sum,
            });
        }
    }
}

fn check_stochastic(m: &DMatrix<f64>, level: usize, issues: &mut Vec<ValidationIssue>) {
    for row in 0..m.nrows() {
        let mut sum = 0.0;
        for col in 0..m.ncols() {
            let value = m[(row, col)];
            if value < 0.0 {
                issues.push(ValidationIssue::NegativeRate {
                    family: Family::Jump,
                    level,
                    row,
                    col,
                    value,
                });
            }
            sum += value;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            issues.push(ValidationIssue::NonConservativeRow {
                family: Family::Jump,
                level,
                row,
                sum,
            });
        }
    }
}

/// Check generator/stochasticity structure for all levels `0..=n_check` and
/// strong connectivity of the state graph restricted to `{0..n_check} × K`.
pub fn validate_model(model: &JointModel, n_check: usize) -> Result<ValidationReport, ModelError> {
    let tail = model.effective_tail();
    if n_check < tail.start + tail.period {
        return Err(ModelError::InvalidParam(format!(
            "n_check = {n_check} must be at least N0* + p* = {}",
            tail.start + tail.period
        )));
    }
    let mut issues = Vec::new();
    let env = model.env();
    for n in 0..=n_check {
        check_generator(&env.generator_at(n), Family::Generator, n, &mut issues);
        if n >= 1 {
            check_stochastic(&env.jump_at(n), n, &mut issues);
        }
        let lambda = model.lambda(n);
        if !(lambda > 0.0) {
            issues.push(ValidationIssue::NonPositiveRate {
                family: Family::Arrival,
                level: n,
                value: lambda,
            });
        }
        if n >= 1 {
            let mu = model.mu(n);
            if !(mu > 0.0) {
                issues.push(ValidationIssue::NonPositiveRate {
                    family: Family::Service,
                    level: n,
                    value: mu,
                });
            }
        }
    }
    // Growth increments must keep every future level a conservative generator
    // and keep the rates positive.
    if let Some(growth) = env.generator_seq().growth() {
        for (phase, g) in growth.iter().enumerate() {
            check_generator(g, Family::GeneratorGrowth, tail.start + phase, &mut issues);
        }
    }
    for (family, seq) in [
        (Family::Arrival, model.rates().lambda_seq()),
        (Family::Service, model.rates().mu_seq()),
    ] {
        if let Some(growth) = seq.growth() {
            for (phase, g) in growth.iter().enumerate() {
                if *g < 0.0 {
                    issues.push(ValidationIssue::NonPositiveRate {
                        family,
                        level: seq.tail_start() + phase,
                        value: *g,
                    });
                }
            }
        }
    }

    let component = disconnected_states(model, n_check);
    let connected = component.is_empty();
    if !connected {
        issues.push(ValidationIssue::NotIrreducible { component });
    }
    Ok(ValidationReport {
        n_check,
        issues,
        connected,
    })
}

/// States of `{0..=n_check} × K` that are not mutually reachable with
/// `(0, 0)`. Paths may climb to level `2·n_check + 1`.
fn disconnected_states(model: &JointModel, n_check: usize) -> Vec<State> {
    let size = model.env_size();
    let cap = 2 * n_check + 1;
    let count = (cap + 1) * size;
    let idx = |s: State| s.level * size + s.env;
    let mut forward: Vec<Vec<usize>> = vec![Vec::new(); count];
    let mut backward: Vec<Vec<usize>> = vec![Vec::new(); count];
    for level in 0..=cap {
        for env in 0..size {
            let from = State::new(level, env);
            model.for_each_transition(from, Some(cap), |to, _| {
                forward[idx(from)].push(idx(to));
                backward[idx(to)].push(idx(from));
            });
        }
    }
    let reach = |adj: &Vec<Vec<usize>>| {
        let mut seen = vec![false; count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    };
    let fwd = reach(&forward);
    let bwd = reach(&backward);
    (0..(n_check + 1) * size)
        .filter(|&i| !(fwd[i] && bwd[i]))
        .map(|i| State::new(i / size, i % size))
        .collect()
}

/// Dense identity, handy for trivial jump matrices.
pub fn identity(size: usize) -> DMatrix<f64> {
    DMatrix::identity(size, size)
}

/// Build a generator from off-diagonal rates; the diagonal is filled in.
pub fn generator_from_rates(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for r in 0..m.nrows() {
        m[(r, r)] = 0.0;
        let off: f64 = m.row(r).iter().sum();
        m[(r, r)] = -off;
    }
    m
}

/// Convenience constructor for families that do not depend on the level.
pub fn level_independent(v: DMatrix<f64>, r: DMatrix<f64>) -> (MatrixSeq, MatrixSeq) {
    (LevelSeq::constant(v), LevelSeq::constant(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_stock(lambda: f64, mu: f64, nu: f64, b: usize) -> JointModel {
        catalog(
            CatalogModel::BaseStock,
            &CatalogParams {
                lambda: Some(lambda),
                mu: Some(mu),
                nu: Some(nu),
                b: Some(b),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn base_stock_row_at_full_stock() {
        let m = base_stock(1.0, 2.0, 1.0, 2);
        let row = m.generator_row(State::new(3, 2));
        assert_eq!(
            row.transitions,
            vec![(State::new(4, 2), 1.0), (State::new(2, 1), 2.0)]
        );
        assert_eq!(row.diagonal, -3.0);
    }

    #[test]
    fn blocked_state_freezes_queue() {
        let m = base_stock(1.0, 2.0, 1.0, 2);
        for n in [0, 1, 7] {
            let row = m.generator_row(State::new(n, 0));
            assert!(row.transitions.iter().all(|(s, _)| s.level == n));
            assert_eq!(row.transitions, vec![(State::new(n, 1), 1.0)]);
        }
    }

    #[test]
    fn base_stock_validates() {
        let m = base_stock(1.0, 1.0, 1.0, 2);
        let report = validate_model(&m, 8).unwrap();
        assert!(report.passes(), "{:?}", report.issues);
        assert!(report.connected);
    }

    #[test]
    fn n_check_below_tail_is_rejected() {
        let m = catalog(
            CatalogModel::PerishableO,
            &CatalogParams {
                lambda: Some(1.0),
                mu: Some(2.0),
                nu: Some(1.0),
                gamma: Some(1.0),
                b: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        // N0* = 1, p* = 1
        assert!(matches!(
            validate_model(&m, 1),
            Err(ModelError::InvalidParam(_))
        ));
        assert!(validate_model(&m, 2).unwrap().passes());
    }

    #[test]
    fn non_conservative_row_detected() {
        let v = DMatrix::from_row_slice(2, 2, &[-1.0, 1.1, 1.0, -1.0]);
        let env = EnvironmentSpec::new(
            vec!["a".into(), "b".into()],
            &[],
            LevelSeq::constant(v),
            LevelSeq::constant(identity(2)),
        )
        .unwrap();
        let m = JointModel::new(RateFamily::constant(1.0, 2.0), env);
        let report = validate_model(&m, 3).unwrap();
        assert!(report.issues.iter().any(|i| matches!(
            i,
            ValidationIssue::NonConservativeRow { family: Family::Generator, row: 0, sum, .. }
                if (sum - 0.1).abs() < 1e-12
        )));
        assert!(report.has_errors());
    }

    #[test]
    fn all_blocked_is_not_irreducible() {
        let v = generator_from_rates(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let env = EnvironmentSpec::new(
            vec!["a".into(), "b".into()],
            &[0, 1],
            LevelSeq::constant(v),
            LevelSeq::constant(identity(2)),
        )
        .unwrap();
        let m = JointModel::new(RateFamily::constant(1.0, 2.0), env);
        let report = validate_model(&m, 4).unwrap();
        assert!(!report.connected);
        assert!(!report.has_errors());
        let ValidationIssue::NotIrreducible { component } = &report.issues[0] else {
            panic!("expected NotIrreducible, got {:?}", report.issues);
        };
        assert!(component.contains(&State::new(1, 0)));
    }

    #[test]
    fn malformed_matrix_rejected() {
        let err = EnvironmentSpec::new(
            vec!["a".into(), "b".into()],
            &[],
            LevelSeq::constant(DMatrix::zeros(3, 3)),
            LevelSeq::constant(identity(2)),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ModelError::MalformedMatrix {
                expected: 2,
                rows: 3,
                ..
            }
        ));
    }

    #[test]
    fn periodic_tail_shifts_rows() {
        let lambda = RateSeq::new(vec![0.7], vec![1.0, 0.5]).unwrap();
        let mu = RateSeq::new(vec![], vec![0.5, 3.0]).unwrap();
        let m = catalog(
            CatalogModel::BaseStock,
            &CatalogParams {
                nu: Some(1.5),
                b: Some(2),
                rates: Some(RateFamily::new(lambda, mu)),
                ..Default::default()
            },
        )
        .unwrap();
        let tail = m.effective_tail();
        assert_eq!(
            tail,
            Tail {
                start: 1,
                period: 2
            }
        );
        for n in tail.start..tail.start + 6 {
            for k in 0..3 {
                let a = m.generator_row(State::new(n, k));
                let b = m.generator_row(State::new(n + tail.period, k));
                let shifted: Vec<_> = a
                    .transitions
                    .iter()
                    .map(|(s, r)| (State::new(s.level + tail.period, s.env), *r))
                    .collect();
                assert_eq!(shifted, b.transitions);
                assert_eq!(a.diagonal, b.diagonal);
            }
        }
    }
}
