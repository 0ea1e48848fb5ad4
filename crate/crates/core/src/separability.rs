//! Separability and exact product-form steady states.
//!
//! The joint process has a product-form steady state `π(n,k) = ξ(n)·θ(k)`,
//! with `ξ` the birth-death distribution of the queue alone, exactly when the
//! queue marginal is summable and one probability vector `θ` is stationary
//! for every reduced generator
//!
//! ```text
//! q̃⁽ⁿ⁾(k,m) = λ(n)·R_{n+1}(k,m)·1{k ∈ K_W} + v_n(k,m),   k ≠ m.
//! ```
//!
//! The reduced generators inherit the tail discipline of the model, so the
//! "for every level" condition is decided on [`JointModel::check_levels`].

use nalgebra::DMatrix;
use thiserror::Error;

use crate::level::{RateSeq, Tail};
use crate::linalg::{extreme_stationary, Singular};
use crate::model::{JointModel, RateFamily, State};

/// Default residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Summability requires the tail ratio below `1 - SUMMABILITY_MARGIN`.
pub const SUMMABILITY_MARGIN: f64 = 1e-12;
/// Tail ratios this close to 1 raise a near-critical warning.
pub const NEAR_CRITICAL: f64 = 1e-9;

const MAX_SERIES_BLOCKS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeparabilityError {
    #[error(
        "elimination broke down at environment state {state} of the level-0 reduced generator"
    )]
    SingularSolve { state: usize },
    #[error("queue marginal series did not settle after {blocks} tail blocks")]
    SeriesStalled { blocks: usize },
}

/// `Q̃_red^(n)` as a dense generator over `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGenerator {
    pub level: usize,
    pub matrix: DMatrix<f64>,
}

impl ReducedGenerator {
    /// `‖θ·Q̃‖∞`.
    pub fn residual(&self, theta: &[f64]) -> f64 {
        let m = &self.matrix;
        (0..m.ncols())
            .map(|j| {
                (0..m.nrows())
                    .map(|i| theta[i] * m[(i, j)])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    fn off_diagonal(&self) -> DMatrix<f64> {
        let mut m = self.matrix.clone();
        m.fill_diagonal(0.0);
        m
    }
}

pub fn reduced_generator(model: &JointModel, n: usize) -> ReducedGenerator {
    let env = model.env();
    let size = env.size();
    let lambda = model.lambda(n);
    let mut m = DMatrix::zeros(size, size);
    for k in 0..size {
        let working = env.is_working(k);
        let mut out = 0.0;
        for l in 0..size {
            if l == k {
                continue;
            }
            let mut rate = env.v(n, k, l);
            if working {
                rate += lambda * env.r(n + 1, k, l);
            }
            m[(k, l)] = rate;
            out += rate;
        }
        m[(k, k)] = -out;
    }
    ReducedGenerator {
        level: n,
        matrix: m,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaOutcome {
    /// `θ` annihilates every reduced generator.
    Common {
        theta: Vec<f64>,
        residual: f64,
        checked_levels: usize,
    },
    /// No stationary vector of `Q̃_red^(0)` works for all levels. Reports the
    /// candidate that came closest.
    NoCommonSolution {
        worst_residual: f64,
        level: usize,
        candidates: usize,
    },
}

/// Find the common stochastic solution of `θ·Q̃_red^(n) = 0` for all `n`.
pub fn solve_theta(model: &JointModel, tol: f64) -> Result<ThetaOutcome, SeparabilityError> {
    let levels = model.check_levels();
    let reduced: Vec<ReducedGenerator> = (0..levels).map(|n| reduced_generator(model, n)).collect();
    let candidates = extreme_stationary(&reduced[0].off_diagonal())
        .map_err(|Singular { state }| SeparabilityError::SingularSolve { state })?;
    let mut closest: Option<(f64, usize)> = None;
    for theta in &candidates {
        let (worst, level) = reduced
            .iter()
            .map(|q| (q.residual(theta), q.level))
            .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
        if worst <= tol {
            return Ok(ThetaOutcome::Common {
                theta: theta.clone(),
                residual: worst,
                checked_levels: levels,
            });
        }
        if closest.is_none_or(|(w, _)| worst < w) {
            closest = Some((worst, level));
        }
    }
    let (worst_residual, level) = closest.unwrap_or((f64::INFINITY, 0));
    Ok(ThetaOutcome::NoCommonSolution {
        worst_residual,
        level,
        candidates: candidates.len(),
    })
}

/// Birth-death marginal `ξ(n) ∝ ∏_{i<n} λ(i)/μ(i+1)` of the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueMarginal {
    rates: RateFamily,
    tail: Tail,
    bounded: bool,
    /// Period product `∏_{j<p*} λ(N0*+j)/μ(N0*+j+1)`; for growing tails its
    /// limit along the blocks.
    pub tail_ratio: f64,
    pub summable: bool,
    pub near_critical: bool,
    /// `C = Σ_n ∏_{i<n} λ(i)/μ(i+1)` when summable.
    pub normalization: Option<f64>,
    /// `Σ_n ξ(n)·λ(n)` when summable: the admitted arrival rate of the queue
    /// alone, which equals its departure rate.
    pub mean_arrival: Option<f64>,
    head: Vec<f64>,
}

fn ratio_limit(rates: &RateFamily, n: usize) -> f64 {
    let sl = rates.lambda_seq().slope_per_level(n);
    let sm = rates.mu_seq().slope_per_level(n + 1);
    match (sl > 0.0, sm > 0.0) {
        (true, true) => sl / sm,
        (false, true) => 0.0,
        (true, false) => f64::INFINITY,
        (false, false) => rates.lambda(n) / rates.mu(n + 1),
    }
}

impl QueueMarginal {
    fn factor(&self, n: usize) -> f64 {
        self.rates.lambda(n) / self.rates.mu(n + 1)
    }

    /// Unnormalised weight `∏_{i<n} λ(i)/μ(i+1)`.
    pub fn weight(&self, n: usize) -> f64 {
        if n < self.head.len() {
            return self.head[n];
        }
        let Tail { start, period } = self.tail;
        if self.bounded {
            let offset = n - start;
            self.head[start + offset % period] * self.tail_ratio.powf((offset / period) as f64)
        } else {
            let mut w = *self.head.last().expect("head covers one period");
            for i in self.head.len() - 1..n {
                w *= self.factor(i);
            }
            w
        }
    }

    pub fn xi(&self, n: usize) -> Option<f64> {
        self.normalization.map(|c| self.weight(n) / c)
    }

    /// `Σ_n weight(n)·g(n)`, where `g` defaults to 1.
    fn weighted_sum(&self, g: Option<&RateSeq>) -> Result<f64, SeparabilityError> {
        let g_at = |n: usize| g.map_or(1.0, |s| s.at(n));
        let Tail { start, period } = self.tail;
        let prefix: f64 = (0..start).map(|n| self.weight(n) * g_at(n)).sum();
        if self.bounded {
            let block: f64 = (start..start + period)
                .map(|n| self.weight(n) * g_at(n))
                .sum();
            return Ok(prefix + block / (1.0 - self.tail_ratio));
        }
        // Growing tail: sum block by block. Each one-step ratio λ(n)/μ(n+1)
        // is a Möbius function of the block index, hence monotone, so its
        // supremum over later blocks is max(current, limit). That gives a
        // geometric bound on everything not yet summed.
        let mut total = prefix;
        let mut w = self.weight(start);
        for block in 0..MAX_SERIES_BLOCKS {
            let first = start + block * period;
            let mut sum = 0.0;
            let mut rho_bar = 1.0;
            let mut g_bar: f64 = 1.0;
            for j in 0..period {
                let n = first + j;
                sum += w * g_at(n);
                rho_bar *= self.factor(n).max(ratio_limit(&self.rates, n));
                if g.is_some() {
                    g_bar = g_bar.max(g_at(n + period) / g_at(n));
                }
                w *= self.factor(n);
            }
            total += sum;
            let r = rho_bar * g_bar;
            if r < 1.0 && sum * r / (1.0 - r) <= 1e-17 * total {
                return Ok(total);
            }
        }
        Err(SeparabilityError::SeriesStalled {
            blocks: MAX_SERIES_BLOCKS,
        })
    }
}

/// Summability of the queue marginal and its normalisation constant.
pub fn queue_marginal(model: &JointModel) -> Result<QueueMarginal, SeparabilityError> {
    let rates = model.rates().clone();
    let tail = model.effective_tail();
    let bounded = rates.is_bounded();
    let mut head = Vec::with_capacity(tail.start + tail.period);
    let mut w = 1.0;
    for n in 0..tail.start + tail.period {
        head.push(w);
        w *= rates.lambda(n) / rates.mu(n + 1);
    }
    let tail_ratio: f64 = if bounded {
        (tail.start..tail.start + tail.period)
            .map(|n| rates.lambda(n) / rates.mu(n + 1))
            .product()
    } else {
        (tail.start..tail.start + tail.period)
            .map(|n| ratio_limit(&rates, n))
            .product()
    };
    let summable = tail_ratio < 1.0 - SUMMABILITY_MARGIN;
    let near_critical = (tail_ratio - 1.0).abs() < NEAR_CRITICAL;
    if near_critical {
        log::warn!("queue marginal is near critical: tail ratio {tail_ratio}");
    }
    let mut marginal = QueueMarginal {
        rates,
        tail,
        bounded,
        tail_ratio,
        summable,
        near_critical,
        normalization: None,
        mean_arrival: None,
        head,
    };
    if summable {
        let c = marginal.weighted_sum(None)?;
        let lambda = marginal.rates.lambda_seq().clone();
        let arrivals = marginal.weighted_sum(Some(&lambda))?;
        marginal.normalization = Some(c);
        marginal.mean_arrival = Some(arrivals / c);
    }
    Ok(marginal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductFormResult {
    pub theta: Vec<f64>,
    pub marginal: QueueMarginal,
    /// Worst `‖θ·Q̃_red^(n)‖∞` over the checked levels.
    pub theta_residual: f64,
    /// Worst global-balance residual of `ξ × θ` over the checked states.
    pub balance_residual: f64,
    /// Global balance was checked on levels `0..balance_levels`.
    pub balance_levels: usize,
    working: Vec<bool>,
}

impl ProductFormResult {
    pub fn xi(&self, n: usize) -> f64 {
        self.marginal
            .xi(n)
            .expect("product form implies summability")
    }

    pub fn pi(&self, state: State) -> f64 {
        self.xi(state.level) * self.theta[state.env]
    }

    pub fn normalization(&self) -> f64 {
        self.marginal
            .normalization
            .expect("product form implies summability")
    }

    /// `θ(K_B)`.
    pub fn blocked_probability(&self) -> f64 {
        self.theta
            .iter()
            .zip(&self.working)
            .filter(|(_, w)| !**w)
            .map(|(t, _)| t)
            .sum()
    }

    /// Long-run departure rate `Σ_{m>0, k∈K_W} π(m,k)·μ(m)`, in closed form
    /// `θ(K_W) · Σ_m ξ(m)·λ(m)`.
    pub fn throughput(&self) -> f64 {
        let arrivals = self
            .marginal
            .mean_arrival
            .expect("product form implies summability");
        (1.0 - self.blocked_probability()) * arrivals
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NotSeparableReason {
    NotSummable { tail_ratio: f64 },
    NoCommonSolution { worst_residual: f64, level: usize },
    BalanceResidual { residual: f64, state: State },
}

impl std::fmt::Display for NotSeparableReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NotSeparableReason::NotSummable { tail_ratio } => {
                write!(f, "queue marginal not summable (tail ratio {tail_ratio})")
            }
            NotSeparableReason::NoCommonSolution {
                worst_residual,
                level,
            } => write!(
                f,
                "no common stationary vector (residual {worst_residual:e} at level {level})"
            ),
            NotSeparableReason::BalanceResidual { residual, state } => {
                write!(f, "global balance residual {residual:e} at {state}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Separability {
    Separable(Box<ProductFormResult>),
    NotSeparable(NotSeparableReason),
}

/// `inflow − outflow` of the global balance equation at `state` for a
/// candidate distribution `pi`.
pub fn balance_defect(model: &JointModel, state: State, pi: impl Fn(State) -> f64) -> f64 {
    let env = model.env();
    let State { level: n, env: k } = state;
    let outflow = pi(state) * model.exit_rate(state, None);
    let mut inflow = 0.0;
    if n > 0 && env.is_working(k) {
        inflow += pi(State::new(n - 1, k)) * model.lambda(n - 1);
    }
    let mu = model.mu(n + 1);
    for m in 0..env.size() {
        if env.is_working(m) {
            inflow += pi(State::new(n + 1, m)) * mu * env.r(n + 1, m, k);
        }
        if m != k {
            inflow += pi(State::new(n, m)) * env.v(n, m, k);
        }
    }
    inflow - outflow
}

/// Decide separability and, if it holds, assemble the product-form steady
/// state and verify it against the global balance equations.
pub fn product_form(model: &JointModel, tol: f64) -> Result<Separability, SeparabilityError> {
    let (theta, theta_residual) = match solve_theta(model, tol)? {
        ThetaOutcome::Common {
            theta, residual, ..
        } => (theta, residual),
        ThetaOutcome::NoCommonSolution {
            worst_residual,
            level,
            ..
        } => {
            return Ok(Separability::NotSeparable(
                NotSeparableReason::NoCommonSolution {
                    worst_residual,
                    level,
                },
            ))
        }
    };
    let marginal = queue_marginal(model)?;
    if !marginal.summable {
        return Ok(Separability::NotSeparable(
            NotSeparableReason::NotSummable {
                tail_ratio: marginal.tail_ratio,
            },
        ));
    }
    let tail = model.effective_tail();
    let balance_levels = model.check_levels() + 3;
    let working: Vec<bool> = (0..model.env_size())
        .map(|k| model.env().is_working(k))
        .collect();
    let result = ProductFormResult {
        theta,
        marginal,
        theta_residual,
        balance_residual: 0.0,
        balance_levels,
        working,
    };
    debug_assert!(balance_levels > tail.start + tail.period);
    let mut worst = (0.0, State::new(0, 0));
    for n in 0..balance_levels {
        for k in 0..model.env_size() {
            let state = State::new(n, k);
            let defect = balance_defect(model, state, |s| result.pi(s)).abs();
            if defect > worst.0 {
                worst = (defect, state);
            }
        }
    }
    if worst.0 > tol {
        return Ok(Separability::NotSeparable(
            NotSeparableReason::BalanceResidual {
                residual: worst.0,
                state: worst.1,
            },
        ));
    }
    Ok(Separability::Separable(Box::new(ProductFormResult {
        balance_residual: worst.0,
        ..result
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::LevelSeq;
    use crate::model::{
        catalog, generator_from_rates, identity, CatalogModel, CatalogParams, EnvironmentSpec,
    };
    use approx::assert_relative_eq;

    fn params(lambda: f64, mu: f64, nu: f64, gamma: f64, b: usize) -> CatalogParams {
        CatalogParams {
            lambda: Some(lambda),
            mu: Some(mu),
            nu: Some(nu),
            gamma: Some(gamma),
            eta: None,
            b: Some(b),
            rates: None,
        }
    }

    fn mm1(lambda: RateSeq, mu: RateSeq) -> JointModel {
        catalog(
            CatalogModel::Mm1Plain,
            &CatalogParams {
                rates: Some(RateFamily::new(lambda, mu)),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn onoff_a_reduced_equals_v() {
        let m = catalog(
            CatalogModel::OnOffA,
            &CatalogParams {
                lambda: Some(1.0),
                mu: Some(2.0),
                eta: Some(2.0),
                gamma: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        for n in 0..5 {
            assert_eq!(reduced_generator(&m, n).matrix, m.env().generator_at(n));
        }
    }

    #[test]
    fn base_stock_reduced_rates() {
        let (lambda, nu) = (1.5, 0.7);
        let m = catalog(CatalogModel::BaseStock, &params(lambda, 3.0, nu, 0.0, 3)).unwrap();
        for n in 0..4 {
            let q = reduced_generator(&m, n);
            for k in 0..=3usize {
                for l in 0..=3usize {
                    let expected = if l + 1 == k {
                        lambda
                    } else if l == k + 1 {
                        nu
                    } else {
                        0.0
                    };
                    if k != l {
                        assert_eq!(q.matrix[(k, l)], expected, "({k},{l})");
                    }
                }
            }
            assert!(q.max_abs_row_sum() <= 1e-12);
        }
    }

    #[test]
    fn all_blocked_reduced_is_v() {
        let v = generator_from_rates(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0, 0.0]));
        let env = EnvironmentSpec::new(
            vec!["a".into(), "b".into()],
            &[0, 1],
            LevelSeq::constant(v.clone()),
            LevelSeq::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
        )
        .unwrap();
        let m = JointModel::new(RateFamily::constant(1.0, 2.0), env);
        assert_eq!(reduced_generator(&m, 0).matrix, v);
    }

    #[test]
    fn theta_for_onoff_models() {
        let a = catalog(
            CatalogModel::OnOffA,
            &CatalogParams {
                lambda: Some(1.0),
                mu: Some(2.0),
                eta: Some(2.0),
                gamma: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let ThetaOutcome::Common { theta, .. } = solve_theta(&a, DEFAULT_TOL).unwrap() else {
            panic!("onoff_a must be separable");
        };
        assert_relative_eq!(theta[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(theta[1], 2.0 / 3.0, epsilon = 1e-12);

        let b = catalog(
            CatalogModel::OnOffB,
            &CatalogParams {
                lambda: Some(1.0),
                mu: Some(3.0),
                eta: Some(2.0),
                gamma: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let ThetaOutcome::Common { theta, .. } = solve_theta(&b, DEFAULT_TOL).unwrap() else {
            panic!("onoff_b must be separable");
        };
        assert_relative_eq!(theta[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(theta[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn perishable_o_has_no_common_theta() {
        let m = catalog(CatalogModel::PerishableO, &params(1.0, 2.0, 1.0, 1.0, 2)).unwrap();
        let ThetaOutcome::NoCommonSolution {
            worst_residual,
            level,
            ..
        } = solve_theta(&m, DEFAULT_TOL).unwrap()
        else {
            panic!("perishable_o with b = 2 is not separable");
        };
        assert_eq!(level, 1);
        assert!(worst_residual > 0.1);
    }

    #[test]
    fn reducible_level_zero_tries_every_class() {
        // Level 0: two closed classes {a} and {b}; later levels move a -> b,
        // so only the vector concentrated on b survives.
        let v0 = DMatrix::zeros(2, 2);
        let v1 = generator_from_rates(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let env = EnvironmentSpec::new(
            vec!["a".into(), "b".into()],
            &[],
            LevelSeq::new(vec![v0], vec![v1]).unwrap(),
            LevelSeq::constant(identity(2)),
        )
        .unwrap();
        let m = JointModel::new(RateFamily::constant(1.0, 2.0), env);
        let ThetaOutcome::Common { theta, .. } = solve_theta(&m, DEFAULT_TOL).unwrap() else {
            panic!("theta concentrated on b is common");
        };
        assert_eq!(theta, vec![0.0, 1.0]);
    }

    #[test]
    fn geometric_marginal() {
        let m = mm1(RateSeq::constant(1.0), RateSeq::constant(2.0));
        let q = queue_marginal(&m).unwrap();
        assert!(q.summable);
        assert_eq!(q.tail_ratio, 0.5);
        assert_relative_eq!(q.normalization.unwrap(), 2.0, epsilon = 1e-15);
        for n in 0..30 {
            assert_relative_eq!(
                q.xi(n).unwrap(),
                0.5f64.powi(n as i32 + 1),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(q.mean_arrival.unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn overloaded_marginal_not_summable() {
        let m = mm1(RateSeq::constant(2.0), RateSeq::constant(1.0));
        let q = queue_marginal(&m).unwrap();
        assert!(!q.summable);
        assert_eq!(q.tail_ratio, 2.0);
        assert_eq!(q.normalization, None);
        let critical =
            queue_marginal(&mm1(RateSeq::constant(1.0), RateSeq::constant(1.0))).unwrap();
        assert!(!critical.summable);
        assert!(critical.near_critical);
    }

    #[test]
    fn alternating_service_marginal_matches_partial_sums() {
        // μ(odd) = 3, μ(even) = 1/2
        let m = mm1(
            RateSeq::constant(1.0),
            RateSeq::new(vec![], vec![0.5, 3.0]).unwrap(),
        );
        let q = queue_marginal(&m).unwrap();
        assert_relative_eq!(q.tail_ratio, 2.0 / 3.0, epsilon = 1e-15);
        // oracle: direct partial sums of the product series
        let mut w = 1.0;
        let mut partial = 0.0;
        for n in 0..400 {
            partial += w;
            let mu_next = if (n + 1) % 2 == 1 { 3.0 } else { 0.5 };
            w *= 1.0 / mu_next;
        }
        assert_relative_eq!(q.normalization.unwrap(), partial, max_relative = 1e-12);
    }

    #[test]
    fn growing_marginal_is_poisson() {
        // λ(n) = λ (n+1), μ(n) = μ n: ξ is geometric with ratio λ/μ
        let m = catalog(
            CatalogModel::OnOffB,
            &CatalogParams {
                lambda: Some(1.0),
                mu: Some(4.0),
                eta: Some(1.0),
                gamma: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let q = queue_marginal(&m).unwrap();
        assert!(q.summable);
        assert_relative_eq!(q.tail_ratio, 0.25, epsilon = 1e-15);
        assert_relative_eq!(q.normalization.unwrap(), 4.0 / 3.0, max_relative = 1e-14);
        // Σ ξ(n) λ (n+1) = λ (1 + E[X]) with E[X] = ρ/(1-ρ)
        assert_relative_eq!(
            q.mean_arrival.unwrap(),
            1.0 + 1.0 / 3.0,
            max_relative = 1e-13
        );
    }

    #[test]
    fn base_stock_product_form() {
        let m = catalog(CatalogModel::BaseStock, &params(1.0, 2.0, 1.0, 0.0, 2)).unwrap();
        let Separability::Separable(pf) = product_form(&m, DEFAULT_TOL).unwrap() else {
            panic!("base stock is separable");
        };
        for k in 0..3 {
            assert_relative_eq!(pf.theta[k], 1.0 / 3.0, epsilon = 1e-15);
        }
        for n in 0..10 {
            assert_relative_eq!(pf.xi(n), 0.5f64.powi(n as i32 + 1), max_relative = 1e-14);
        }
        assert!(pf.balance_residual <= 1e-15);
        assert_relative_eq!(pf.throughput(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn perishable_plus_product_form_theta() {
        let (lambda, nu, gamma) = (1.0, 1.0, 0.5);
        let m = catalog(
            CatalogModel::PerishablePlus,
            &params(lambda, 2.0, nu, gamma, 3),
        )
        .unwrap();
        let Separability::Separable(pf) = product_form(&m, DEFAULT_TOL).unwrap() else {
            panic!("perishable_plus is separable");
        };
        // θ(k) ∝ ∏_{ℓ<k} ν / (λ + γ·(ℓ)₊) for d(k) = (k-1)₊
        let mut w = vec![1.0];
        for l in 0..3 {
            let d = l as f64;
            w.push(w[l] * nu / (lambda + gamma * d));
        }
        let total: f64 = w.iter().sum();
        for (t, wk) in pf.theta.iter().zip(&w) {
            assert_relative_eq!(*t, wk / total, epsilon = 1e-14);
        }
    }

    #[test]
    fn not_separable_reasons() {
        let m = catalog(CatalogModel::PerishableO, &params(1.0, 2.0, 1.0, 1.0, 2)).unwrap();
        assert!(matches!(
            product_form(&m, DEFAULT_TOL).unwrap(),
            Separability::NotSeparable(NotSeparableReason::NoCommonSolution { .. })
        ));
        let m = catalog(CatalogModel::BaseStock, &params(2.0, 1.0, 1.0, 0.0, 2)).unwrap();
        assert_eq!(
            product_form(&m, DEFAULT_TOL).unwrap(),
            Separability::NotSeparable(NotSeparableReason::NotSummable { tail_ratio: 2.0 })
        );
    }
}
