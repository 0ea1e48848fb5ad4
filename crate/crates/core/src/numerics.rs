//! Stationary analysis on a truncated state space.
//!
//! The truncation at cap `N` keeps every rate except the arrivals at level
//! `N`. States are numbered level-major, `index = n·|K| + k`, which makes the
//! generator banded with half-width `2|K| − 1`.

use std::io;

use thiserror::Error;

use crate::linalg::BandedRates;
use crate::model::{JointModel, State};

/// Uniformization constant relative to the largest exit rate.
pub const UNIFORMIZATION_FACTOR: f64 = 1.05;
/// Largest state space `auto_truncate` will try.
pub const MAX_AUTO_STATES: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("cap {cap} is below the minimum {min}")]
    CapTooSmall { cap: usize, min: usize },
    #[error("truncated chain is not irreducible: elimination stalled at {state}")]
    NotIrreducibleTruncation { state: State },
    #[error(
        "power iteration did not reach {tol:e} in {iterations} iterations (last change {change:e})"
    )]
    NotConvergent {
        iterations: usize,
        tol: f64,
        change: f64,
    },
    #[error(
        "metrics still moving at cap {cap} ({states} states): the model is likely not ergodic"
    )]
    Diverging { cap: usize, states: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMethod {
    /// State reduction from the top level down, exact to round-off.
    Elimination,
    /// Uniformized power iteration until the L1 change drops below `tol`.
    Power { tol: f64, max_iter: usize },
}

/// Sparse rows of the truncated generator.
struct TruncatedGenerator {
    env_size: usize,
    rows: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
}

impl TruncatedGenerator {
    fn new(model: &JointModel, cap: usize) -> Self {
        let env_size = model.env_size();
        let size = (cap + 1) * env_size;
        let mut rows = Vec::with_capacity(size);
        let mut exit = Vec::with_capacity(size);
        for i in 0..size {
            let from = State::new(i / env_size, i % env_size);
            let mut row = Vec::new();
            let mut out = 0.0;
            model.for_each_transition(from, Some(cap), |to, rate| {
                row.push((to.level * env_size + to.env, rate));
                out += rate;
            });
            rows.push(row);
            exit.push(out);
        }
        Self {
            env_size,
            rows,
            exit,
        }
    }

    fn state(&self, i: usize) -> State {
        State::new(i / self.env_size, i % self.env_size)
    }

    /// `‖π·Q‖∞`.
    fn residual(&self, pi: &[f64]) -> f64 {
        let mut flow: Vec<f64> = pi.iter().zip(&self.exit).map(|(p, e)| -p * e).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, rate) in row {
                flow[j] += pi[i] * rate;
            }
        }
        flow.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn eliminate(&self) -> Result<Vec<f64>, NumericsError> {
        let mut banded = BandedRates::new(
            self.rows.len(),
            (2 * self.env_size).saturating_sub(1).max(1),
        );
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, rate) in row {
                banded.add(i, j, rate);
            }
        }
        banded
            .stationary()
            .map_err(|s| NumericsError::NotIrreducibleTruncation {
                state: self.state(s.state),
            })
    }

    fn power(&self, tol: f64, max_iter: usize) -> Result<Vec<f64>, NumericsError> {
        let size = self.rows.len();
        let uniform = UNIFORMIZATION_FACTOR * self.exit.iter().copied().fold(0.0, f64::max);
        let mut x = vec![1.0 / size as f64; size];
        let mut next = vec![0.0; size];
        let mut change = f64::INFINITY;
        for _ in 0..max_iter {
            for (i, n) in next.iter_mut().enumerate() {
                *n = x[i] * (1.0 - self.exit[i] / uniform);
            }
            for (i, row) in self.rows.iter().enumerate() {
                for &(j, rate) in row {
                    next[j] += x[i] * rate / uniform;
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut x, &mut next);
            if change < tol {
                return Ok(x);
            }
        }
        Err(NumericsError::NotConvergent {
            iterations: max_iter,
            tol,
            change,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSolution {
    pub cap: usize,
    pub env_size: usize,
    /// Level-major stationary vector over `{0..=cap} × K`.
    pub pi: Vec<f64>,
    /// `‖π·Q_N‖∞`.
    pub residual: f64,
    /// Mass on the top `⌈N/10⌉ + 1` levels.
    pub truncation_estimate: f64,
}

impl TruncatedSolution {
    pub fn get(&self, state: State) -> f64 {
        if state.level > self.cap {
            0.0
        } else {
            self.pi[state.level * self.env_size + state.env]
        }
    }

    pub fn level_mass(&self, n: usize) -> f64 {
        (0..self.env_size).map(|k| self.get(State::new(n, k))).sum()
    }

    pub fn env_marginal(&self) -> Vec<f64> {
        (0..self.env_size)
            .map(|k| (0..=self.cap).map(|n| self.get(State::new(n, k))).sum())
            .collect()
    }

    pub fn states(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.pi
            .iter()
            .enumerate()
            .map(|(i, &p)| (State::new(i / self.env_size, i % self.env_size), p))
    }

    /// CSV with header `n,k,pi`; `k` is the environment label.
    pub fn write_csv<W: io::Write>(&self, model: &JointModel, out: W) -> csv::Result<()> {
        let labels = model.env().labels();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "k", "pi"])?;
        for (s, p) in self.states() {
            w.write_record([s.level.to_string(), labels[s.env].clone(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Smallest cap accepted by [`solve_truncated`].
pub fn min_cap(model: &JointModel) -> usize {
    let t = model.effective_tail();
    t.start + t.period + 2
}

pub fn solve_truncated(
    model: &JointModel,
    cap: usize,
    method: SolveMethod,
) -> Result<TruncatedSolution, NumericsError> {
    let min = min_cap(model);
    if cap < min {
        return Err(NumericsError::CapTooSmall { cap, min });
    }
    let generator = TruncatedGenerator::new(model, cap);
    let pi = match method {
        SolveMethod::Elimination => generator.eliminate()?,
        SolveMethod::Power { tol, max_iter } => generator.power(tol, max_iter)?,
    };
    let residual = generator.residual(&pi);
    let top = cap - cap.div_ceil(10);
    let env_size = model.env_size();
    let truncation_estimate = pi[top * env_size..].iter().sum();
    Ok(TruncatedSolution {
        cap,
        env_size,
        pi,
        residual,
        truncation_estimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `Σ_{m>0, k∈K_W} π(m,k)·μ(m)`.
    pub throughput: f64,
    pub mean_queue_length: f64,
    pub blocked_probability: f64,
    /// `Σ_{k∈K_B} π(n,k)·λ(n)`.
    pub loss_rate: f64,
}

pub fn metrics(solution: &TruncatedSolution, model: &JointModel) -> Metrics {
    let env = model.env();
    let mut m = Metrics {
        throughput: 0.0,
        mean_queue_length: 0.0,
        blocked_probability: 0.0,
        loss_rate: 0.0,
    };
    for (s, p) in solution.states() {
        m.mean_queue_length += s.level as f64 * p;
        if env.is_working(s.env) {
            m.throughput += p * model.mu(s.level);
        } else {
            m.blocked_probability += p;
            m.loss_rate += p * model.lambda(s.level);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutReport {
    /// Worst `|up − down| / max(up, down)` over the checked cuts.
    pub worst_relative: f64,
    pub worst_level: usize,
    /// Cuts between `n` and `n+1` for `n < checked_levels`.
    pub checked_levels: usize,
    pub holds: bool,
}

/// Check `λ(n)·Σ_{K_W} π(n,·) = μ(n+1)·Σ_{K_W} π(n+1,·)` on each cut.
///
/// Interior cuts stop at `N − ⌈N/10⌉`; with `include_boundary` the cut at
/// the cap, where the true arrival rate meets no mass, is checked as well.
pub fn check_cut_structure(
    solution: &TruncatedSolution,
    model: &JointModel,
    tol: f64,
    include_boundary: bool,
) -> CutReport {
    let cap = solution.cap;
    let checked_levels = if include_boundary {
        cap + 1
    } else {
        cap - cap.div_ceil(10)
    };
    let working = model.env().working_states();
    let mass = |n: usize| -> f64 {
        working
            .iter()
            .map(|&k| solution.get(State::new(n, k)))
            .sum()
    };
    let mut worst = (0.0, 0);
    for n in 0..checked_levels {
        let up = model.lambda(n) * mass(n);
        let down = model.mu(n + 1) * mass(n + 1);
        let scale = up.max(down);
        let rel = if scale > 0.0 {
            (up - down).abs() / scale
        } else {
            0.0
        };
        if rel > worst.0 {
            worst = (rel, n);
        }
    }
    CutReport {
        worst_relative: worst.0,
        worst_level: worst.1,
        checked_levels,
        holds: worst.0 <= tol,
    }
}

/// One step of the doubling heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationStep {
    pub cap: usize,
    pub throughput: f64,
    pub blocked_probability: f64,
    pub truncation_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoTruncation {
    pub solution: TruncatedSolution,
    pub history: Vec<TruncationStep>,
}

/// Heuristic cap selection: double the cap until throughput and blocked
/// probability move by less than `tol` and the top-decile mass is below
/// `tol`. Not an error bound.
pub fn auto_truncate(model: &JointModel, tol: f64) -> Result<AutoTruncation, NumericsError> {
    let t = model.effective_tail();
    let env_size = model.env_size();
    let mut cap = 64.max(4 * (t.start + t.period)).max(min_cap(model));
    let mut history: Vec<TruncationStep> = Vec::new();
    loop {
        let states = (cap + 1) * env_size;
        if states > MAX_AUTO_STATES {
            let last = history.last().map_or(cap, |s| s.cap);
            return Err(NumericsError::Diverging {
                cap: last,
                states: (last + 1) * env_size,
            });
        }
        let solution = solve_truncated(model, cap, SolveMethod::Elimination)?;
        let m = metrics(&solution, model);
        let step = TruncationStep {
            cap,
            throughput: m.throughput,
            blocked_probability: m.blocked_probability,
            truncation_estimate: solution.truncation_estimate,
        };
        let settled = history.last().is_some_and(|prev| {
            (prev.throughput - step.throughput).abs() < tol
                && (prev.blocked_probability - step.blocked_probability).abs() < tol
                && step.truncation_estimate < tol
        });
        log::debug!(
            "cap {cap}: TH {} P_B {}",
            step.throughput,
            step.blocked_probability
        );
        history.push(step);
        if settled {
            return Ok(AutoTruncation { solution, history });
        }
        cap *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, CatalogModel, CatalogParams, RateFamily};
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

    #[test]
    fn mm1_is_geometric() {
        let sol = solve_truncated(&mm1(1.0, 2.0), 100, SolveMethod::Elimination).unwrap();
        let norm = 1.0 - 0.5f64.powi(101);
        for n in 0..=100 {
            let exact = 0.5f64.powi(n as i32 + 1) / norm;
            assert!((sol.level_mass(n) - exact).abs() <= 1e-12);
        }
        assert!(sol.residual <= 1e-15);
        assert_relative_eq!(
            metrics(&sol, &mm1(1.0, 2.0)).throughput,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn perishable_b1_closed_form() {
        let m = inventory(CatalogModel::PerishableO, 1.0, 2.0, 1.0, 1.0, 1);
        let sol = solve_truncated(&m, 200, SolveMethod::Elimination).unwrap();
        assert_relative_eq!(sol.get(State::new(0, 0)), 0.4, epsilon = 1e-12);
        assert_relative_eq!(sol.get(State::new(0, 1)), 0.2, epsilon = 1e-12);
        for n in 1..50 {
            let exact = 0.5f64.powi(n as i32) / 5.0;
            assert_relative_eq!(sol.get(State::new(n, 0)), exact, epsilon = 1e-12);
            assert_relative_eq!(sol.get(State::new(n, 1)), exact, epsilon = 1e-12);
        }
        assert_relative_eq!(metrics(&sol, &m).throughput, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn cap_below_minimum() {
        let m = inventory(CatalogModel::PerishableO, 1.0, 2.0, 1.0, 1.0, 2);
        assert_eq!(
            solve_truncated(&m, 3, SolveMethod::Elimination),
            Err(NumericsError::CapTooSmall { cap: 3, min: 4 })
        );
    }

    #[test]
    fn elimination_and_power_agree() {
        let m = inventory(CatalogModel::PerishableO, 1.0, 2.0, 1.0, 1.0, 3);
        let exact = solve_truncated(&m, 40, SolveMethod::Elimination).unwrap();
        let power = solve_truncated(
            &m,
            40,
            SolveMethod::Power {
                tol: 1e-14,
                max_iter: 1_000_000,
            },
        )
        .unwrap();
        let worst = exact
            .pi
            .iter()
            .zip(&power.pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn power_iteration_cap() {
        let m = mm1(1.0, 2.0);
        assert!(matches!(
            solve_truncated(
                &m,
                50,
                SolveMethod::Power {
                    tol: 1e-300,
                    max_iter: 5
                }
            ),
            Err(NumericsError::NotConvergent { iterations: 5, .. })
        ));
    }

    #[test]
    fn cut_identity_interior_and_boundary() {
        let m = inventory(CatalogModel::PerishableO, 1.0, 2.0, 1.0, 1.0, 2);
        let sol = solve_truncated(&m, 300, SolveMethod::Elimination).unwrap();
        let interior = check_cut_structure(&sol, &m, 1e-8, false);
        assert!(interior.holds, "{interior:?}");
        assert_eq!(interior.checked_levels, 270);
        let boundary = check_cut_structure(&sol, &m, 1e-8, true);
        assert!(!boundary.holds);
        assert_eq!(boundary.worst_level, 300);
    }

    #[test]
    fn auto_truncate_converges_quickly() {
        let m = inventory(CatalogModel::BaseStock, 1.0, 2.0, 1.0, 0.0, 2);
        let auto = auto_truncate(&m, 1e-9).unwrap();
        assert!(auto.solution.cap <= 128);
        assert_relative_eq!(
            metrics(&auto.solution, &m).throughput,
            2.0 / 3.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn auto_truncate_diverges_when_overloaded() {
        assert!(matches!(
            auto_truncate(&mm1(2.0, 1.0), 1e-9),
            Err(NumericsError::Diverging { .. })
        ));
    }

    #[test]
    fn csv_export() {
        let m = inventory(CatalogModel::BaseStock, 1.0, 2.0, 1.0, 0.0, 1);
        let sol = solve_truncated(&m, 3, SolveMethod::Elimination).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,k,pi");
        assert_eq!(lines.len(), 1 + 8);
        assert!(lines[1].starts_with("0,0,"));
    }
}
