//! Two-sided throughput bounds for the perishable inventory.
//!
//! The target system ages `γ·k` items at an empty queue and `γ·(k−1)` while
//! the server is busy. Ageing every item gives the lower system, sparing one
//! item gives the upper system. Both are product-form, so their throughputs
//! are exact.

use std::fmt;
use std::io;

use thiserror::Error;

use crate::model::{catalog, CatalogModel, CatalogParams, JointModel, ModelError};
use crate::numerics::{auto_truncate, metrics, NumericsError};
use crate::separability::{
    product_form, NotSeparableReason, Separability, SeparabilityError, DEFAULT_TOL,
};
use crate::simulate::{
    departure_values, isotone_check, simulate, SimConfig, SimError, ThroughputEstimate,
};

/// Tolerance for comparing exact throughputs.
pub const ORDER_TOL: f64 = 1e-9;
/// Levels on which the ageing order is checked.
const ORDER_CHECK_LEVELS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("ageing rates out of order at level {level}, stock {stock}")]
    AgeingOrder { level: usize, stock: usize },
    #[error("{system} system is not product-form: {reason}")]
    NotSeparableBoundSystem {
        system: &'static str,
        reason: NotSeparableReason,
    },
    #[error(transparent)]
    Separability(#[from] SeparabilityError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("lower bound {minus} exceeds upper bound {plus}")]
    BoundsInverted { minus: f64, plus: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub b: usize,
}

impl BoundParams {
    pub fn validate(&self) -> Result<(), BoundsError> {
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("nu", self.nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BoundsError::InvalidParams(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(BoundsError::InvalidParams(format!(
                "gamma = {} must be non-negative",
                self.gamma
            )));
        }
        if self.b == 0 {
            return Err(BoundsError::InvalidParams("b must be at least 1".into()));
        }
        if self.lambda >= self.mu {
            return Err(BoundsError::InvalidParams(format!(
                "lambda = {} must be below mu = {}",
                self.lambda, self.mu
            )));
        }
        Ok(())
    }

    fn catalog_params(&self) -> CatalogParams {
        CatalogParams {
            lambda: Some(self.lambda),
            mu: Some(self.mu),
            nu: Some(self.nu),
            gamma: Some(self.gamma),
            eta: None,
            b: Some(self.b),
            rates: None,
        }
    }

    /// Which known result covers the ordering for these parameters.
    pub fn regime(&self) -> Regime {
        if self.b == 1 {
            Regime::SingleItem
        } else if self.mu == self.gamma {
            Regime::ServiceEqualsAgeing
        } else if self.lambda <= self.gamma {
            Regime::ArrivalBelowAgeing
        } else {
            Regime::Conjecture
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `b = 1`: all three systems have closed forms.
    SingleItem,
    /// `μ = γ`: both bounds are proved.
    ServiceEqualsAgeing,
    /// `λ ≤ γ`: the lower bound is proved.
    ArrivalBelowAgeing,
    /// Outside the proved cases the ordering is an observation.
    Conjecture,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::SingleItem => "R1",
            Regime::ServiceEqualsAgeing => "R2-full",
            Regime::ArrivalBelowAgeing => "R2-lower",
            Regime::Conjecture => "conjecture",
        }
    }

    pub fn lower_proved(self) -> bool {
        self != Regime::Conjecture
    }

    pub fn upper_proved(self) -> bool {
        matches!(self, Regime::SingleItem | Regime::ServiceEqualsAgeing)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTriple {
    pub minus: JointModel,
    pub target: JointModel,
    pub plus: JointModel,
}

/// Build the three systems and verify the ageing order
/// `γ(k−1)₊ ≤ target ≤ γk` on a rectangle of states.
pub fn build_triple(params: &BoundParams) -> Result<BoundTriple, BoundsError> {
    params.validate()?;
    let p = params.catalog_params();
    let triple = BoundTriple {
        minus: catalog(CatalogModel::PerishableMinus, &p)?,
        target: catalog(CatalogModel::PerishableO, &p)?,
        plus: catalog(CatalogModel::PerishablePlus, &p)?,
    };
    for level in 0..ORDER_CHECK_LEVELS {
        for stock in 1..=params.b {
            let rate = |m: &JointModel| m.env().v(level, stock, stock - 1);
            let (lo, mid, hi) = (
                rate(&triple.plus),
                rate(&triple.target),
                rate(&triple.minus),
            );
            if !(lo <= mid && mid <= hi) {
                return Err(BoundsError::AgeingOrder { level, stock });
            }
        }
    }
    Ok(triple)
}

/// Closed-form throughputs for `b = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleItemThroughputs {
    pub minus: f64,
    pub target: f64,
    pub plus: f64,
}

pub fn single_item_throughputs(lambda: f64, mu: f64, nu: f64, gamma: f64) -> SingleItemThroughputs {
    let c = mu / (mu - lambda) * (1.0 + lambda / nu) + gamma / nu;
    SingleItemThroughputs {
        minus: lambda * nu / (lambda + gamma + nu),
        target: lambda * mu / ((mu - lambda) * c),
        plus: lambda * nu / (lambda + nu),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactThroughput {
    pub value: f64,
    pub theta_residual: f64,
    pub balance_residual: f64,
}

fn exact_throughput(
    model: &JointModel,
    system: &'static str,
) -> Result<ExactThroughput, BoundsError> {
    match product_form(model, DEFAULT_TOL)? {
        Separability::Separable(pf) => Ok(ExactThroughput {
            value: pf.throughput(),
            theta_residual: pf.theta_residual,
            balance_residual: pf.balance_residual,
        }),
        Separability::NotSeparable(reason) => {
            Err(BoundsError::NotSeparableBoundSystem { system, reason })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotoneSummary {
    pub system: &'static str,
    pub cap: usize,
    pub horizon: usize,
    pub isotone: bool,
    pub interior_violations: usize,
    pub boundary_violations: usize,
    pub worst_interior_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    /// Tolerance for the doubling truncation of the target system.
    pub truncation_tol: f64,
    pub simulation: Option<SimConfig>,
    /// `(cap, jump horizon)` for the departure-value isotonicity checks.
    pub isotone: Option<(usize, usize)>,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            truncation_tol: 1e-12,
            simulation: None,
            isotone: Some((60, 50)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub params: BoundParams,
    pub regime: Regime,
    pub th_minus: ExactThroughput,
    pub th_plus: ExactThroughput,
    pub th_target_truncated: f64,
    pub truncation_cap: usize,
    pub th_target_closed_form: Option<f64>,
    pub th_target_simulated: Option<ThroughputEstimate>,
    pub isotone: Vec<IsotoneSummary>,
    /// `TH^o − TH^−` and `TH^+ − TH^o` on the truncated value.
    pub lower_margin: f64,
    pub upper_margin: f64,
    pub exact_ordering_holds: bool,
    /// Whether the confidence interval reaches into `[TH^−, TH^+]`.
    pub simulated_ordering_holds: Option<bool>,
    pub ordering_holds: bool,
}

pub fn bound_report(
    params: &BoundParams,
    options: &BoundOptions,
) -> Result<BoundReport, BoundsError> {
    let triple = build_triple(params)?;
    let th_minus = exact_throughput(&triple.minus, "lower")?;
    let th_plus = exact_throughput(&triple.plus, "upper")?;
    if th_minus.value > th_plus.value + ORDER_TOL {
        return Err(BoundsError::BoundsInverted {
            minus: th_minus.value,
            plus: th_plus.value,
        });
    }
    let auto = auto_truncate(&triple.target, options.truncation_tol)?;
    let th_target = metrics(&auto.solution, &triple.target).throughput;
    let th_target_closed_form = (params.b == 1)
        .then(|| single_item_throughputs(params.lambda, params.mu, params.nu, params.gamma).target);
    let th_target_simulated = match &options.simulation {
        Some(config) => Some(simulate(&triple.target, config)?.estimate),
        None => None,
    };
    let isotone = match options.isotone {
        Some((cap, horizon)) => [
            ("lower", &triple.minus),
            ("target", &triple.target),
            ("upper", &triple.plus),
        ]
        .into_iter()
        .map(|(system, model)| {
            let report = isotone_check(&departure_values(model, cap, horizon));
            let interior: Vec<_> = report.violations.iter().filter(|v| !v.boundary).collect();
            IsotoneSummary {
                system,
                cap,
                horizon,
                isotone: report.isotone,
                interior_violations: interior.len(),
                boundary_violations: report.violations.len() - interior.len(),
                worst_interior_margin: interior.iter().map(|v| v.margin).fold(0.0, f64::max),
            }
        })
        .collect(),
        None => Vec::new(),
    };
    let lower_margin = th_target - th_minus.value;
    let upper_margin = th_plus.value - th_target;
    let exact_ordering_holds = lower_margin >= -ORDER_TOL && upper_margin >= -ORDER_TOL;
    let simulated_ordering_holds = th_target_simulated.as_ref().map(|e| {
        let (lo, hi) = e.interval();
        th_minus.value <= hi + ORDER_TOL && lo <= th_plus.value + ORDER_TOL
    });
    if !exact_ordering_holds {
        log::warn!(
            "throughput ordering violated in regime {}: lower margin {lower_margin:e}, upper margin {upper_margin:e}",
            params.regime()
        );
    }
    Ok(BoundReport {
        params: *params,
        regime: params.regime(),
        th_minus,
        th_plus,
        th_target_truncated: th_target,
        truncation_cap: auto.solution.cap,
        th_target_closed_form,
        th_target_simulated,
        isotone,
        lower_margin,
        upper_margin,
        exact_ordering_holds,
        simulated_ordering_holds,
        ordering_holds: exact_ordering_holds && simulated_ordering_holds.unwrap_or(true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub th_minus: f64,
    pub th_target: f64,
    pub th_plus: f64,
    pub ordering_holds: bool,
}

/// Exact bounds and truncated target throughput along a grid of `γ`.
pub fn sweep_gamma(
    base: &BoundParams,
    gammas: &[f64],
    truncation_tol: f64,
) -> Result<Vec<SweepRow>, BoundsError> {
    let options = BoundOptions {
        truncation_tol,
        simulation: None,
        isotone: None,
    };
    gammas
        .iter()
        .map(|&gamma| {
            let r = bound_report(&BoundParams { gamma, ..*base }, &options)?;
            Ok(SweepRow {
                gamma,
                th_minus: r.th_minus.value,
                th_target: r.th_target_truncated,
                th_plus: r.th_plus.value,
                ordering_holds: r.exact_ordering_holds,
            })
        })
        .collect()
}

/// CSV with header `gamma,th_minus,th_o,th_plus`.
pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "th_minus", "th_o", "th_plus"])?;
    for r in rows {
        w.write_record([
            r.gamma.to_string(),
            r.th_minus.to_string(),
            r.th_target.to_string(),
            r.th_plus.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
