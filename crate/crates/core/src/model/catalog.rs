//! Ready-made queueing-environment models.
//!
//! Inventory models use `K = {0, …, b}` (stock on hand) with `K_B = {0}`:
//! a stock-out blocks the server and arriving customers are lost. Each
//! service consumes one item (`R_n(k, k-1) = 1`, `R_n(0, 0) = 1`) and a single
//! replenishment server refills at rate `ν` while the stock is below `b`.
//! The perishable variants add a loss `k → k-1` at rate `γ·d(k)`:
//!
//! | model              | `d(k)` at `n = 0` | `d(k)` at `n > 0` |
//! |--------------------|-------------------|-------------------|
//! | `perishable_minus` | `k`               | `k`               |
//! | `perishable_o`     | `k`               | `k - 1`           |
//! | `perishable_plus`  | `(k - 1)₊`        | `(k - 1)₊`        |
//!
//! The on-off models have `K = {off, on}`, `K_B = {off}` and level dependent
//! switching rates `v_n(off, on) = η (n+1)`, `v_n(on, off) = γ (n+1)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::{generator_from_rates, identity, EnvironmentSpec, JointModel, ModelError, RateFamily};
use crate::level::{LevelSeq, RateSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogModel {
    BaseStock,
    OnOffA,
    OnOffB,
    PerishableO,
    PerishableMinus,
    PerishablePlus,
    Mm1Plain,
}

impl CatalogModel {
    pub const ALL: [CatalogModel; 7] = [
        CatalogModel::BaseStock,
        CatalogModel::OnOffA,
        CatalogModel::OnOffB,
        CatalogModel::PerishableO,
        CatalogModel::PerishableMinus,
        CatalogModel::PerishablePlus,
        CatalogModel::Mm1Plain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CatalogModel::BaseStock => "base_stock",
            CatalogModel::OnOffA => "onoff_a",
            CatalogModel::OnOffB => "onoff_b",
            CatalogModel::PerishableO => "perishable_o",
            CatalogModel::PerishableMinus => "perishable_minus",
            CatalogModel::PerishablePlus => "perishable_plus",
            CatalogModel::Mm1Plain => "mm1_plain",
        }
    }
}

impl fmt::Display for CatalogModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CatalogModel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CatalogModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ModelError::UnknownModel(s.to_string()))
    }
}

/// Parameters for [`catalog`]. Unused parameters are ignored; `rates`, when
/// given, replaces the constant `λ`, `μ` of every model except `onoff_b`,
/// whose rates are part of its definition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatalogParams {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    pub b: Option<usize>,
    pub rates: Option<RateFamily>,
}

fn positive(name: &str, value: Option<f64>) -> Result<f64, ModelError> {
    match value {
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(ModelError::InvalidParam(format!(
            "{name} = {v} must be positive"
        ))),
        None => Err(ModelError::InvalidParam(format!("{name} is required"))),
    }
}

fn non_negative(name: &str, value: Option<f64>) -> Result<f64, ModelError> {
    match value {
        Some(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(ModelError::InvalidParam(format!(
            "{name} = {v} must be non-negative"
        ))),
        None => Err(ModelError::InvalidParam(format!("{name} is required"))),
    }
}

fn stock_level(value: Option<usize>) -> Result<usize, ModelError> {
    match value {
        Some(b) if b >= 1 => Ok(b),
        Some(b) => Err(ModelError::InvalidParam(format!(
            "b = {b} must be at least 1"
        ))),
        None => Err(ModelError::InvalidParam("b is required".into())),
    }
}

fn queue_rates(params: &CatalogParams) -> Result<RateFamily, ModelError> {
    match &params.rates {
        Some(r) => Ok(r.clone()),
        None => Ok(RateFamily::constant(
            positive("lambda", params.lambda)?,
            positive("mu", params.mu)?,
        )),
    }
}

fn stock_labels(b: usize) -> Vec<String> {
    (0..=b).map(|k| k.to_string()).collect()
}

/// `R_n(0,0) = 1`, `R_n(k, k-1) = 1`.
fn consume_one(b: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(b + 1, b + 1);
    r[(0, 0)] = 1.0;
    for k in 1..=b {
        r[(k, k - 1)] = 1.0;
    }
    r
}

/// Replenishment at `ν` below `b` plus perishing at `γ·d(k)`.
fn inventory_generator(b: usize, nu: f64, gamma: f64, d: impl Fn(usize) -> usize) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(b + 1, b + 1);
    for k in 0..b {
        v[(k, k + 1)] = nu;
    }
    for k in 1..=b {
        v[(k, k - 1)] = gamma * d(k) as f64;
    }
    generator_from_rates(v)
}

fn inventory_model(
    params: &CatalogParams,
    generators: Vec<DMatrix<f64>>,
    b: usize,
) -> Result<JointModel, ModelError> {
    let rates = queue_rates(params)?;
    let (prefix, tail) = match generators.len() {
        1 => (Vec::new(), generators),
        _ => {
            let mut g = generators;
            let tail = g.split_off(1);
            (g, tail)
        }
    };
    let env = EnvironmentSpec::new(
        stock_labels(b),
        &[0],
        LevelSeq::new(prefix, tail)?,
        LevelSeq::constant(consume_one(b)),
    )?;
    Ok(JointModel::new(rates, env))
}

fn onoff_generator(eta: f64, gamma: f64) -> DMatrix<f64> {
    generator_from_rates(DMatrix::from_row_slice(2, 2, &[0.0, eta, gamma, 0.0]))
}

pub fn catalog(model: CatalogModel, params: &CatalogParams) -> Result<JointModel, ModelError> {
    match model {
        CatalogModel::Mm1Plain => {
            let env = EnvironmentSpec::new(
                vec!["up".into()],
                &[],
                LevelSeq::constant(DMatrix::zeros(1, 1)),
                LevelSeq::constant(identity(1)),
            )?;
            Ok(JointModel::new(queue_rates(params)?, env))
        }
        CatalogModel::BaseStock => {
            let b = stock_level(params.b)?;
            let nu = positive("nu", params.nu)?;
            inventory_model(params, vec![inventory_generator(b, nu, 0.0, |_| 0)], b)
        }
        CatalogModel::PerishableO => {
            let b = stock_level(params.b)?;
            let nu = positive("nu", params.nu)?;
            let gamma = non_negative("gamma", params.gamma)?;
            let idle = inventory_generator(b, nu, gamma, |k| k);
            let busy = inventory_generator(b, nu, gamma, |k| k - 1);
            inventory_model(params, vec![idle, busy], b)
        }
        CatalogModel::PerishableMinus => {
            let b = stock_level(params.b)?;
            let nu = positive("nu", params.nu)?;
            let gamma = non_negative("gamma", params.gamma)?;
            inventory_model(params, vec![inventory_generator(b, nu, gamma, |k| k)], b)
        }
        CatalogModel::PerishablePlus => {
            let b = stock_level(params.b)?;
            let nu = positive("nu", params.nu)?;
            let gamma = non_negative("gamma", params.gamma)?;
            inventory_model(
                params,
                vec![inventory_generator(b, nu, gamma, |k| k.saturating_sub(1))],
                b,
            )
        }
        CatalogModel::OnOffA => {
            let eta = positive("eta", params.eta)?;
            let gamma = positive("gamma", params.gamma)?;
            let v = onoff_generator(eta, gamma);
            let env = EnvironmentSpec::new(
                vec!["off".into(), "on".into()],
                &[0],
                LevelSeq::with_growth(vec![], vec![v.clone()], vec![v])?,
                LevelSeq::constant(identity(2)),
            )?;
            Ok(JointModel::new(queue_rates(params)?, env))
        }
        CatalogModel::OnOffB => {
            let lambda = positive("lambda", params.lambda)?;
            let mu = positive("mu", params.mu)?;
            let eta = positive("eta", params.eta)?;
            let gamma = positive("gamma", params.gamma)?;
            let v = onoff_generator(eta, gamma);
            // Any service completion switches the server off.
            let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
            let env = EnvironmentSpec::new(
                vec!["off".into(), "on".into()],
                &[0],
                LevelSeq::with_growth(vec![], vec![v.clone()], vec![v])?,
                LevelSeq::constant(r),
            )?;
            // λ(n) = λ (n+1); μ(n) = μ n keeps the queue marginal summable
            // whenever λ < μ.
            let rates = RateFamily::new(
                RateSeq::with_growth(vec![], vec![lambda], vec![lambda])?,
                RateSeq::with_growth(vec![], vec![0.0], vec![mu])?,
            );
            Ok(JointModel::new(rates, env))
        }
    }
}

pub fn catalog_by_name(name: &str, params: &CatalogParams) -> Result<JointModel, ModelError> {
    catalog(name.parse()?, params)
}
