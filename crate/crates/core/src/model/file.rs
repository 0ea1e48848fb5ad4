//! TOML model definition files.
//!
//! A document either names a catalog model:
//!
//! ```toml
//! [catalog]
//! name = "base_stock"
//! lambda = 1.0
//! mu = 2.0
//! nu = 1.0
//! b = 2
//! ```
//!
//! or spells the model out. Every level family has a `prefix` (levels
//! `0..N0`), a `tail` of length `p` and an optional per-block `growth`;
//! `tail_start` and `period` may be given and are then checked against the
//! array lengths.
//!
//! ```toml
//! [rates.lambda]
//! tail = [1.0]
//! [rates.mu]
//! tail = [2.0]
//!
//! [environment]
//! labels = ["0", "1"]
//! blocked = ["0"]
//! [environment.generator]
//! tail = [[[-1.0, 1.0], [0.0, 0.0]]]
//! [environment.jump]
//! tail = [[[1.0, 0.0], [1.0, 0.0]]]
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{catalog_by_name, CatalogParams, EnvironmentSpec, JointModel, ModelError, RateFamily};
use crate::level::{Growable, LevelSeq};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<CatalogSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqSection<T> {
    #[serde(default)]
    pub prefix: Vec<T>,
    pub tail: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub lambda: SeqSection<f64>,
    pub mu: SeqSection<f64>,
}

pub type MatrixRows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub labels: Vec<String>,
    #[serde(default)]
    pub blocked: Vec<String>,
    pub generator: SeqSection<MatrixRows>,
    pub jump: SeqSection<MatrixRows>,
}

fn matrix_from_rows(rows: &MatrixRows, family: &'static str) -> Result<DMatrix<f64>, ModelError> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(ModelError::MalformedMatrix {
                family,
                expected: n,
                rows: n,
                cols: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &DMatrix<f64>) -> MatrixRows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn build_seq<S, T: Growable>(
    section: &SeqSection<S>,
    name: &str,
    convert: impl Fn(&S) -> Result<T, ModelError>,
) -> Result<LevelSeq<T>, ModelError> {
    if let Some(start) = section.tail_start {
        if start != section.prefix.len() {
            return Err(ModelError::Parse(format!(
                "{name}: tail_start = {start} but the prefix has {} entries",
                section.prefix.len()
            )));
        }
    }
    if let Some(period) = section.period {
        if period != section.tail.len() {
            return Err(ModelError::Parse(format!(
                "{name}: period = {period} but the tail has {} entries",
                section.tail.len()
            )));
        }
    }
    let prefix = section
        .prefix
        .iter()
        .map(&convert)
        .collect::<Result<Vec<_>, _>>()?;
    let tail = section
        .tail
        .iter()
        .map(&convert)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match &section.growth {
        None => LevelSeq::new(prefix, tail)?,
        Some(g) => {
            let growth = g.iter().map(&convert).collect::<Result<Vec<_>, _>>()?;
            LevelSeq::with_growth(prefix, tail, growth)?
        }
    })
}

fn seq_section<S, T: Growable>(seq: &LevelSeq<T>, convert: impl Fn(&T) -> S) -> SeqSection<S> {
    SeqSection {
        prefix: seq.prefix().iter().map(&convert).collect(),
        tail: seq.tail().iter().map(&convert).collect(),
        growth: seq.growth().map(|g| g.iter().map(&convert).collect()),
        tail_start: Some(seq.tail_start()),
        period: Some(seq.period()),
    }
}

impl ModelDocument {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn to_model(&self) -> Result<JointModel, ModelError> {
        match (&self.catalog, &self.rates, &self.environment) {
            (Some(c), None, None) => catalog_by_name(
                &c.name,
                &CatalogParams {
                    lambda: c.lambda,
                    mu: c.mu,
                    nu: c.nu,
                    gamma: c.gamma,
                    eta: c.eta,
                    b: c.b,
                    rates: None,
                },
            ),
            (None, Some(rates), Some(env)) => {
                let ident = |x: &f64| Ok(*x);
                let rates = RateFamily::new(
                    build_seq(&rates.lambda, "rates.lambda", ident)?,
                    build_seq(&rates.mu, "rates.mu", ident)?,
                );
                let blocked = env
                    .blocked
                    .iter()
                    .map(|b| {
                        env.labels
                            .iter()
                            .position(|l| l == b)
                            .ok_or_else(|| ModelError::UnknownLabel(b.clone()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let spec = EnvironmentSpec::new(
                    env.labels.clone(),
                    &blocked,
                    build_seq(&env.generator, "environment.generator", |m| {
                        matrix_from_rows(m, "generator")
                    })?,
                    build_seq(&env.jump, "environment.jump", |m| {
                        matrix_from_rows(m, "jump")
                    })?,
                )?;
                Ok(JointModel::new(rates, spec))
            }
            _ => Err(ModelError::Parse(
                "expected either a [catalog] section or both [rates] and [environment]".into(),
            )),
        }
    }

    /// Fully spelled-out document for `model`.
    pub fn from_model(model: &JointModel) -> Self {
        let env = model.env();
        let labels = env.labels().to_vec();
        ModelDocument {
            catalog: None,
            rates: Some(RatesSection {
                lambda: seq_section(model.rates().lambda_seq(), |x| *x),
                mu: seq_section(model.rates().mu_seq(), |x| *x),
            }),
            environment: Some(EnvironmentSection {
                blocked: env
                    .blocked_states()
                    .into_iter()
                    .map(|k| labels[k].clone())
                    .collect(),
                labels,
                generator: seq_section(env.generator_seq(), rows_from_matrix),
                jump: seq_section(env.jump_seq(), rows_from_matrix),
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model documents always serialise")
    }
}

pub fn load_model(text: &str) -> Result<JointModel, ModelError> {
    ModelDocument::parse(text)?.to_model()
}
