//! Analysis toolkit for exponential single-server queues coupled in both
//! directions to a finite random environment.
//!
//! * [`model`]: model declaration, validation, joint generator rows, catalog.
//! * [`separability`]: reduced generators and exact product-form steady states.
//! * [`ergodicity`]: necessary condition and Lyapunov ergodicity certificates.
//! * [`numerics`]: truncated stationary solves, metrics and cut identities.
//! * [`simulate`]: trajectory simulation and expected departure counts.
//! * [`bounds`]: two-sided throughput bounds for perishable inventories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod ergodicity;
pub mod level;
pub mod linalg;
pub mod model;
pub mod numerics;
pub mod separability;
pub mod simulate;

pub use level::{LevelSeq, MatrixSeq, RateSeq, Tail};
pub use model::{
    catalog, catalog_by_name, load_model, validate_model, CatalogModel, CatalogParams,
    EnvironmentSpec, GeneratorRow, JointModel, ModelDocument, ModelError, RateFamily, State,
    ValidationIssue, ValidationReport,
};
