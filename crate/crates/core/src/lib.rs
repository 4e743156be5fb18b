//! Output Diversified Sampling (ODS) for white-box initialisation and
//! black-box attacks on small dense classifiers.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(a > b)` also rejects NaN

pub mod blackbox;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod ods;
pub mod result;
pub mod rng;
pub mod schedule;
pub mod whitebox;

pub use error::{Error, Result};
pub use models::MlpClassifier;
pub use numcore::Tensor;
pub use result::AttackResult;
