//! Probabilistically robust binary classification: risks, probabilistic
//! perimeters, VaR/CVaR operators, local-limit asymptotics and CVaR-SGD
//! training on synthetic instances.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod classifiers;
pub mod error;
pub mod functionals;
pub mod generators;
pub mod geometry;
pub mod invariants;
pub mod measures;
pub mod optimize;
pub mod psi;
pub mod quad;
pub mod rng;

pub use classifiers::{GridMask, GridShape, HardSet, SetOp, SoftClassifier};
pub use error::{PrlError, Result};
pub use functionals::RiskReport;
pub use measures::{
    DatasetDocument, EstimatorConfig, EstimatorKind, EstimatorMode, LabeledDataset, PerturbationModel, RadialProfile,
};
pub use psi::Psi;
pub use rng::RngState;
