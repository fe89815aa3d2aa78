//! Training and agnostic minimisation.

pub mod accuracy;
pub mod oracle;
pub mod training;

pub use accuracy::{adversarial_surrogate_accuracy, clean_accuracy, patho_scan, prob_acc, PathoReport};
pub use oracle::{grid_minimize, interpolation_sweep, GridProblem, InterpolationRow, Objective, OracleResult, SearchBudget};
pub use training::{cvar_inner_alpha, prl_step, train, TrainConfig, TrainTrace, Variant};
