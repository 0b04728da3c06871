//! Detection of average treatment effects across many metrics and treatment
//! groups with false discovery rate control under dependence.
//!
//! The pipeline runs from per-group sufficient statistics
//! ([`ExperimentSummary`]) to z-statistics ([`stats`]), the correlation matrix
//! induced by the shared control group ([`sigma`]), and the multiple-testing
//! procedures BH, BY and dependence-adjusted BH ([`fdr`]). [`sim`] is a Monte
//! Carlo harness for estimating FDR and power under synthetic dependence.

pub mod error;
pub mod fdr;
pub mod model;
pub mod normal;
pub mod sigma;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use fdr::{
    bh, bh_q_values, by, conditional_expectation_g, dbh, dbh_with, DbhOptions, Integration, Method,
    RejectionReport,
};
pub use model::{
    validate_summary, ExperimentSummary, HypothesisIndex, MetricCell, Sidedness, Violation,
};
pub use sigma::{build_mcc_correlation, build_structure, CorrelationStructure, StructureKind};
pub use sim::{SimulationConfig, SimulationResult};
pub use stats::{compute_z_vector, z_to_pvalues, PVector, TestStatistics};

pub use nalgebra::DMatrix;
