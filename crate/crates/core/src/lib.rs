//! Right-censored survival analysis.
//!
//! Kaplan-Meier estimation, weighted log-rank tests, Cox proportional hazards
//! with the Grambsch-Therneau diagnostic, parametric accelerated failure time
//! regression, grouping of survival curves, and a seeded cohort simulator.

pub mod aft;
pub mod cohort;
pub mod cox;
pub mod design;
pub mod error;
pub mod grouping;
pub mod km;
mod linalg;
pub mod rank_tests;
pub mod simulator;
pub mod stats;

pub use aft::{aft_fit, compare_aic, fit_all, AftDistribution, AftFit};
pub use cohort::{load_csv, summarize, Cohort, CsvConfig, SurvivalRecord};
pub use cox::{cox_fit, ph_test, CoxFit, Ties, TimeTransform};
pub use error::{Error, Result};
pub use grouping::{group_curves, GroupAssignment, GroupingOptions};
pub use km::{km_fit, km_stratified, SurvivalCurve};
pub use rank_tests::{bh_adjust, pairwise_tests, weighted_logrank, WeightSpec};
pub use simulator::{paper_preset, simulate_cohort, SimConfig};
