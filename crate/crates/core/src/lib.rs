//! Survival analysis by stacking risk sets into a classification problem.
//!
//! Each uncensored event time contributes one stratum: the subjects still
//! at risk, with response 1 for the subject who died. Cox's partial
//! likelihood, a per-stratum-intercept logistic regression and any
//! squared-error learner can all be fitted to the stacked rows.

pub mod coxph;
pub mod curves;
pub mod error;
pub mod experiments;
pub mod learners;
pub mod metrics;
pub mod rng;
pub mod simgen;
pub mod stacker;
pub mod stacklogit;
pub mod survdata;
mod tree;

pub use coxph::{cox_fit, cox_fit_l1, cox_fit_stacked, cox_loglik, CoxOptions, FitResult, PenalizedPath};
pub use curves::{predict_survival_curve, SurvivalCurve};
pub use error::{Error, Result};
pub use learners::{LearnerConfig, Predictor};
pub use metrics::{c_index, RiskScores};
pub use rng::SimRng;
pub use simgen::{ModelKind, SimConfig};
pub use stacker::{stack, stack_centered, StackForm, StackedData};
pub use stacklogit::{logistic_fit, logistic_fit_l1, verify_equivalence, LogisticFit, LogisticOptions};
pub use survdata::{LongitudinalDataset, SurvivalDataset, SurvivalRecord};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
