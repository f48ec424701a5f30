//! Non-private chunk estimators, private single-stage estimators and the
//! composed Gaussian learners.

pub mod nonprivate;
pub mod pipeline;
pub mod private;

pub use crate::ppme::PrivacyBudget;
pub use nonprivate::{
    empirical_covariance, empirical_mean, filtered_robust_covariance, filtered_robust_mean, span_projection,
};
pub use pipeline::{learn_gaussian, learn_gaussian_robust, EstimationReport, ModelRecord, PipelinePlan};
pub use private::{
    private_complement_mean, private_mean_wellconditioned, private_precondition_covariance,
    private_refine_covariance, private_robust_covariance, private_robust_mean, private_subspace, StagePlan,
    StageReport,
};
