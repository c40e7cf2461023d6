//! Simulation toolkit: the two study data-generating processes, a
//! brute-force Monte Carlo oracle for the true estimand values, and a study
//! runner that produces bias / ESE / ASE / coverage tables over replicated
//! trials.

mod dgp;
mod study;
mod truth;

pub use dgp::{generate_trial, DgpParams, GeneratedTrial, Preset, Scenario};
pub use study::{
    aggregate, run_study, run_study_range, RepEstimate, ReplicateOutcome, StudyReport,
    StudyRow, TruthSpec,
};
pub use truth::{true_estimands, true_estimands_both, Truth};
