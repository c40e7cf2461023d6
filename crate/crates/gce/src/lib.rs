//! Estimation of generalized causal effects (GCEs) in cluster-randomized
//! trials with multiple mixed-type outcomes.
//!
//! A GCE is the expected value of a pairwise contrast `w(Y_ij, Y_kl)` between
//! potential outcomes under the two trial arms, aggregated either over cluster
//! pairs (`λ_C`, the cluster-pair GCE) or over individual pairs (`λ_I`, the
//! individual-pair GCE). The two differ when cluster size is informative.
//! Win probabilities, win ratios, net benefit, and average treatment effects
//! are all special cases obtained by choosing the contrast rule and the
//! summary map `f(λ₁, λ₀)`.
//!
//! The crate provides three estimators, all paired with Hájek-projection
//! sandwich variance estimators:
//!
//! * [`estimate_np`] — the nonparametric moment estimator over all
//!   cross-arm cluster pairs;
//! * [`estimate_mr`] — the model-robust estimator that augments the moment
//!   equations with a probabilistic index model (PIM) for the conditional
//!   expected contrast;
//! * [`estimate_dml`] — the cross-fitted debiased machine-learning estimator
//!   with a pluggable learner (PIM or gradient-boosted stumps) fit
//!   out-of-fold over a pair-level partition.
//!
//! Supporting machinery: immutable trial data model with CSV ingestion
//! ([`data`]), declarative contrast/summary specifications ([`contrast`]),
//! incomplete-U-statistic subsampling for large trials ([`subsample`]), and a
//! simulation engine with a brute-force truth oracle ([`sim`]).

pub mod contrast;
pub mod data;
pub mod error;
pub mod estimate;
pub mod estimator;
pub mod expr;
pub mod kernel;
pub mod linalg;
pub mod nuisance;
pub mod pairs;
pub mod rng;
pub mod sim;
pub mod subsample;

#[doc(hidden)]
pub mod testkit;

pub use contrast::{CompiledContrast, ContrastSpec, OutcomeRule, SummarySpec};
pub use data::{load_dataset, ClusterRecord, IndividualRecord, OutcomeValue, TrialDataset};
pub use error::{Error, ErrorClass, Result};
pub use estimate::{df_correct, GceEstimate, Target};
pub use estimator::{
    build_pair_partition, build_stratified_pair_partition, estimate_dml, estimate_mr,
    estimate_np, run_estimator, run_estimator_both, EstimatorKind, PairPartition,
};
pub use sim::{generate_trial, run_study, Scenario, StudyReport, TruthSpec};
pub use subsample::{build_subsample_plan, estimate_subsampled, SubsamplePlan};
