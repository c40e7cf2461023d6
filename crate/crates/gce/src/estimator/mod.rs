//! Point estimators for the win-probability estimands.
//!
//! Three routes to the same pair of arm-specific targets:
//!
//! * [`estimate_np`] — pure nonparametric cross-arm averaging; no model.
//! * [`estimate_mr`] — augments the pair kernel with predictions from a
//!   probabilistic index model fitted on all cross-arm pairs, keeping the
//!   estimate consistent when either the marginal structure or the model
//!   is right.
//! * [`estimate_dml`] — cross-fitted variant: clusters are dealt into
//!   folds, every pair lands in the cell for its fold pair, and the
//!   predictions a pair consumes come from a learner trained on clusters
//!   from neither of its folds.
//!
//! All three share the sandwich-variance assembly and report on both the
//! cluster-pair and individual-pair scale via [`Target`](crate::Target).

mod dml;
mod mr;
mod np;

pub use dml::{
    build_pair_partition, build_stratified_pair_partition, estimate_dml,
    estimate_dml_with_partition, estimate_dml_with_zeta, PairPartition, PartitionCell,
};
pub use mr::{estimate_eif_with_zeta, estimate_mr};
pub use np::estimate_np;

use crate::contrast::CompiledContrast;
use crate::data::TrialDataset;
use crate::error::Result;
use crate::estimate::{GceEstimate, Target};
use crate::nuisance::{LearnerConfig, PimConfig};

/// An estimator choice with its configuration, for callers that dispatch on
/// a run description (the subsampler, the study runner, the CLI).
#[derive(Debug, Clone)]
pub enum EstimatorKind {
    Np,
    Mr(PimConfig),
    Dml { learner: LearnerConfig, k: usize, stratified: bool },
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Np => "np",
            EstimatorKind::Mr(_) => "mr",
            EstimatorKind::Dml { .. } => "dml",
        }
    }
}

/// Run the described estimator. The seed feeds cross-fitting (fold deal and
/// per-cell learner seeds); the other estimators are deterministic and
/// ignore it.
pub fn run_estimator(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    kind: &EstimatorKind,
    seed: u64,
) -> Result<GceEstimate> {
    match kind {
        EstimatorKind::Np => estimate_np(data, contrast, target),
        EstimatorKind::Mr(config) => estimate_mr(data, contrast, target, config),
        EstimatorKind::Dml { learner, k, stratified } => {
            let partition = dml_partition(data, *k, seed, *stratified)?;
            estimate_dml_with_partition(data, contrast, target, learner, &partition)
        }
    }
}

/// Run the described estimator for both targets at once, sharing the
/// nuisance fit and prediction table between them. Results come back as
/// (cluster-pair, individual-pair).
pub fn run_estimator_both(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    kind: &EstimatorKind,
    seed: u64,
) -> Result<(GceEstimate, GceEstimate)> {
    match kind {
        EstimatorKind::Np => Ok((
            estimate_np(data, contrast, Target::ClusterPair)?,
            estimate_np(data, contrast, Target::IndividualPair)?,
        )),
        EstimatorKind::Mr(config) => mr::estimate_mr_both(data, contrast, config),
        EstimatorKind::Dml { learner, k, stratified } => {
            let partition = dml_partition(data, *k, seed, *stratified)?;
            dml::estimate_dml_both(data, contrast, learner, &partition)
        }
    }
}

fn dml_partition(
    data: &TrialDataset,
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<PairPartition> {
    if stratified {
        let treatment: Vec<u8> = data.clusters.iter().map(|c| c.treatment).collect();
        build_stratified_pair_partition(&treatment, k, seed)
    } else {
        build_pair_partition(data.m(), k, seed)
    }
}
