//! Monte Carlo study runner: replicate generation → estimation → one table
//! row per (estimator, target) with bias, empirical SE, average estimated
//! SE, and coverage, optionally with the finite-sample DF correction
//! alongside.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use std::ops::Range;
use std::time::Instant;

use crate::contrast::CompiledContrast;
use crate::error::{Error, Result};
use crate::estimate::{df_correct, GceEstimate, Interval, Target};
use crate::estimator::{run_estimator_both, EstimatorKind};
use crate::rng::{tags, StreamKey};

use super::dgp::{generate_trial, Scenario};
use super::truth::true_estimands_both;

/// The part of one replicate's estimate a study row needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepEstimate {
    pub lambda: [f64; 2],
    pub se: [f64; 2],
    pub ci: [Interval; 2],
    pub df_se: Option<[f64; 2]>,
    pub df_ci: Option<[Interval; 2]>,
}

/// Everything recorded for one replicate: per estimator, per target
/// (cluster-pair first), either an estimate or the failure message.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub results: Vec<[std::result::Result<RepEstimate, String>; 2]>,
}

/// Where the study's true values come from.
#[derive(Debug, Clone)]
pub enum TruthSpec {
    /// Run the Monte Carlo oracle with this many pairs and seed.
    Oracle { n_pairs: usize, seed: u64 },
    /// Externally known values, [λ₁, λ₀] per target.
    Known { c: [f64; 2], i: [f64; 2] },
}

/// One report row: a single estimator evaluated against one target.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub estimator: String,
    pub target: Target,
    /// Replicates that produced an estimate / that failed.
    pub n_used: usize,
    pub n_failed: usize,
    /// Mean estimate minus truth, per arm.
    pub bias: [f64; 2],
    /// Empirical SD of the estimates.
    pub ese: [f64; 2],
    /// Average of the estimated standard errors.
    pub ase: [f64; 2],
    /// Empirical coverage of the plain-normal 95% intervals.
    pub ecp: [f64; 2],
    /// Coverage counterparts under the DF correction, when enabled.
    pub ase_df: Option<[f64; 2]>,
    pub ecp_df: Option<[f64; 2]>,
}

/// Aggregated study results.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub scenario: Scenario,
    pub replicates: usize,
    /// Truth values used for bias and coverage, [λ₁, λ₀].
    pub truth_c: [f64; 2],
    pub truth_i: [f64; 2],
    pub rows: Vec<StudyRow>,
    /// Wall-clock seconds; excluded from serialized reports so identical
    /// runs produce identical bytes.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

fn to_rep_estimate(
    est: GceEstimate,
    df_p: Option<usize>,
) -> std::result::Result<RepEstimate, String> {
    let est = match df_p {
        Some(p) => df_correct(est, p).map_err(|e| e.to_string())?,
        None => est,
    };
    Ok(RepEstimate {
        lambda: est.lambda,
        se: est.se,
        ci: est.ci,
        df_se: est.df.as_ref().map(|d| d.se),
        df_ci: est.df.as_ref().map(|d| d.ci),
    })
}

fn run_replicate(
    scenario: &Scenario,
    contrast: &CompiledContrast,
    estimators: &[EstimatorKind],
    replicate: u64,
    df_p: Option<usize>,
) -> ReplicateOutcome {
    let generated = match generate_trial(scenario, replicate) {
        Ok(g) => g,
        Err(e) => {
            let msg = format!("generation: {e}");
            return ReplicateOutcome {
                replicate,
                results: estimators
                    .iter()
                    .map(|_| [Err(msg.clone()), Err(msg.clone())])
                    .collect(),
            };
        }
    };
    // One estimator seed per replicate, independent of the data stream.
    let seed = StreamKey::root(scenario.seed)
        .child(tags::REPLICATE)
        .child(replicate)
        .child(tags::FOLDS)
        .rng()
        .next_u64();
    let results = estimators
        .iter()
        .map(|kind| match run_estimator_both(&generated.data, contrast, kind, seed) {
            Ok((c, i)) => [to_rep_estimate(c, df_p), to_rep_estimate(i, df_p)],
            Err(e) => [Err(e.to_string()), Err(e.to_string())],
        })
        .collect();
    ReplicateOutcome { replicate, results }
}

/// Run a contiguous range of replicates. Replicates are seeded by counter,
/// so disjoint ranges can be run separately (even on different thread
/// counts) and concatenated without changing any result.
pub fn run_study_range(
    scenario: &Scenario,
    estimators: &[EstimatorKind],
    replicates: Range<u64>,
    df_p: Option<usize>,
) -> Result<Vec<ReplicateOutcome>> {
    scenario.validate()?;
    let contrast =
        CompiledContrast::compile(scenario.contrast_spec(), &Scenario::schema())?;
    Ok(replicates
        .into_par_iter()
        .map(|rep| run_replicate(scenario, &contrast, estimators, rep, df_p))
        .collect())
}

/// Reduce replicate records to one row per (estimator, target).
pub fn aggregate(
    scenario: &Scenario,
    estimators: &[EstimatorKind],
    records: &[ReplicateOutcome],
    truth_c: [f64; 2],
    truth_i: [f64; 2],
    runtime_seconds: f64,
) -> StudyReport {
    let mut rows = Vec::with_capacity(estimators.len() * 2);
    for (e_idx, kind) in estimators.iter().enumerate() {
        for (t_idx, (target, truth)) in
            [(Target::ClusterPair, truth_c), (Target::IndividualPair, truth_i)]
                .into_iter()
                .enumerate()
        {
            let oks: Vec<&RepEstimate> = records
                .iter()
                .filter_map(|r| r.results[e_idx][t_idx].as_ref().ok())
                .collect();
            let n_used = oks.len();
            let n_failed = records.len() - n_used;
            let nf = n_used as f64;
            let mut bias = [0.0; 2];
            let mut ese = [0.0; 2];
            let mut ase = [0.0; 2];
            let mut ecp = [0.0; 2];
            let mut ase_df = [0.0; 2];
            let mut ecp_df = [0.0; 2];
            let mut have_df = n_used > 0;
            for a in 0..2 {
                let mean = oks.iter().map(|r| r.lambda[a]).sum::<f64>() / nf;
                bias[a] = mean - truth[a];
                let ss =
                    oks.iter().map(|r| (r.lambda[a] - mean).powi(2)).sum::<f64>();
                ese[a] = if n_used > 1 { (ss / (nf - 1.0)).sqrt() } else { 0.0 };
                ase[a] = oks.iter().map(|r| r.se[a]).sum::<f64>() / nf;
                ecp[a] = oks.iter().filter(|r| r.ci[a].contains(truth[a])).count() as f64 / nf;
                for r in &oks {
                    match (&r.df_se, &r.df_ci) {
                        (Some(se), Some(ci)) => {
                            ase_df[a] += se[a] / nf;
                            if ci[a].contains(truth[a]) {
                                ecp_df[a] += 1.0 / nf;
                            }
                        }
                        _ => have_df = false,
                    }
                }
            }
            rows.push(StudyRow {
                estimator: kind.name().to_string(),
                target,
                n_used,
                n_failed,
                bias,
                ese,
                ase,
                ecp,
                ase_df: have_df.then_some(ase_df),
                ecp_df: have_df.then_some(ecp_df),
            });
        }
    }
    StudyReport {
        scenario: scenario.clone(),
        replicates: records.len(),
        truth_c,
        truth_i,
        rows,
        runtime_seconds,
    }
}

/// Run a full study: resolve truth, run every replicate, aggregate.
/// Replicate failures are recorded and excluded from the averages rather
/// than aborting the study.
pub fn run_study(
    scenario: &Scenario,
    estimators: &[EstimatorKind],
    replicates: usize,
    truth: &TruthSpec,
    df_p: Option<usize>,
) -> Result<StudyReport> {
    if replicates < 50 {
        return Err(Error::Config(format!(
            "study needs at least 50 replicates for stable summaries, got {replicates}"
        )));
    }
    let (truth_c, truth_i) = match truth {
        TruthSpec::Known { c, i } => (*c, *i),
        TruthSpec::Oracle { n_pairs, seed } => {
            let (c, i) = true_estimands_both(scenario, *n_pairs, *seed)?;
            (c.lambda, i.lambda)
        }
    };
    let start = Instant::now();
    let records = run_study_range(scenario, estimators, 0..replicates as u64, df_p)?;
    Ok(aggregate(
        scenario,
        estimators,
        &records,
        truth_c,
        truth_i,
        start.elapsed().as_secs_f64(),
    ))
}
