//! Incomplete-U-statistic estimation: split the clusters into R disjoint
//! subsamples, run the chosen estimator on each, and average both the point
//! estimates and the variance estimates. Costs fall roughly by a factor of
//! R (each subsample contributes C(m_r, 2) of the C(m, 2) pairs) without
//! sacrificing asymptotic behavior.

use crate::contrast::CompiledContrast;
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::{t_975, DfCorrection, GceEstimate, Interval, Target};
use crate::estimator::{run_estimator, EstimatorKind};
use crate::linalg::Mat2;
use crate::rng::{tags, StreamKey};
use rand::RngCore;

/// A deal of clusters into R disjoint subsamples of near-equal size.
#[derive(Debug, Clone)]
pub struct SubsamplePlan {
    pub r: usize,
    pub seed: u64,
    /// Subsample id of each cluster.
    pub assignment: Vec<usize>,
    /// Cluster counts per subsample; any two differ by at most one.
    pub sizes: Vec<usize>,
}

impl SubsamplePlan {
    /// Cluster indices of one subsample, in original dataset order.
    pub fn members(&self, r: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&c| self.assignment[c] == r).collect()
    }

    /// Total cluster pairs the subsampled estimator evaluates: Σ C(m_r, 2),
    /// roughly 1/R of all C(m, 2) pairs.
    pub fn pairs_used(&self) -> usize {
        self.sizes.iter().map(|&s| s * (s - 1) / 2).sum()
    }
}

fn shuffle(indices: &mut [usize], rng: &mut crate::rng::CounterRng) {
    for i in (1..indices.len()).rev() {
        let j = rng.below((i + 1) as u64) as usize;
        indices.swap(i, j);
    }
}

/// Plain random deal: seeded shuffle, then round-robin.
pub fn build_subsample_plan(m: usize, r: usize, seed: u64) -> Result<SubsamplePlan> {
    if r == 0 || r > m {
        return Err(Error::Config(format!(
            "subsample count R={r} must satisfy 1 ≤ R ≤ m (m={m})"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = StreamKey::root(seed).child(tags::SUBSAMPLE).rng();
    shuffle(&mut order, &mut rng);
    Ok(plan_from_order(&order, m, r, seed))
}

/// Arm-stratified deal (the default in [`estimate_subsampled`]): treated
/// and control clusters are shuffled separately and dealt round-robin, so
/// each subsample's arm counts differ by at most one within each arm.
pub fn build_stratified_subsample_plan(
    treatment: &[u8],
    r: usize,
    seed: u64,
) -> Result<SubsamplePlan> {
    let m = treatment.len();
    if r == 0 || r > m {
        return Err(Error::Config(format!(
            "subsample count R={r} must satisfy 1 ≤ R ≤ m (m={m})"
        )));
    }
    let key = StreamKey::root(seed).child(tags::SUBSAMPLE);
    let mut arms: [Vec<usize>; 2] = [
        (0..m).filter(|&c| treatment[c] == 1).collect(),
        (0..m).filter(|&c| treatment[c] == 0).collect(),
    ];
    for (tag, arm) in arms.iter_mut().enumerate() {
        let mut rng = key.child(tag as u64 + 1).rng();
        shuffle(arm, &mut rng);
    }
    let order: Vec<usize> = arms[0].iter().chain(arms[1].iter()).copied().collect();
    Ok(plan_from_order(&order, m, r, seed))
}

fn plan_from_order(order: &[usize], m: usize, r: usize, seed: u64) -> SubsamplePlan {
    let mut assignment = vec![0usize; m];
    let mut sizes = vec![0usize; r];
    for (pos, &c) in order.iter().enumerate() {
        assignment[c] = pos % r;
        sizes[pos % r] += 1;
    }
    SubsamplePlan { r, seed, assignment, sizes }
}

/// Prefix an inner-estimator error with the subsample it arose in, keeping
/// its class; structural infeasibility becomes a subsample error outright.
fn attach_subsample(err: Error, index: usize) -> Error {
    match err {
        Error::Config(msg) => Error::Config(format!("subsample {index}: {msg}")),
        Error::Numerical(msg) => Error::Numerical(format!("subsample {index}: {msg}")),
        Error::Degenerate(msg) => {
            Error::SubsampleInfeasible { index, detail: msg }
        }
        Error::FoldInfeasible { cell, detail } => Error::SubsampleInfeasible {
            index,
            detail: format!("cross-fitting cell ({},{}) infeasible: {detail}", cell.0, cell.1),
        },
        other => other,
    }
}

/// Estimate by averaging over R disjoint subsamples.
///
/// Each subsample keeps its clusters in original order and is handed to the
/// inner estimator as if it were a complete trial (cross-fitting partitions
/// are drawn within the subsample). The combined estimate averages the
/// per-subsample points and variances; its standard errors divide the
/// averaged variance by the full m. With R = 1 the result is the
/// full-sample estimate, bit for bit.
///
/// `df_p = Some(p)` applies the degrees-of-freedom correction inside each
/// subsample with that subsample's own m_r, then averages the corrected
/// variances; the combined t quantile uses m − R·p degrees of freedom.
#[allow(clippy::too_many_arguments)]
pub fn estimate_subsampled(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    kind: &EstimatorKind,
    r: usize,
    seed: u64,
    stratified: bool,
    df_p: Option<usize>,
) -> Result<GceEstimate> {
    let m = data.m();
    let plan = if stratified {
        let treatment: Vec<u8> = data.clusters.iter().map(|c| c.treatment).collect();
        build_stratified_subsample_plan(&treatment, r, seed)?
    } else {
        build_subsample_plan(m, r, seed)?
    };
    estimate_with_plan(data, contrast, target, kind, &plan, df_p)
}

/// Subsampled estimation over a caller-supplied plan.
pub fn estimate_with_plan(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    kind: &EstimatorKind,
    plan: &SubsamplePlan,
    df_p: Option<usize>,
) -> Result<GceEstimate> {
    let m = data.m();
    if plan.assignment.len() != m {
        return Err(Error::Config(format!(
            "subsample plan covers {} clusters but the dataset has {}",
            plan.assignment.len(),
            m
        )));
    }
    let r = plan.r;
    let declared_pi = if data.pi_from_data { None } else { Some(data.pi) };
    let inner_key = StreamKey::root(plan.seed).child(tags::SUBSAMPLE);

    let mut inner: Vec<GceEstimate> = Vec::with_capacity(r);
    for s in 0..r {
        let members = plan.members(s);
        let clusters: Vec<_> = members.iter().map(|&c| data.clusters[c].clone()).collect();
        let n1 = clusters.iter().filter(|c| c.treatment == 1).count();
        let n0 = clusters.len() - n1;
        if n1 < 2 || n0 < 2 {
            return Err(Error::SubsampleInfeasible {
                index: s,
                detail: format!(
                    "{n1} treated and {n0} control clusters; at least 2 of each are required"
                ),
            });
        }
        let sub = TrialDataset::new(clusters, data.schema.clone(), declared_pi)
            .map_err(|e| attach_subsample(e, s))?;
        // With R = 1 the inner run must be the full-sample run, so it keeps
        // the caller's seed; otherwise each subsample draws its own.
        let inner_seed = if r == 1 {
            plan.seed
        } else {
            inner_key.child(100 + s as u64).rng().next_u64()
        };
        let mut est = run_estimator(&sub, contrast, target, kind, inner_seed)
            .map_err(|e| attach_subsample(e, s))?;
        if let Some(p) = df_p {
            est = crate::estimate::df_correct(est, p).map_err(|e| attach_subsample(e, s))?;
        }
        inner.push(est);
    }

    // Average points, variances, and the variance-estimation byproducts.
    let rf = r as f64;
    let mut lambda = [0.0f64; 2];
    let mut cov: Mat2 = [[0.0; 2]; 2];
    let mut b_hat: Mat2 = [[0.0; 2]; 2];
    let mut sigma_hat: Mat2 = [[0.0; 2]; 2];
    let mut hajek = vec![[0.0f64; 2]; m];
    let mut warnings = Vec::new();
    for (s, est) in inner.iter().enumerate() {
        for a in 0..2 {
            lambda[a] += est.lambda[a] / rf;
            for b in 0..2 {
                cov[a][b] += est.cov[a][b] / rf;
                b_hat[a][b] += est.diagnostics.b_hat[a][b] / rf;
                sigma_hat[a][b] += est.diagnostics.sigma_hat[a][b] / rf;
            }
        }
        for (pos, &c) in plan.members(s).iter().enumerate() {
            hajek[c] = est.diagnostics.hajek[pos];
        }
        for w in &est.diagnostics.warnings {
            warnings.push(format!("subsample {s}: {w}"));
        }
    }

    let mut combined = GceEstimate::assemble(
        target,
        m,
        lambda,
        cov,
        hajek,
        b_hat,
        sigma_hat,
        contrast.range,
        None,
        warnings,
    );
    if let Some(p) = df_p {
        if m <= r * p {
            return Err(Error::Config(format!(
                "degrees-of-freedom correction needs m > R·p, got m = {m}, R·p = {}",
                r * p
            )));
        }
        let mut df_cov: Mat2 = [[0.0; 2]; 2];
        for est in &inner {
            let dc = &est.df.as_ref().expect("inner df applied").cov;
            for a in 0..2 {
                for b in 0..2 {
                    df_cov[a][b] += dc[a][b] / rf;
                }
            }
        }
        let t_df = m - r * p;
        let t = t_975(t_df);
        let se = [(df_cov[0][0] / m as f64).sqrt(), (df_cov[1][1] / m as f64).sqrt()];
        let ci = [
            Interval { lo: lambda[0] - t * se[0], hi: lambda[0] + t * se[0] },
            Interval { lo: lambda[1] - t * se[1], hi: lambda[1] + t * se[1] },
        ];
        combined.df = Some(DfCorrection {
            p,
            t_df,
            cov: df_cov,
            se,
            ci,
            summary_se: None,
            summary_ci: None,
        });
    }
    combined.diagnostics.subsamples = Some(inner);
    Ok(combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::{ContrastSpec, OutcomeRule};
    use crate::data::{
        ClusterRecord, IndividualRecord, OutcomeSchema, OutcomeType, OutcomeValue,
    };
    use crate::estimator::estimate_np;
    use approx::assert_relative_eq;

    fn trial(m: usize, seed: u64) -> (TrialDataset, CompiledContrast) {
        let schema = OutcomeSchema { outcomes: vec![OutcomeType::Real], p_x: 1, p_c: 1 };
        let key = StreamKey::root(seed).child(tags::DATASET);
        let clusters = (0..m)
            .map(|i| {
                let mut rng = key.child(i as u64).rng();
                let n = 2 + (rng.next_u64() % 3) as usize;
                ClusterRecord {
                    id: format!("cl{i}"),
                    treatment: (i % 2) as u8,
                    c_covariates: vec![rng.uniform()],
                    individuals: (0..n)
                        .map(|_| IndividualRecord {
                            outcomes: vec![OutcomeValue::Real(rng.uniform() * 3.0)],
                            x_covariates: vec![rng.uniform()],
                        })
                        .collect(),
                }
            })
            .collect();
        let data = TrialDataset::new(clusters, schema.clone(), None).unwrap();
        let contrast = CompiledContrast::compile(
            ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::TieInclusiveWin],
                weights: vec![1.0],
            },
            &schema,
        )
        .unwrap();
        (data, contrast)
    }

    #[test]
    fn plan_is_a_partition_with_near_equal_sizes() {
        for (m, r) in [(10usize, 3usize), (61, 4), (8, 8)] {
            let plan = build_subsample_plan(m, r, 7).unwrap();
            assert_eq!(plan.assignment.len(), m);
            assert_eq!(plan.sizes.iter().sum::<usize>(), m);
            assert!(plan.sizes.iter().max().unwrap() - plan.sizes.iter().min().unwrap() <= 1);
            let mut counts = vec![0usize; r];
            for &s in &plan.assignment {
                counts[s] += 1;
            }
            assert_eq!(counts, plan.sizes);
        }
        assert!(build_subsample_plan(10, 0, 0).is_err());
        assert!(build_subsample_plan(10, 11, 0).is_err());
    }

    #[test]
    fn stratified_plan_balances_arms() {
        let treatment: Vec<u8> = (0..22).map(|i| u8::from(i % 3 == 0)).collect();
        let plan = build_stratified_subsample_plan(&treatment, 3, 5).unwrap();
        let mut per = vec![[0usize; 2]; 3];
        for (c, &s) in plan.assignment.iter().enumerate() {
            per[s][treatment[c] as usize] += 1;
        }
        for arm in 0..2 {
            let counts: Vec<usize> = per.iter().map(|p| p[arm]).collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn pair_count_is_sum_of_within_subsample_pairs() {
        let plan = build_subsample_plan(60, 3, 1).unwrap();
        assert_eq!(plan.pairs_used(), 3 * (20 * 19 / 2));
    }

    #[test]
    fn single_subsample_is_bit_identical_to_full_sample() {
        let (data, contrast) = trial(14, 3);
        let sub = estimate_subsampled(
            &data,
            &contrast,
            Target::ClusterPair,
            &EstimatorKind::Np,
            1,
            99,
            true,
            None,
        )
        .unwrap();
        let full = estimate_np(&data, &contrast, Target::ClusterPair).unwrap();
        for a in 0..2 {
            assert_eq!(sub.lambda[a].to_bits(), full.lambda[a].to_bits());
            assert_eq!(sub.se[a].to_bits(), full.se[a].to_bits());
            for b in 0..2 {
                assert_eq!(sub.cov[a][b].to_bits(), full.cov[a][b].to_bits());
            }
        }
    }

    #[test]
    fn average_is_mean_of_per_subsample_estimates() {
        let (data, contrast) = trial(24, 11);
        let est = estimate_subsampled(
            &data,
            &contrast,
            Target::IndividualPair,
            &EstimatorKind::Np,
            3,
            5,
            true,
            None,
        )
        .unwrap();
        let parts = est.diagnostics.subsamples.as_ref().unwrap();
        assert_eq!(parts.len(), 3);
        for a in 0..2 {
            let mean = parts.iter().map(|p| p.lambda[a]).sum::<f64>() / 3.0;
            assert_relative_eq!(est.lambda[a], mean, epsilon = 1e-15);
            let vmean = parts.iter().map(|p| p.cov[a][a]).sum::<f64>() / 3.0;
            assert_relative_eq!(est.cov[a][a], vmean, epsilon = 1e-15);
        }
        assert_eq!(est.m, 24);
    }

    #[test]
    fn infeasible_subsample_is_named() {
        // Eight clusters, four subsamples of two: no subsample can have two
        // clusters per arm.
        let (data, contrast) = trial(8, 13);
        let err = estimate_subsampled(
            &data,
            &contrast,
            Target::ClusterPair,
            &EstimatorKind::Np,
            4,
            3,
            true,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SubsampleInfeasible { .. }), "{err}");
    }

    #[test]
    fn df_correction_uses_subsample_sizes_and_pooled_t() {
        let (data, contrast) = trial(20, 17);
        let est = estimate_subsampled(
            &data,
            &contrast,
            Target::ClusterPair,
            &EstimatorKind::Np,
            2,
            7,
            true,
            Some(4),
        )
        .unwrap();
        let df = est.df.as_ref().unwrap();
        assert_eq!(df.t_df, 20 - 2 * 4);
        let parts = est.diagnostics.subsamples.as_ref().unwrap();
        // Combined corrected variance is the mean of the per-subsample
        // corrected variances, each inflated by m_r/(m_r − p) = 10/6.
        for a in 0..2 {
            let mean = parts
                .iter()
                .map(|p| p.df.as_ref().unwrap().cov[a][a])
                .sum::<f64>()
                / 2.0;
            assert_relative_eq!(df.cov[a][a], mean, epsilon = 1e-15);
            assert_relative_eq!(
                parts[0].df.as_ref().unwrap().cov[a][a],
                parts[0].cov[a][a] * 10.0 / 6.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let (data, contrast) = trial(18, 19);
        let run = || {
            estimate_subsampled(
                &data,
                &contrast,
                Target::ClusterPair,
                &EstimatorKind::Np,
                3,
                23,
                true,
                None,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.lambda[0].to_bits(), b.lambda[0].to_bits());
        assert_eq!(a.cov[1][1].to_bits(), b.cov[1][1].to_bits());
    }
}
