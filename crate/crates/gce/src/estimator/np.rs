//! Nonparametric estimator: cross-arm pair averaging with a U-statistic
//! sandwich variance.

use crate::contrast::CompiledContrast;
use crate::data::TrialDataset;
use crate::error::Result;
use crate::estimate::{GceEstimate, Target};
use crate::kernel::{np_kernel, sandwich};
use crate::pairs::PairCache;

/// Estimate both arm-specific win probabilities without any outcome model.
///
/// The point estimate for each arm is the pair-weighted mean contrast over
/// ordered cross-arm cluster pairs oriented with that arm first; the
/// covariance is the jackknife-style sandwich over all cluster pairs.
pub fn estimate_np(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
) -> Result<GceEstimate> {
    let cache = PairCache::new(data, contrast)?;
    let lambda = closed_form(&cache, target);
    let parts = sandwich(cache.m, |i, k| np_kernel(&cache, target, i, k, lambda))?;
    Ok(GceEstimate::assemble(
        target,
        cache.m,
        lambda,
        parts.cov,
        parts.hajek,
        parts.b_hat,
        parts.sigma_hat,
        contrast.range,
        None,
        Vec::new(),
    ))
}

/// Pair-weighted cross-arm means; the exact root of the pooled estimating
/// equation.
fn closed_form(cache: &PairCache, target: Target) -> [f64; 2] {
    let mut num = [0.0f64; 2];
    let mut den = [0.0f64; 2];
    for i in 0..cache.m {
        for k in 0..cache.m {
            if k == i || cache.treatment[i] == cache.treatment[k] {
                continue;
            }
            let idx = if cache.treatment[i] == 1 { 0 } else { 1 };
            let u = cache.pair_weight(target, i, k);
            num[idx] += u * cache.wbar(i, k);
            den[idx] += u;
        }
    }
    [num[0] / den[0], num[1] / den[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::{ContrastSpec, OutcomeRule};
    use crate::data::{
        ClusterRecord, IndividualRecord, OutcomeSchema, OutcomeType, OutcomeValue,
    };
    use crate::testkit;
    use approx::assert_relative_eq;

    fn small_trial() -> (TrialDataset, CompiledContrast) {
        let schema = OutcomeSchema { outcomes: vec![OutcomeType::Real], p_x: 0, p_c: 0 };
        let mk = |id: &str, a: u8, ys: &[f64]| ClusterRecord {
            id: id.into(),
            treatment: a,
            c_covariates: vec![],
            individuals: ys
                .iter()
                .map(|&y| IndividualRecord {
                    outcomes: vec![OutcomeValue::Real(y)],
                    x_covariates: vec![],
                })
                .collect(),
        };
        let data = TrialDataset::new(
            vec![
                mk("a", 1, &[4.0, 2.0]),
                mk("b", 0, &[1.0, 3.0, 2.5]),
                mk("c", 1, &[5.0]),
                mk("d", 0, &[0.5, 4.5]),
                mk("e", 1, &[2.2, 3.1, 0.7]),
            ],
            schema.clone(),
            None,
        )
        .unwrap();
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
    fn matches_reference_solver_both_targets() {
        let (data, contrast) = small_trial();
        for target in [Target::ClusterPair, Target::IndividualPair] {
            let est = estimate_np(&data, &contrast, target).unwrap();
            let oracle = testkit::reference_np(&data, &contrast, target);
            for a in 0..2 {
                assert_relative_eq!(est.lambda[a], oracle.lambda[a], epsilon = 1e-12);
                for b in 0..2 {
                    assert_relative_eq!(
                        est.diagnostics.sigma_hat[a][b],
                        oracle.sigma_hat[a][b],
                        epsilon = 1e-11,
                        max_relative = 1e-9
                    );
                    assert_relative_eq!(
                        est.cov[a][b],
                        oracle.cov[a][b],
                        epsilon = 1e-11,
                        max_relative = 1e-9
                    );
                }
            }
            let resid =
                testkit::reference_np_residual(&data, &contrast, target, est.lambda);
            assert!(resid[0].abs() < 1e-10 && resid[1].abs() < 1e-10);
        }
    }

    #[test]
    fn win_probabilities_sum_to_one_under_tie_inclusive_rule() {
        let (data, contrast) = small_trial();
        let est = estimate_np(&data, &contrast, Target::ClusterPair).unwrap();
        assert_relative_eq!(est.lambda[0] + est.lambda[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn se_is_sqrt_cov_over_m() {
        let (data, contrast) = small_trial();
        let est = estimate_np(&data, &contrast, Target::ClusterPair).unwrap();
        for a in 0..2 {
            assert_relative_eq!(
                est.se[a],
                (est.cov[a][a] / est.m as f64).sqrt(),
                epsilon = 1e-14
            );
        }
    }
}
