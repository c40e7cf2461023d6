//! Model-robust estimator: the augmented pair kernel with predictions from
//! a probabilistic index model fitted on all cross-arm pairs.

use crate::contrast::CompiledContrast;
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::{GceEstimate, Target};
use crate::kernel::{eif_kernel, sandwich, ZetaTable};
use crate::nuisance::{
    build_pair_training_set, fit_pim, NuisanceModel, NuisanceSummary, PimConfig, ZetaPredictor,
};
use crate::pairs::PairCache;

/// Estimate both arm-specific win probabilities with model-based
/// augmentation.
///
/// Fits one index model jointly on every ordered cross-arm cluster pair,
/// imputes the four counterfactual pair means for every cluster pair
/// (including same-arm pairs, which contribute only through imputation),
/// and solves the augmented estimating equation in closed form. Model
/// trouble — non-convergence, separation, a ridged solve — is downgraded
/// to a warning on the estimate rather than an error.
pub fn estimate_mr(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    config: &PimConfig,
) -> Result<GceEstimate> {
    let (cache, zeta, summary, warnings) = fit_and_tabulate(data, contrast, config)?;
    eif_core(&cache, target, &zeta, contrast.range, Some(summary), warnings)
}

/// Both targets from one model fit. The fitted predictions and the pair
/// cache are target-independent, so sharing them halves the cost of
/// reporting cluster-pair and individual-pair estimates together.
pub(super) fn estimate_mr_both(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    config: &PimConfig,
) -> Result<(GceEstimate, GceEstimate)> {
    let (cache, zeta, summary, warnings) = fit_and_tabulate(data, contrast, config)?;
    let c = eif_core(
        &cache,
        Target::ClusterPair,
        &zeta,
        contrast.range,
        Some(summary.clone()),
        warnings.clone(),
    )?;
    let i = eif_core(
        &cache,
        Target::IndividualPair,
        &zeta,
        contrast.range,
        Some(summary),
        warnings,
    )?;
    Ok((c, i))
}

fn fit_and_tabulate(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    config: &PimConfig,
) -> Result<(PairCache, ZetaTable, NuisanceSummary, Vec<String>)> {
    let cache = PairCache::new(data, contrast)?;
    let m = cache.m;
    let pairs = all_ordered_pairs(m);
    let training = build_pair_training_set(data, contrast, &pairs)?;
    let model = fit_pim(&training, contrast, config)?;

    let mut warnings = Vec::new();
    if model.separation {
        warnings.push(
            "index model shows signs of separation; predictions are clamped".to_string(),
        );
    } else if !model.converged {
        warnings.push(format!(
            "index model did not converge within {} iterations",
            model.iterations
        ));
    }
    if model.ridged {
        warnings.push("index model solve required ridge regularization".to_string());
    }

    let model = NuisanceModel::Pim(model);
    let summary = model.summary();
    let predictor = ZetaPredictor::new(&model, data);
    let mut zeta = ZetaTable::new(m);
    for i in 0..m {
        for k in (i + 1)..m {
            predictor.fill_pair(&mut zeta, i, k);
        }
    }
    Ok((cache, zeta, summary, warnings))
}

/// Solve the augmented estimating equation with externally supplied
/// predictions. This is the estimator the cross-fitted path reduces to once
/// its per-cell predictions are tabulated, and it accepts any complete
/// table, which makes it the natural entry point for diagnostics and for
/// reproducing an estimate from recorded predictions.
pub fn estimate_eif_with_zeta(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    zeta: &ZetaTable,
) -> Result<GceEstimate> {
    let cache = PairCache::new(data, contrast)?;
    if zeta.m != cache.m {
        return Err(Error::Config(format!(
            "prediction table is sized for {} clusters but the dataset has {}",
            zeta.m, cache.m
        )));
    }
    if !zeta.is_complete() {
        return Err(Error::Config(
            "prediction table has unset entries; every ordered cluster pair needs all four \
             counterfactual predictions"
                .into(),
        ));
    }
    eif_core(
        &cache,
        target,
        zeta,
        contrast.range,
        Some(NuisanceSummary::Injected),
        Vec::new(),
    )
}

/// Every ordered pair (i, k), i ≠ k.
pub(super) fn all_ordered_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(m * (m - 1));
    for i in 0..m {
        for k in 0..m {
            if k != i {
                pairs.push((i, k));
            }
        }
    }
    pairs
}

/// Shared augmented-kernel solve: closed-form root of the pooled equation,
/// then the sandwich at the root. Both the single-fit and cross-fitted
/// estimators land here once their prediction tables are filled.
pub(super) fn eif_core(
    cache: &PairCache,
    target: Target,
    zeta: &ZetaTable,
    range: Option<(f64, f64)>,
    nuisance: Option<NuisanceSummary>,
    warnings: Vec<String>,
) -> Result<GceEstimate> {
    let m = cache.m;
    let dnorm = cache.dhat(target);
    // The kernel is u·(…)/2 − u·λ per component, so the root is the
    // u-weighted mean of the inverse-weighted residual and imputation terms.
    let mut num = [0.0f64; 2];
    let mut den = 0.0f64;
    for i in 0..m {
        for k in (i + 1)..m {
            let u = cache.pair_weight(target, i, k);
            den += u;
            for (aidx, a) in [1u8, 0u8].into_iter().enumerate() {
                let z_ik = zeta.get(a, i, k);
                let z_ki = zeta.get(a, k, i);
                let fwd = if cache.treatment[i] == a && cache.treatment[k] == 1 - a {
                    (cache.wbar(i, k) - z_ik) / dnorm
                } else {
                    0.0
                };
                let rev = if cache.treatment[k] == a && cache.treatment[i] == 1 - a {
                    (cache.wbar(k, i) - z_ki) / dnorm
                } else {
                    0.0
                };
                num[aidx] += 0.5 * u * (fwd + rev + z_ik + z_ki);
            }
        }
    }
    let lambda = [num[0] / den, num[1] / den];
    let parts = sandwich(m, |i, k| eif_kernel(cache, target, i, k, lambda, zeta, dnorm))?;
    Ok(GceEstimate::assemble(
        target,
        m,
        lambda,
        parts.cov,
        parts.hajek,
        parts.b_hat,
        parts.sigma_hat,
        range,
        nuisance,
        warnings,
    ))
}
