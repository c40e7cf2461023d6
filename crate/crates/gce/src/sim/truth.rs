//! Monte Carlo oracle for the true estimand values: draw independent
//! cluster pairs from the potential-outcome law, evaluate the pair-level
//! contrast means in both orientations, and average — unweighted for the
//! cluster-pair estimand, size-weighted (ratio form) for the
//! individual-pair estimand.

use serde::Serialize;

use crate::contrast::CompiledContrast;
use crate::error::{Error, Result};
use crate::estimate::Target;
use crate::rng::{tags, StreamKey};

use super::dgp::{draw_cluster, DrawnCluster, Scenario};

/// Oracle result for one target: (λ₁, λ₀) with Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Truth {
    pub lambda: [f64; 2],
    pub mc_se: [f64; 2],
    pub n_pairs: usize,
}

fn numeric_views(contrast: &CompiledContrast, cl: &DrawnCluster, arm: usize) -> Vec<Vec<f64>> {
    cl.y[arm].iter().map(|outcomes| contrast.numeric_view(outcomes)).collect()
}

fn pair_mean(contrast: &CompiledContrast, winners: &[Vec<f64>], losers: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for u in winners {
        for v in losers {
            s += contrast.eval_numeric(u, v);
        }
    }
    s / (winners.len() * losers.len()) as f64
}

/// Estimate both targets' true values from `n_pairs` independent cluster
/// pairs (the same draws serve both, so the two targets are directly
/// comparable). Requires at least 10⁵ pairs for a stable reference.
pub fn true_estimands_both(
    scenario: &Scenario,
    n_pairs: usize,
    seed: u64,
) -> Result<(Truth, Truth)> {
    if n_pairs < 100_000 {
        return Err(Error::Config(format!(
            "truth oracle needs at least 100000 pairs for a stable reference, got {n_pairs}"
        )));
    }
    scenario.validate()?;
    let contrast =
        CompiledContrast::compile(scenario.contrast_spec(), &Scenario::schema())?;
    let key = StreamKey::root(seed).child(tags::TRUTH);

    // Per-orientation accumulators: cluster-pair means and the ratio-form
    // sums for the individual-pair estimand, with second moments for MC
    // standard errors.
    let mut csum = [0.0f64; 2];
    let mut csq = [0.0f64; 2];
    let mut xsum = [0.0f64; 2];
    let mut xsq = [0.0f64; 2];
    let mut xy = [0.0f64; 2];
    let (mut ysum, mut ysq) = (0.0f64, 0.0f64);
    for p in 0..n_pairs {
        let mut rng = key.child(p as u64).rng();
        let one = draw_cluster(&scenario.params, &mut rng);
        let two = draw_cluster(&scenario.params, &mut rng);
        let one_t = numeric_views(&contrast, &one, 0);
        let one_c = numeric_views(&contrast, &one, 1);
        let two_t = numeric_views(&contrast, &two, 0);
        let two_c = numeric_views(&contrast, &two, 1);
        let wbar = [pair_mean(&contrast, &one_t, &two_c), pair_mean(&contrast, &one_c, &two_t)];
        let nn = (one.n * two.n) as f64;
        for a in 0..2 {
            csum[a] += wbar[a];
            csq[a] += wbar[a] * wbar[a];
            let x = nn * wbar[a];
            xsum[a] += x;
            xsq[a] += x * x;
            xy[a] += x * nn;
        }
        ysum += nn;
        ysq += nn * nn;
    }

    let pf = n_pairs as f64;
    let c_lambda = [csum[0] / pf, csum[1] / pf];
    let c_se = [
        ((csq[0] / pf - c_lambda[0] * c_lambda[0]).max(0.0) / pf).sqrt(),
        ((csq[1] / pf - c_lambda[1] * c_lambda[1]).max(0.0) / pf).sqrt(),
    ];
    let ybar = ysum / pf;
    let var_y = ysq / pf - ybar * ybar;
    let mut i_lambda = [0.0f64; 2];
    let mut i_se = [0.0f64; 2];
    for a in 0..2 {
        let lam = xsum[a] / ysum;
        let xbar = xsum[a] / pf;
        let var_x = xsq[a] / pf - xbar * xbar;
        let cov_xy = xy[a] / pf - xbar * ybar;
        // Delta-method variance of the ratio: Var(x − λy) / (E y)².
        let v = (var_x - 2.0 * lam * cov_xy + lam * lam * var_y).max(0.0);
        i_lambda[a] = lam;
        i_se[a] = (v / pf).sqrt() / ybar;
    }

    Ok((
        Truth { lambda: c_lambda, mc_se: c_se, n_pairs },
        Truth { lambda: i_lambda, mc_se: i_se, n_pairs },
    ))
}

/// Oracle values for one target; see [`true_estimands_both`].
pub fn true_estimands(
    scenario: &Scenario,
    target: Target,
    n_pairs: usize,
    seed: u64,
) -> Result<Truth> {
    let (c, i) = true_estimands_both(scenario, n_pairs, seed)?;
    Ok(match target {
        Target::ClusterPair => c,
        Target::IndividualPair => i,
    })
}
