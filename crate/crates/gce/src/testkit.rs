//! Slow reference implementations of every estimator, kept deliberately
//! independent of the production code paths: pair means are re-averaged
//! from raw outcomes, estimating equations are solved by bisection instead
//! of closed forms, Jacobians come from finite differences (exact here,
//! since the estimating functions are linear in λ), and the 2×2 sandwich
//! algebra is written out longhand. Tests cross-validate the fast paths
//! against these to near machine precision.

use crate::contrast::CompiledContrast;
use crate::data::{ClusterRecord, TrialDataset};
use crate::estimate::Target;
use crate::estimator::PairPartition;
use crate::kernel::ZetaTable;
use crate::linalg::Mat2;

/// Reference results: point estimates and sandwich-variance pieces.
#[derive(Debug, Clone)]
pub struct ReferenceEstimate {
    pub lambda: [f64; 2],
    pub b_hat: Mat2,
    pub sigma_hat: Mat2,
    pub cov: Mat2,
}

/// Mean contrast between two clusters, averaged over every individual pair
/// by direct enumeration of raw outcome vectors.
pub fn reference_wbar(
    contrast: &CompiledContrast,
    winner: &ClusterRecord,
    loser: &ClusterRecord,
) -> f64 {
    let mut s = 0.0;
    for u in &winner.individuals {
        for v in &loser.individuals {
            s += contrast.eval(&u.outcomes, &v.outcomes);
        }
    }
    s / (winner.size() * loser.size()) as f64
}

/// All ordered pair means, indexed [i][k].
fn wbar_matrix(data: &TrialDataset, contrast: &CompiledContrast) -> Vec<Vec<f64>> {
    let m = data.m();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| {
                    if i == k {
                        0.0
                    } else {
                        reference_wbar(contrast, &data.clusters[i], &data.clusters[k])
                    }
                })
                .collect()
        })
        .collect()
}

fn pair_u(data: &TrialDataset, target: Target, i: usize, k: usize) -> f64 {
    match target {
        Target::ClusterPair => 1.0,
        Target::IndividualPair => {
            (data.clusters[i].size() * data.clusters[k].size()) as f64
        }
    }
}

/// u-weighted fraction of ordered pairs pairing a treated cluster (first)
/// with a control cluster (second) — the sample analogue of π(1−π).
pub fn reference_cross_fraction(data: &TrialDataset, target: Target) -> f64 {
    let m = data.m();
    let (mut cross, mut total) = (0.0, 0.0);
    for i in 0..m {
        for k in 0..m {
            if i == k {
                continue;
            }
            let u = pair_u(data, target, i, k);
            total += u;
            if data.clusters[i].treatment == 1 && data.clusters[k].treatment == 0 {
                cross += u;
            }
        }
    }
    cross / total
}

/// Nonparametric pair kernel, transcribed term by term.
fn np_psi(
    data: &TrialDataset,
    wb: &[Vec<f64>],
    target: Target,
    i: usize,
    k: usize,
    lambda: [f64; 2],
) -> [f64; 2] {
    let (ai, ak) = (data.clusters[i].treatment, data.clusters[k].treatment);
    let u = pair_u(data, target, i, k);
    let mut psi = [0.0; 2];
    for (idx, a) in [1u8, 0u8].into_iter().enumerate() {
        let fwd = if ai == a && ak == 1 - a { wb[i][k] - lambda[idx] } else { 0.0 };
        let rev = if ak == a && ai == 1 - a { wb[k][i] - lambda[idx] } else { 0.0 };
        psi[idx] = 0.5 * u * (fwd + rev);
    }
    psi
}

/// Augmented pair kernel with inverse weighting and imputed predictions,
/// transcribed term by term.
#[allow(clippy::too_many_arguments)]
fn eif_psi(
    data: &TrialDataset,
    wb: &[Vec<f64>],
    target: Target,
    i: usize,
    k: usize,
    lambda: [f64; 2],
    zeta: &ZetaTable,
    dnorm: f64,
) -> [f64; 2] {
    let (ai, ak) = (data.clusters[i].treatment, data.clusters[k].treatment);
    let u = pair_u(data, target, i, k);
    let mut psi = [0.0; 2];
    for (idx, a) in [1u8, 0u8].into_iter().enumerate() {
        let z_ik = zeta.get(a, i, k);
        let z_ki = zeta.get(a, k, i);
        let fwd =
            if ai == a && ak == 1 - a { (wb[i][k] - z_ik) / dnorm } else { 0.0 };
        let rev =
            if ak == a && ai == 1 - a { (wb[k][i] - z_ki) / dnorm } else { 0.0 };
        psi[idx] = 0.5 * u * (fwd + rev + z_ik + z_ki - 2.0 * lambda[idx]);
    }
    psi
}

/// Solve f(x) = 0 for a strictly decreasing f by bracket expansion and
/// bisection to floating-point exhaustion.
fn bisect_root(mut f: impl FnMut(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut guard = 0;
    while f(lo) < 0.0 {
        lo = lo * 2.0 - 1.0;
        guard += 1;
        assert!(guard < 80, "no lower bracket");
    }
    while f(hi) > 0.0 {
        hi = hi * 2.0 + 1.0;
        guard += 1;
        assert!(guard < 160, "no upper bracket");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Hájek projections, Jacobian, Σ̂, and the sandwich covariance from any
/// symmetric pair kernel, with the Jacobian taken by central differences.
fn reference_variance(
    m: usize,
    psi: &dyn Fn(usize, usize, [f64; 2]) -> [f64; 2],
    lambda: [f64; 2],
) -> (Mat2, Mat2, Mat2) {
    let mut b_hat = [[0.0f64; 2]; 2];
    let h = 0.25;
    let n_pairs = (m * (m - 1) / 2) as f64;
    for i in 0..m {
        for k in (i + 1)..m {
            for a in 0..2 {
                let mut up = lambda;
                let mut dn = lambda;
                up[a] += h;
                dn[a] -= h;
                b_hat[a][a] += (psi(i, k, up)[a] - psi(i, k, dn)[a]) / (2.0 * h) / n_pairs;
            }
        }
    }
    let mut sigma = [[0.0f64; 2]; 2];
    for i in 0..m {
        let mut proj = [0.0f64; 2];
        for k in 0..m {
            if k == i {
                continue;
            }
            let p = psi(i, k, lambda);
            proj[0] += p[0];
            proj[1] += p[1];
        }
        proj[0] /= (m - 1) as f64;
        proj[1] /= (m - 1) as f64;
        for a in 0..2 {
            for b in 0..2 {
                sigma[a][b] += 4.0 / (m - 1) as f64 * proj[a] * proj[b];
            }
        }
    }
    // Longhand 2×2 inverse and triple product V = B⁻¹ Σ Bᵀ⁻¹.
    let det = b_hat[0][0] * b_hat[1][1] - b_hat[0][1] * b_hat[1][0];
    let binv = [
        [b_hat[1][1] / det, -b_hat[0][1] / det],
        [-b_hat[1][0] / det, b_hat[0][0] / det],
    ];
    let mut bs = [[0.0f64; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for t in 0..2 {
                bs[r][c] += binv[r][t] * sigma[t][c];
            }
        }
    }
    let mut cov = [[0.0f64; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for t in 0..2 {
                cov[r][c] += bs[r][t] * binv[c][t];
            }
        }
    }
    (b_hat, sigma, cov)
}

/// Reference nonparametric estimate: bisection on each component of the
/// pooled estimating equation, then the variance pieces at the root.
pub fn reference_np(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
) -> ReferenceEstimate {
    let m = data.m();
    let wb = wbar_matrix(data, contrast);
    let mut lambda = [0.0; 2];
    for idx in 0..2 {
        lambda[idx] = bisect_root(|l| {
            let mut lam = [0.0; 2];
            lam[idx] = l;
            let mut s = 0.0;
            for i in 0..m {
                for k in (i + 1)..m {
                    s += np_psi(data, &wb, target, i, k, lam)[idx];
                }
            }
            s
        });
    }
    let psi = |i: usize, k: usize, lam: [f64; 2]| np_psi(data, &wb, target, i, k, lam);
    let (b_hat, sigma_hat, cov) = reference_variance(m, &psi, lambda);
    ReferenceEstimate { lambda, b_hat, sigma_hat, cov }
}

/// Residual of the pooled nonparametric estimating equation at a candidate
/// solution; near-zero for a correct estimate.
pub fn reference_np_residual(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    lambda: [f64; 2],
) -> [f64; 2] {
    let m = data.m();
    let wb = wbar_matrix(data, contrast);
    let mut s = [0.0; 2];
    for i in 0..m {
        for k in (i + 1)..m {
            let p = np_psi(data, &wb, target, i, k, lambda);
            s[0] += p[0];
            s[1] += p[1];
        }
    }
    s
}

/// Reference augmented estimate with externally supplied predictions: the
/// pooled equation over all pairs, bisected per component.
pub fn reference_eif(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    zeta: &ZetaTable,
) -> ReferenceEstimate {
    let m = data.m();
    let wb = wbar_matrix(data, contrast);
    let dnorm = reference_cross_fraction(data, target);
    let mut lambda = [0.0; 2];
    for idx in 0..2 {
        lambda[idx] = bisect_root(|l| {
            let mut lam = [0.0; 2];
            lam[idx] = l;
            let mut s = 0.0;
            for i in 0..m {
                for k in (i + 1)..m {
                    s += eif_psi(data, &wb, target, i, k, lam, zeta, dnorm)[idx];
                }
            }
            s
        });
    }
    let psi =
        |i: usize, k: usize, lam: [f64; 2]| eif_psi(data, &wb, target, i, k, lam, zeta, dnorm);
    let (b_hat, sigma_hat, cov) = reference_variance(m, &psi, lambda);
    ReferenceEstimate { lambda, b_hat, sigma_hat, cov }
}

/// Reference cross-fitted estimate: the pooled equation accumulated cell by
/// cell over the partition's pair lists, with predictions shared through
/// the same table the production path used.
pub fn reference_dml(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    partition: &PairPartition,
    zeta: &ZetaTable,
) -> ReferenceEstimate {
    let m = data.m();
    let wb = wbar_matrix(data, contrast);
    let dnorm = reference_cross_fraction(data, target);
    let mut lambda = [0.0; 2];
    for idx in 0..2 {
        lambda[idx] = bisect_root(|l| {
            let mut lam = [0.0; 2];
            lam[idx] = l;
            let mut s = 0.0;
            for cell in &partition.cells {
                for &(i, k) in &cell.pairs {
                    s += eif_psi(data, &wb, target, i, k, lam, zeta, dnorm)[idx];
                }
            }
            s
        });
    }
    let psi =
        |i: usize, k: usize, lam: [f64; 2]| eif_psi(data, &wb, target, i, k, lam, zeta, dnorm);
    let (b_hat, sigma_hat, cov) = reference_variance(m, &psi, lambda);
    ReferenceEstimate { lambda, b_hat, sigma_hat, cov }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::{ContrastSpec, OutcomeRule};
    use crate::data::{IndividualRecord, OutcomeSchema, OutcomeType, OutcomeValue};
    use approx::assert_relative_eq;

    fn all_ties() -> (TrialDataset, CompiledContrast) {
        let schema = OutcomeSchema { outcomes: vec![OutcomeType::Real], p_x: 0, p_c: 0 };
        let mk = |id: &str, a: u8, n: usize| ClusterRecord {
            id: id.into(),
            treatment: a,
            c_covariates: vec![],
            individuals: vec![
                IndividualRecord {
                    outcomes: vec![OutcomeValue::Real(3.0)],
                    x_covariates: vec![]
                };
                n
            ],
        };
        let data = TrialDataset::new(
            vec![mk("a", 1, 2), mk("b", 0, 3), mk("c", 1, 1), mk("d", 0, 2)],
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
    fn tie_data_solves_to_one_half() {
        let (data, contrast) = all_ties();
        for target in [Target::ClusterPair, Target::IndividualPair] {
            let est = reference_np(&data, &contrast, target);
            assert_relative_eq!(est.lambda[0], 0.5, epsilon = 1e-12);
            assert_relative_eq!(est.lambda[1], 0.5, epsilon = 1e-12);
            let r = reference_np_residual(&data, &contrast, target, est.lambda);
            assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_half_predictions_match_np_solution() {
        let (data, contrast) = all_ties();
        let mut zeta = ZetaTable::new(data.m());
        zeta.fill_constant(0.5);
        let est = reference_eif(&data, &contrast, Target::ClusterPair, &zeta);
        assert_relative_eq!(est.lambda[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(est.lambda[1], 0.5, epsilon = 1e-12);
    }
}
