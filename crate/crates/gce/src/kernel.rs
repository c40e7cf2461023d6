//! Pairwise estimating-function kernels and the sandwich-variance assembly
//! they share.
//!
//! Both kernels are symmetric in their cluster arguments and return the
//! stacked components for a = 1 (position 0) and a = 0 (position 1),
//! together with the diagonal derivative ∂ψ_a/∂λ_a used by the empirical
//! Jacobian.

use crate::error::{Error, Result};
use crate::estimate::Target;
use crate::linalg::{sandwich2, Mat2};
use crate::pairs::PairCache;

/// One evaluation of a pair kernel: stacked values and their λ-derivatives.
#[derive(Debug, Clone, Copy)]
pub struct PairKernel {
    /// (ψ₁, ψ₀) — the estimating-function components.
    pub psi: [f64; 2],
    /// (∂ψ₁/∂λ₁, ∂ψ₀/∂λ₀) — the cross-derivatives are identically zero.
    pub dpsi: [f64; 2],
}

/// Predicted pair-level contrast means ζ̂, indexed by (arm, winner, loser).
///
/// `get(a, i, k)` is the model's prediction of w̄(Y_i(a), Y_k(1−a)): the
/// mean contrast if cluster i were assigned arm a and cluster k the other
/// arm, regardless of their realized assignments. Entries start unset (NaN)
/// so partially filled tables are detected rather than silently used.
#[derive(Debug, Clone)]
pub struct ZetaTable {
    pub m: usize,
    values: Vec<f64>,
}

impl ZetaTable {
    pub fn new(m: usize) -> Self {
        ZetaTable { m, values: vec![f64::NAN; 2 * m * m] }
    }

    #[inline]
    fn idx(&self, a: u8, i: usize, k: usize) -> usize {
        debug_assert!(a <= 1 && i < self.m && k < self.m);
        (a as usize * self.m + i) * self.m + k
    }

    #[inline]
    pub fn get(&self, a: u8, i: usize, k: usize) -> f64 {
        self.values[self.idx(a, i, k)]
    }

    #[inline]
    pub fn set(&mut self, a: u8, i: usize, k: usize, value: f64) {
        let ix = self.idx(a, i, k);
        self.values[ix] = value;
    }

    /// Fill every off-diagonal entry with a constant (diagnostic use).
    pub fn fill_constant(&mut self, value: f64) {
        let m = self.m;
        for a in 0..2u8 {
            for i in 0..m {
                for k in 0..m {
                    if i != k {
                        self.set(a, i, k, value);
                    }
                }
            }
        }
    }

    /// True when every off-diagonal entry has been set.
    pub fn is_complete(&self) -> bool {
        let m = self.m;
        for a in 0..2u8 {
            for i in 0..m {
                for k in 0..m {
                    if i != k && !self.get(a, i, k).is_finite() {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Average the two predictions of each pair-sum-linked quantity so that
    /// ζ̃_ik,a + ζ̃_ki,1−a = s holds exactly. Applied to learners whose raw
    /// predictions do not already satisfy the contrast's pair-sum identity.
    pub fn symmetrize(&mut self, pair_sum: f64) {
        let m = self.m;
        for i in 0..m {
            for k in (i + 1)..m {
                // Each unordered pair owns four entries, linked two by two:
                // (a, i, k) with (1−a, k, i). Tilt each linked couple once.
                for a in 0..2u8 {
                    let z_ik = self.get(a, i, k);
                    let z_ki = self.get(1 - a, k, i);
                    let tilted = 0.5 * (z_ik + pair_sum - z_ki);
                    self.set(a, i, k, tilted);
                    self.set(1 - a, k, i, pair_sum - tilted);
                }
            }
        }
    }
}

/// Cross-arm indicator I_{ik,a} = 1(A_i = a, A_k = 1−a).
#[inline]
fn cross(treatment: &[u8], i: usize, k: usize, a: u8) -> f64 {
    if treatment[i] == a && treatment[k] == 1 - a {
        1.0
    } else {
        0.0
    }
}

/// Nonparametric kernel: the symmetrized cross-arm moment
/// ψ_a = ½·u·[I_ik,a(w̄_ik − λ_a) + I_ki,a(w̄_ki − λ_a)].
/// Same-arm pairs contribute exactly zero.
#[inline]
pub fn np_kernel(cache: &PairCache, target: Target, i: usize, k: usize, lambda: [f64; 2]) -> PairKernel {
    let u = cache.pair_weight(target, i, k);
    let mut psi = [0.0; 2];
    let mut dpsi = [0.0; 2];
    for (aidx, a) in [1u8, 0u8].into_iter().enumerate() {
        let ind_ik = cross(&cache.treatment, i, k, a);
        let ind_ki = cross(&cache.treatment, k, i, a);
        psi[aidx] = 0.5
            * u
            * (ind_ik * (cache.wbar(i, k) - lambda[aidx])
                + ind_ki * (cache.wbar(k, i) - lambda[aidx]));
        dpsi[aidx] = -0.5 * u * (ind_ik + ind_ki);
    }
    PairKernel { psi, dpsi }
}

/// Augmented kernel: inverse-weighted residuals plus imputed pair means,
/// ψ_a = ½·u·[I_ik,a/D·(w̄_ik − ζ_ik,a) + I_ki,a/D·(w̄_ki − ζ_ki,a)
///            + ζ_ik,a + ζ_ki,a − 2λ_a],
/// where ζ_ik,a = ζ̂(i under a, k under 1−a). The imputation terms apply to
/// every pair, same-arm ones included.
#[inline]
pub fn eif_kernel(
    cache: &PairCache,
    target: Target,
    i: usize,
    k: usize,
    lambda: [f64; 2],
    zeta: &ZetaTable,
    ipw_denom: f64,
) -> PairKernel {
    let u = cache.pair_weight(target, i, k);
    let mut psi = [0.0; 2];
    let mut dpsi = [0.0; 2];
    for (aidx, a) in [1u8, 0u8].into_iter().enumerate() {
        let ind_ik = cross(&cache.treatment, i, k, a);
        let ind_ki = cross(&cache.treatment, k, i, a);
        let z_ik = zeta.get(a, i, k);
        let z_ki = zeta.get(a, k, i);
        psi[aidx] = 0.5
            * u
            * (ind_ik / ipw_denom * (cache.wbar(i, k) - z_ik)
                + ind_ki / ipw_denom * (cache.wbar(k, i) - z_ki)
                + z_ik
                + z_ki
                - 2.0 * lambda[aidx]);
        dpsi[aidx] = -u;
    }
    PairKernel { psi, dpsi }
}

/// Assembled sandwich-variance pieces for one solved estimate.
#[derive(Debug)]
pub(crate) struct SandwichParts {
    pub cov: Mat2,
    pub b_hat: Mat2,
    pub sigma_hat: Mat2,
    pub hajek: Vec<[f64; 2]>,
}

/// Build the sandwich covariance V̂ = B̂⁻¹ Σ̂ B̂⁻ᵀ of √m·λ̂ from a pair
/// kernel evaluated at the solution:
///   ψ̂ᵢ = (m−1)⁻¹ Σ_{k≠i} ψ(O_i, O_k; λ̂)        (Hájek projections)
///   B̂  = C(m,2)⁻¹ Σ_{i<k} ∂ψ/∂λ                  (diagonal Jacobian)
///   Σ̂  = 4(m−1)⁻¹ Σᵢ ψ̂ᵢψ̂ᵢᵀ
pub(crate) fn sandwich<F>(m: usize, mut kernel: F) -> Result<SandwichParts>
where
    F: FnMut(usize, usize) -> PairKernel,
{
    let mut hsum = vec![[0.0f64; 2]; m];
    let mut bsum = [0.0f64; 2];
    for i in 0..m {
        for k in (i + 1)..m {
            let kv = kernel(i, k);
            for a in 0..2 {
                // The kernel is symmetric in (i, k), so one evaluation
                // contributes to both clusters' projections.
                hsum[i][a] += kv.psi[a];
                hsum[k][a] += kv.psi[a];
                bsum[a] += kv.dpsi[a];
            }
        }
    }
    let n_pairs = (m * (m - 1) / 2) as f64;
    let b_hat: Mat2 = [[bsum[0] / n_pairs, 0.0], [0.0, bsum[1] / n_pairs]];
    let mut hajek = Vec::with_capacity(m);
    let mut sigma = [[0.0f64; 2]; 2];
    let denom = (m - 1) as f64;
    for h in &hsum {
        let proj = [h[0] / denom, h[1] / denom];
        for a in 0..2 {
            for b in 0..2 {
                sigma[a][b] += proj[a] * proj[b];
            }
        }
        hajek.push(proj);
    }
    let scale = 4.0 / (m - 1) as f64;
    let sigma_hat: Mat2 = [
        [sigma[0][0] * scale, sigma[0][1] * scale],
        [sigma[1][0] * scale, sigma[1][1] * scale],
    ];
    let cov = sandwich2(&b_hat, &sigma_hat).ok_or_else(|| {
        Error::Degenerate(
            "estimating-function Jacobian is singular; sandwich variance undefined".into(),
        )
    })?;
    Ok(SandwichParts { cov, b_hat, sigma_hat, hajek })
}
