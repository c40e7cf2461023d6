//! Precomputed pairwise quantities shared by every estimator: the m×m
//! matrix of between-cluster mean contrasts, cluster sizes, treatment
//! indicators, and the pair-weight normalizations.

use crate::contrast::CompiledContrast;
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::Target;

/// Dense per-dataset cache of ordered-pair mean contrasts.
///
/// `wbar[i·m + k]` holds w̄_ik = (N_iN_k)⁻¹ ΣⱼΣₗ w(Y_ij, Y_kl) for i ≠ k;
/// diagonal entries are unused and stay at zero.
pub struct PairCache {
    pub m: usize,
    pub treatment: Vec<u8>,
    /// Cluster sizes as f64 for weighting arithmetic.
    pub sizes: Vec<f64>,
    wbar: Vec<f64>,
}

impl PairCache {
    pub fn new(data: &TrialDataset, contrast: &CompiledContrast) -> Result<Self> {
        let m = data.m();
        let mut treatment = Vec::with_capacity(m);
        let mut sizes = Vec::with_capacity(m);
        // Numeric views of every individual's outcome vector, grouped by cluster.
        let mut views: Vec<Vec<Vec<f64>>> = Vec::with_capacity(m);
        for cl in &data.clusters {
            treatment.push(cl.treatment);
            sizes.push(cl.size() as f64);
            views.push(
                cl.individuals
                    .iter()
                    .map(|ind| contrast.numeric_view(&ind.outcomes))
                    .collect(),
            );
        }
        let mut wbar = vec![0.0f64; m * m];
        for i in 0..m {
            for k in (i + 1)..m {
                let (mut s_ik, mut s_ki) = (0.0f64, 0.0f64);
                for u in &views[i] {
                    for v in &views[k] {
                        s_ik += contrast.eval_numeric(u, v);
                        s_ki += contrast.eval_numeric(v, u);
                    }
                }
                let n = sizes[i] * sizes[k];
                if !(s_ik / n).is_finite() || !(s_ki / n).is_finite() {
                    return Err(Error::Numerical(format!(
                        "contrast average for cluster pair ({}, {}) is not finite",
                        data.clusters[i].id, data.clusters[k].id
                    )));
                }
                wbar[i * m + k] = s_ik / n;
                wbar[k * m + i] = s_ki / n;
            }
        }
        Ok(PairCache { m, treatment, sizes, wbar })
    }

    /// Ordered-pair mean contrast w̄_ik.
    #[inline]
    pub fn wbar(&self, i: usize, k: usize) -> f64 {
        self.wbar[i * self.m + k]
    }

    /// Target-specific pair weight u_v(i,k): 1 for cluster pairs, N_iN_k
    /// for individual pairs.
    #[inline]
    pub fn pair_weight(&self, target: Target, i: usize, k: usize) -> f64 {
        match target {
            Target::ClusterPair => 1.0,
            Target::IndividualPair => self.sizes[i] * self.sizes[k],
        }
    }

    /// Arm counts (m₁, m₀).
    pub fn arm_counts(&self) -> (usize, usize) {
        let m1 = self.treatment.iter().filter(|&&a| a == 1).count();
        (m1, self.m - m1)
    }

    /// Empirical cross-arm pair fraction D̂_v: the u_v-weighted share of
    /// ordered pairs whose first cluster is treated and second is control —
    /// the sample analogue of π(1−π), identical for both arm orientations
    /// because the weights are symmetric. Dividing augmentation residuals
    /// by this quantity makes the inverse weighting Hájek-normalized, so
    /// constant predictions cancel exactly.
    pub fn dhat(&self, target: Target) -> f64 {
        let (mut cross, mut total) = (0.0f64, 0.0f64);
        for i in 0..self.m {
            for k in 0..self.m {
                if i == k {
                    continue;
                }
                let u = self.pair_weight(target, i, k);
                total += u;
                if self.treatment[i] == 1 && self.treatment[k] == 0 {
                    cross += u;
                }
            }
        }
        cross / total
    }

    /// u_v-weighted total over unordered pairs i < k, the normalizer of the
    /// pooled estimating equation.
    pub fn total_pair_weight(&self, target: Target) -> f64 {
        let mut total = 0.0;
        for i in 0..self.m {
            for k in (i + 1)..self.m {
                total += self.pair_weight(target, i, k);
            }
        }
        total
    }
}
