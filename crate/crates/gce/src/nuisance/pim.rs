//! Probabilistic index model: a no-intercept generalized linear model on
//! unit feature differences U_ij − U_kl, fit by iteratively reweighted
//! least squares under the contrast's link.

use crate::contrast::{CompiledContrast, Link};
use crate::error::{Error, Result};
use crate::linalg::{add_ridge, solve_spd};

use super::{fast_sigmoid, PairTrainingSet};

#[derive(Debug, Clone)]
pub struct PimConfig {
    pub max_iter: usize,
    /// Convergence when max |Δϑ| drops below this.
    pub tol: f64,
    /// Ridge added to the information matrix when it is numerically singular.
    pub ridge: f64,
}

impl Default for PimConfig {
    fn default() -> Self {
        PimConfig { max_iter: 100, tol: 1e-8, ridge: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct PimModel {
    /// Coefficients in unit-feature order (A, X, X̄, C, N).
    pub theta: Vec<f64>,
    pub link: Link,
    pub(crate) clamp: Option<(f64, f64)>,
    pub converged: bool,
    pub iterations: usize,
    /// Information matrix needed a ridge to factor.
    pub ridged: bool,
    /// Fitted linear predictors saturate the degenerate-label clamp, the
    /// footprint of labels the unclamped likelihood cannot reach (perfectly
    /// separated training pairs). The returned iterate is still usable.
    pub separation: bool,
}

impl PimModel {
    /// Link-scale score ϑᵀ(u_w − u_l).
    #[inline]
    pub(crate) fn score_difference(&self, u_w: &[f64], u_l: &[f64]) -> f64 {
        self.theta
            .iter()
            .zip(u_w.iter().zip(u_l))
            .map(|(t, (w, l))| t * (w - l))
            .sum()
    }
}

pub fn fit_pim(
    rows: &PairTrainingSet,
    contrast: &CompiledContrast,
    config: &PimConfig,
) -> Result<PimModel> {
    let d = rows.u_dim;
    let n = rows.len();
    if n < d + 1 {
        return Err(Error::Config(format!(
            "index model needs at least {} rows to fit {} coefficients, got {n}",
            d + 1,
            d
        )));
    }
    match contrast.link {
        Link::Logit => fit_logit(rows, contrast, config),
        Link::Identity => fit_identity(rows, contrast, config),
    }
}

/// Accumulate the weighted normal equations A = ΣwᵣxᵣxᵣᵀT and b = Σgᵣxᵣ over
/// difference features, then solve, falling back to a ridged factorization.
fn solve_normal_equations(
    a: Vec<f64>,
    b: &[f64],
    d: usize,
    ridge: f64,
    ridged: &mut bool,
) -> Result<Vec<f64>> {
    if let Some(s) = solve_spd(a.clone(), b) {
        return Ok(s);
    }
    *ridged = true;
    let mut ar = a;
    add_ridge(&mut ar, d, ridge);
    solve_spd(ar, b).ok_or_else(|| {
        Error::Numerical("index-model information matrix is singular even after ridging".into())
    })
}

fn fit_logit(
    rows: &PairTrainingSet,
    contrast: &CompiledContrast,
    config: &PimConfig,
) -> Result<PimModel> {
    let d = rows.u_dim;
    for &y in &rows.labels {
        if !(-1e-12..=1.0 + 1e-12).contains(&y) {
            return Err(Error::Config(format!(
                "logit-link fit requires labels in [0, 1], got {y}"
            )));
        }
    }
    // Degenerate-label protection on the probability scale.
    let labels: Vec<f64> = rows.labels.iter().map(|&y| y.clamp(1e-6, 1.0 - 1e-6)).collect();
    let mut theta = vec![0.0f64; d];
    let mut x = vec![0.0f64; d];
    let mut converged = false;
    let mut ridged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let mut a = vec![0.0f64; d * d];
        let mut b = vec![0.0f64; d];
        for r in 0..rows.len() {
            let uw = rows.units.unit(rows.winners[r] as usize);
            let ul = rows.units.unit(rows.losers[r] as usize);
            let mut eta = 0.0;
            for f in 0..d {
                x[f] = uw[f] - ul[f];
                eta += theta[f] * x[f];
            }
            let mu = fast_sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let g = labels[r] - mu;
            for p in 0..d {
                b[p] += g * x[p];
                let wxp = w * x[p];
                for q in p..d {
                    a[p * d + q] += wxp * x[q];
                }
            }
        }
        for p in 0..d {
            for q in 0..p {
                a[p * d + q] = a[q * d + p];
            }
        }
        let delta = solve_normal_equations(a, &b, d, config.ridge, &mut ridged)?;
        let mut max_step = 0.0f64;
        for (t, s) in theta.iter_mut().zip(&delta) {
            *t += s;
            max_step = max_step.max(s.abs());
        }
        if max_step < config.tol {
            converged = true;
            break;
        }
    }
    // Linear predictors at the clamp's own logit scale (|η| ≳ 13.8 for the
    // 1e-6 clamp) mean the labels were pinned by the clamp — the unclamped
    // likelihood has no finite maximizer there.
    let mut max_eta = 0.0f64;
    for r in 0..rows.len() {
        let uw = rows.units.unit(rows.winners[r] as usize);
        let ul = rows.units.unit(rows.losers[r] as usize);
        let eta: f64 = theta
            .iter()
            .zip(uw.iter().zip(ul))
            .map(|(t, (w, l))| t * (w - l))
            .sum();
        max_eta = max_eta.max(eta.abs());
    }
    Ok(PimModel {
        theta,
        link: Link::Logit,
        clamp: contrast.range,
        converged,
        iterations,
        ridged,
        separation: max_eta > 13.0,
    })
}

/// Identity link: the quasi-likelihood is unweighted least squares, solved
/// in one step.
fn fit_identity(
    rows: &PairTrainingSet,
    contrast: &CompiledContrast,
    config: &PimConfig,
) -> Result<PimModel> {
    let d = rows.u_dim;
    let mut a = vec![0.0f64; d * d];
    let mut b = vec![0.0f64; d];
    let mut x = vec![0.0f64; d];
    for r in 0..rows.len() {
        let uw = rows.units.unit(rows.winners[r] as usize);
        let ul = rows.units.unit(rows.losers[r] as usize);
        for f in 0..d {
            x[f] = uw[f] - ul[f];
        }
        let y = rows.labels[r];
        for p in 0..d {
            b[p] += y * x[p];
            for q in p..d {
                a[p * d + q] += x[p] * x[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            a[p * d + q] = a[q * d + p];
        }
    }
    let mut ridged = false;
    let theta = solve_normal_equations(a, &b, d, config.ridge, &mut ridged)?;
    Ok(PimModel {
        theta,
        link: Link::Identity,
        clamp: contrast.range,
        converged: true,
        iterations: 1,
        ridged,
        separation: false,
    })
}
