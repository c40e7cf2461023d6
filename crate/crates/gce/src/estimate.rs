//! Shared estimation result types: point estimates, sandwich covariance,
//! confidence intervals (plain normal and DF-corrected t), and the summary
//! effect derived through the delta method.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::contrast::SummarySpec;
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::nuisance::NuisanceSummary;

/// Which pair-weighting the estimand uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Target {
    /// Cluster-pair weighting: every cluster pair counts equally.
    #[serde(rename = "C")]
    ClusterPair,
    /// Individual-pair weighting: cluster pairs weighted by N_i·N_k.
    #[serde(rename = "I")]
    IndividualPair,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::ClusterPair => "C",
            Target::IndividualPair => "I",
        })
    }
}

/// A two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// The derived summary effect Λ = f(λ₁, λ₀) with delta-method uncertainty.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryEstimate {
    pub estimate: f64,
    /// Delta-method variance of √m·Λ̂.
    pub variance: f64,
    pub se: f64,
    pub ci: Interval,
}

/// Degrees-of-freedom corrected uncertainty: variance inflated by
/// m/(m−p) and intervals built from t quantiles.
#[derive(Debug, Clone, Serialize)]
pub struct DfCorrection {
    /// Number of estimated nuisance quantities charged against m.
    pub p: usize,
    /// Degrees of freedom used for the t quantiles.
    pub t_df: usize,
    /// Inflated covariance of √m·λ̂.
    pub cov: Mat2,
    pub se: [f64; 2],
    pub ci: [Interval; 2],
    pub summary_se: Option<f64>,
    pub summary_ci: Option<Interval>,
}

/// Estimator-level byproducts kept for auditing and tests.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// Per-cluster Hájek projections ψ̂(O_i) at λ̂, one [a=1, a=0] pair per
    /// cluster. These average to zero at the solution.
    pub hajek: Vec<[f64; 2]>,
    /// Empirical pair-averaged Jacobian B̂ of the estimating function.
    pub b_hat: Mat2,
    /// Hájek-projection covariance Σ̂ = 4(m−1)⁻¹ Σᵢ ψ̂ᵢψ̂ᵢᵀ.
    pub sigma_hat: Mat2,
    /// Nuisance-model summary, when the estimator fit one.
    pub nuisance: Option<NuisanceSummary>,
    /// Per-subsample results, when the estimate is a subsample average.
    pub subsamples: Option<Vec<GceEstimate>>,
    /// Non-fatal conditions encountered (non-convergence, range drift, ...).
    pub warnings: Vec<String>,
}

/// A fitted generalized-causal-effect estimate for one target.
///
/// Index convention throughout: position 0 holds the a=1 quantity (treated
/// clusters as the first pair member), position 1 holds a=0.
#[derive(Debug, Clone, Serialize)]
pub struct GceEstimate {
    pub target: Target,
    /// Number of clusters the estimate was computed from.
    pub m: usize,
    /// Point estimates (λ̂₁, λ̂₀).
    pub lambda: [f64; 2],
    /// Sandwich covariance of √m·λ̂ (symmetric positive semidefinite).
    pub cov: Mat2,
    /// Standard errors √(cov_aa / m).
    pub se: [f64; 2],
    /// Plain normal 95% intervals.
    pub ci: [Interval; 2],
    /// Summary effect, present once [`GceEstimate::with_summary`] ran.
    pub summary: Option<SummaryEstimate>,
    /// DF-corrected uncertainty, present once [`df_correct`] ran.
    pub df: Option<DfCorrection>,
    pub diagnostics: Diagnostics,
}

/// Two-sided 95% standard normal quantile.
pub(crate) fn z_975() -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975)
}

/// Two-sided 95% t quantile with `df` degrees of freedom.
pub(crate) fn t_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

impl GceEstimate {
    /// Assemble an estimate from a solved λ̂ and its sandwich parts.
    pub(crate) fn assemble(
        target: Target,
        m: usize,
        lambda: [f64; 2],
        cov: Mat2,
        hajek: Vec<[f64; 2]>,
        b_hat: Mat2,
        sigma_hat: Mat2,
        range: Option<(f64, f64)>,
        nuisance: Option<NuisanceSummary>,
        mut warnings: Vec<String>,
    ) -> Self {
        // Symmetrize and floor the covariance: it is PSD in exact
        // arithmetic, so any asymmetry or negative diagonal is roundoff.
        let mut cov = [
            [cov[0][0], 0.5 * (cov[0][1] + cov[1][0])],
            [0.5 * (cov[0][1] + cov[1][0]), cov[1][1]],
        ];
        for a in 0..2 {
            if cov[a][a] < 0.0 {
                cov[a][a] = 0.0;
            }
        }
        if let Some((lo, hi)) = range {
            for (a, l) in lambda.iter().enumerate() {
                if *l < lo - 1e-9 || *l > hi + 1e-9 {
                    warnings.push(format!(
                        "lambda_{} = {l} lies outside the contrast range [{lo}, {hi}]; \
                         augmentation terms can move finite-sample estimates out of range",
                        1 - a
                    ));
                }
            }
        }
        let z = z_975();
        let se = [(cov[0][0] / m as f64).sqrt(), (cov[1][1] / m as f64).sqrt()];
        let ci = [
            Interval { lo: lambda[0] - z * se[0], hi: lambda[0] + z * se[0] },
            Interval { lo: lambda[1] - z * se[1], hi: lambda[1] + z * se[1] },
        ];
        GceEstimate {
            target,
            m,
            lambda,
            cov,
            se,
            ci,
            summary: None,
            df: None,
            diagnostics: Diagnostics {
                hajek,
                b_hat,
                sigma_hat,
                nuisance,
                subsamples: None,
                warnings,
            },
        }
    }

    /// Attach the summary effect Λ = f(λ₁, λ₀) with delta-method variance.
    /// If a DF correction is already present, its summary fields are filled
    /// in as well.
    pub fn with_summary(mut self, spec: &SummarySpec) -> Result<Self> {
        let (estimate, variance) = crate::contrast::summarize(spec, self.lambda, &self.cov)?;
        let variance = variance.max(0.0);
        let se = (variance / self.m as f64).sqrt();
        let z = z_975();
        self.summary = Some(SummaryEstimate {
            estimate,
            variance,
            se,
            ci: Interval { lo: estimate - z * se, hi: estimate + z * se },
        });
        if let Some(df) = &mut self.df {
            let (_, var_df) = crate::contrast::summarize(spec, self.lambda, &df.cov)?;
            let se_df = (var_df.max(0.0) / self.m as f64).sqrt();
            let t = t_975(df.t_df);
            df.summary_se = Some(se_df);
            df.summary_ci =
                Some(Interval { lo: estimate - t * se_df, hi: estimate + t * se_df });
        }
        Ok(self)
    }
}

/// Apply the finite-sample degrees-of-freedom correction: variance inflated
/// by m/(m−p) and 95% intervals rebuilt from t quantiles with m−p degrees
/// of freedom. The plain quantities are retained alongside.
pub fn df_correct(mut estimate: GceEstimate, p: usize) -> Result<GceEstimate> {
    let m = estimate.m;
    if m <= p {
        return Err(Error::Config(format!(
            "degrees-of-freedom correction needs m > p, got m = {m}, p = {p}"
        )));
    }
    let factor = m as f64 / (m - p) as f64;
    let cov = [
        [estimate.cov[0][0] * factor, estimate.cov[0][1] * factor],
        [estimate.cov[1][0] * factor, estimate.cov[1][1] * factor],
    ];
    let t_df = m - p;
    let t = t_975(t_df);
    let se = [(cov[0][0] / m as f64).sqrt(), (cov[1][1] / m as f64).sqrt()];
    let ci = [
        Interval { lo: estimate.lambda[0] - t * se[0], hi: estimate.lambda[0] + t * se[0] },
        Interval { lo: estimate.lambda[1] - t * se[1], hi: estimate.lambda[1] + t * se[1] },
    ];
    let (summary_se, summary_ci) = match &estimate.summary {
        Some(s) => {
            let se = s.se * factor.sqrt();
            (
                Some(se),
                Some(Interval { lo: s.estimate - t * se, hi: s.estimate + t * se }),
            )
        }
        None => (None, None),
    };
    estimate.df = Some(DfCorrection { p, t_df, cov, se, ci, summary_se, summary_ci });
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dummy_estimate(m: usize, cov00: f64) -> GceEstimate {
        GceEstimate::assemble(
            Target::ClusterPair,
            m,
            [0.6, 0.4],
            [[cov00, 0.0], [0.0, cov00]],
            vec![[0.0, 0.0]; m],
            [[-1.0, 0.0], [0.0, -1.0]],
            [[cov00, 0.0], [0.0, cov00]],
            Some((0.0, 1.0)),
            None,
            Vec::new(),
        )
    }

    #[test]
    fn df_correction_scales_variance_by_m_over_m_minus_p() {
        let est = df_correct(dummy_estimate(30, 0.001), 4).unwrap();
        let df = est.df.as_ref().unwrap();
        assert_relative_eq!(df.cov[0][0], 0.001 * 30.0 / 26.0, max_relative = 1e-12);
        assert!((df.cov[0][0] - 0.0011538).abs() < 1e-7);
        assert_eq!(df.t_df, 26);
        // Plain quantities retained unchanged.
        assert_relative_eq!(est.cov[0][0], 0.001);
    }

    #[test]
    fn df_correction_rejects_small_m() {
        let err = df_correct(dummy_estimate(4, 0.001), 4).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn corrected_interval_approaches_normal_interval_for_large_m() {
        let est = df_correct(dummy_estimate(10_000, 0.5), 4).unwrap();
        let plain_half = est.ci[0].hi - est.lambda[0];
        let df = est.df.as_ref().unwrap();
        let corr_half = df.ci[0].hi - est.lambda[0];
        assert!((corr_half / plain_half - 1.0).abs() < 1e-3);
    }

    #[test]
    fn summary_fills_df_fields_when_present() {
        let est = df_correct(dummy_estimate(30, 0.001), 4).unwrap();
        let est = est.with_summary(&SummarySpec::Difference).unwrap();
        let df = est.df.as_ref().unwrap();
        assert!(df.summary_se.is_some());
        let s = est.summary.as_ref().unwrap();
        assert_relative_eq!(s.estimate, 0.2);
        // t interval is wider than the normal interval at m = 30.
        assert!(df.summary_ci.unwrap().hi - s.estimate > s.ci.hi - s.estimate);
    }

    #[test]
    fn out_of_range_lambda_is_a_warning_not_an_error() {
        let est = GceEstimate::assemble(
            Target::ClusterPair,
            10,
            [1.2, 0.4],
            [[0.0; 2]; 2],
            vec![[0.0, 0.0]; 10],
            [[-1.0, 0.0], [0.0, -1.0]],
            [[0.0; 2]; 2],
            Some((0.0, 1.0)),
            None,
            Vec::new(),
        );
        assert_eq!(est.diagnostics.warnings.len(), 1);
        assert!(est.diagnostics.warnings[0].contains("outside the contrast range"));
    }
}
