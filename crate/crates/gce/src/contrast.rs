//! Declarative pairwise contrast functions and summary maps.
//!
//! A contrast function w maps an ordered pair of outcome vectors (u, v) to a
//! real number scoring how favorably u compares to v — a win indicator, a
//! signed win/loss score, a difference, or a composite of per-outcome rules.
//! Contrasts are declared as data ([`ContrastSpec`]), compiled against the
//! dataset schema into a [`CompiledContrast`] (all type mismatches surface
//! here, never at evaluation time), and evaluated as pure functions.
//!
//! A summary map f turns the two arm-level effect parameters (λ₁, λ₀) into a
//! single reported effect Λ = f(λ₁, λ₀) — difference, ratio, or a custom
//! expression — with a gradient for delta-method variances.

use crate::data::{ClusterRecord, OutcomeSchema, OutcomeType, OutcomeValue};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{quad2, Mat2};

/// Which end of an outcome's scale counts as better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// A per-outcome comparison rule w_q(u_q, v_q).
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeRule {
    /// 1 if u > v, else 0.
    StrictGreater,
    /// 1 if u > v, 0.5 on a tie, -1 if u < v.
    Heaviside,
    /// 1 if u > v, 0.5 on a tie, 0 if u < v.
    TieInclusiveWin,
    /// 1 when u beats v by more than `margin` (in the favorable direction),
    /// `loss` when v beats u by more than `margin`, 0 within the margin.
    ThresholdWin { margin: f64, direction: Direction, loss: f64 },
    /// The raw difference u - v; real outcomes only.
    Difference,
}

impl OutcomeRule {
    /// Evaluate the rule on numeric outcome views.
    fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            OutcomeRule::StrictGreater => {
                if u > v {
                    1.0
                } else {
                    0.0
                }
            }
            OutcomeRule::Heaviside => {
                if u > v {
                    1.0
                } else if u == v {
                    0.5
                } else {
                    -1.0
                }
            }
            OutcomeRule::TieInclusiveWin => {
                if u > v {
                    1.0
                } else if u == v {
                    0.5
                } else {
                    0.0
                }
            }
            OutcomeRule::ThresholdWin { margin, direction, loss } => {
                let d = match direction {
                    Direction::HigherBetter => u - v,
                    Direction::LowerBetter => v - u,
                };
                if d > *margin {
                    1.0
                } else if d < -*margin {
                    *loss
                } else {
                    0.0
                }
            }
            OutcomeRule::Difference => u - v,
        }
    }

    /// Attainable value range; `None` means unbounded.
    fn range(&self) -> Option<(f64, f64)> {
        match self {
            OutcomeRule::StrictGreater | OutcomeRule::TieInclusiveWin => Some((0.0, 1.0)),
            OutcomeRule::Heaviside => Some((-1.0, 1.0)),
            OutcomeRule::ThresholdWin { loss, .. } => {
                Some((loss.min(0.0), loss.max(1.0)))
            }
            OutcomeRule::Difference => None,
        }
    }

    /// The constant s with `eval(u,v) + eval(v,u) = s` for all inputs, when
    /// one exists. Rules whose two orientations sum differently on and off
    /// ties have no such constant.
    fn pair_sum(&self) -> Option<f64> {
        match self {
            OutcomeRule::TieInclusiveWin => Some(1.0),
            OutcomeRule::Difference => Some(0.0),
            OutcomeRule::ThresholdWin { loss, .. } if *loss == -1.0 => Some(0.0),
            _ => None,
        }
    }

    /// Like [`OutcomeRule::pair_sum`], but restricted to inputs a symmetric
    /// tie predicate has already declared non-tied (used by prioritized
    /// contrasts, where the rule only ever evaluates decided levels).
    fn pair_sum_given_decided(&self, tie: &TiePredicate) -> Option<f64> {
        match self {
            OutcomeRule::TieInclusiveWin => Some(1.0),
            OutcomeRule::Difference => Some(0.0),
            // Any non-tie verdict implies u != v, where these sum exactly.
            OutcomeRule::StrictGreater => Some(1.0),
            OutcomeRule::Heaviside => Some(0.0),
            OutcomeRule::ThresholdWin { margin, loss, .. } => {
                if *loss == -1.0 {
                    return Some(0.0);
                }
                // Beyond the predicate's margin implies beyond the rule's
                // margin only when the predicate is at least as wide.
                let covers = match tie {
                    TiePredicate::Equal => *margin == 0.0,
                    TiePredicate::WithinMargin(d) => d >= margin,
                };
                if covers {
                    Some(1.0 + loss)
                } else {
                    None
                }
            }
        }
    }

    fn validate(&self, ty: &OutcomeType, what: &str) -> Result<()> {
        match self {
            OutcomeRule::Difference => {
                if !matches!(ty, OutcomeType::Real) {
                    return Err(Error::Config(format!(
                        "{what}: the difference rule applies to real outcomes only"
                    )));
                }
            }
            OutcomeRule::ThresholdWin { margin, loss, .. } => {
                if !(margin.is_finite() && *margin >= 0.0) {
                    return Err(Error::Config(format!(
                        "{what}: threshold margin must be a finite non-negative number"
                    )));
                }
                if !loss.is_finite() {
                    return Err(Error::Config(format!("{what}: loss value must be finite")));
                }
                require_ordered(ty, what)?;
            }
            _ => require_ordered(ty, what)?,
        }
        Ok(())
    }
}

fn require_ordered(ty: &OutcomeType, what: &str) -> Result<()> {
    if matches!(ty, OutcomeType::Categorical) {
        return Err(Error::Config(format!(
            "{what}: categorical outcomes admit no order and cannot be compared by this rule"
        )));
    }
    Ok(())
}

/// When a prioritized level counts as tied (and comparison moves on).
#[derive(Debug, Clone, PartialEq)]
pub enum TiePredicate {
    /// Tied exactly when the two values are equal.
    Equal,
    /// Tied when the absolute difference is at most the margin.
    WithinMargin(f64),
}

impl TiePredicate {
    fn is_tie(&self, u: f64, v: f64) -> bool {
        match self {
            TiePredicate::Equal => u == v,
            TiePredicate::WithinMargin(d) => (u - v).abs() <= *d,
        }
    }
}

/// One level of a prioritized comparison: which outcome to inspect, when it
/// is tied, and the score when it decides.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityLevel {
    /// Zero-based outcome index into the schema.
    pub outcome: usize,
    pub rule: OutcomeRule,
    pub tie: TiePredicate,
}

/// Declarative description of a contrast function over outcome vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum ContrastSpec {
    /// Weighted sum of per-outcome rules: w(u,v) = Σ_q ω_q w_q(u_q, v_q).
    /// Weights must be non-negative and are normalized to sum to one.
    DimensionWise { rules: Vec<OutcomeRule>, weights: Vec<f64> },
    /// Sequential comparison: levels are inspected in order, the first
    /// non-tied level decides via its rule, and an all-tie scores
    /// `tie_value`.
    Prioritized { levels: Vec<PriorityLevel>, tie_value: f64 },
    /// Joint comparison under the Pareto partial order: 1 when u is at
    /// least as good as v on every outcome and strictly better on at least
    /// one (directions declare which way is better), `tie_value` when the
    /// vectors are exactly equal, 0 otherwise (including incomparable
    /// pairs).
    Pareto { directions: Vec<Direction>, tie_value: f64 },
}

/// Link function used by nuisance models for the contrast's scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Contrast range within [0,1]: model on the log-odds scale.
    Logit,
    /// Anything else: model on the raw scale.
    Identity,
}

/// A contrast spec validated against a dataset schema, with derived
/// metadata the estimators rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledContrast {
    spec: ContrastSpec,
    outcome_types: Vec<OutcomeType>,
    /// Attainable range of w; `None` when unbounded (difference rules).
    pub range: Option<(f64, f64)>,
    /// The constant s with w(u,v) + w(v,u) = s for all inputs, when one
    /// exists. Drives exact complementarity identities downstream.
    pub pair_sum: Option<f64>,
    /// Modeling scale implied by the range.
    pub link: Link,
}

impl CompiledContrast {
    /// Validate `spec` against `schema`. All rule/type mismatches, bad
    /// weights, and out-of-range indices are rejected here so that
    /// evaluation is total.
    pub fn compile(spec: ContrastSpec, schema: &OutcomeSchema) -> Result<Self> {
        let q = schema.q();
        let mut spec = spec;
        let range: Option<(f64, f64)>;
        let pair_sum: Option<f64>;
        match &mut spec {
            ContrastSpec::DimensionWise { rules, weights } => {
                if rules.len() != q {
                    return Err(Error::Config(format!(
                        "dimension-wise contrast declares {} rules for {} outcomes",
                        rules.len(),
                        q
                    )));
                }
                if weights.len() != q {
                    return Err(Error::Config(format!(
                        "dimension-wise contrast declares {} weights for {} outcomes",
                        weights.len(),
                        q
                    )));
                }
                for (idx, w) in weights.iter().enumerate() {
                    if !(w.is_finite() && *w >= 0.0) {
                        return Err(Error::Config(format!(
                            "weight for outcome_{} must be a finite non-negative number",
                            idx + 1
                        )));
                    }
                }
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    return Err(Error::Config(
                        "dimension-wise weights must not all be zero".into(),
                    ));
                }
                for w in weights.iter_mut() {
                    *w /= total;
                }
                for (idx, (rule, ty)) in rules.iter().zip(&schema.outcomes).enumerate() {
                    if weights[idx] == 0.0 {
                        continue; // zero-weight terms never evaluate
                    }
                    rule.validate(ty, &format!("outcome_{}", idx + 1))?;
                }
                range = dimension_wise_range(rules, weights);
                pair_sum = rules
                    .iter()
                    .zip(weights.iter())
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(r, w)| r.pair_sum().map(|s| s * w))
                    .sum::<Option<f64>>();
            }
            ContrastSpec::Prioritized { levels, tie_value } => {
                if levels.is_empty() {
                    return Err(Error::Config(
                        "prioritized contrast needs at least one level".into(),
                    ));
                }
                if !tie_value.is_finite() {
                    return Err(Error::Config("tie value must be finite".into()));
                }
                for (li, level) in levels.iter().enumerate() {
                    let what = format!("priority level {}", li + 1);
                    let ty = schema.outcomes.get(level.outcome).ok_or_else(|| {
                        Error::Config(format!(
                            "{what}: outcome index {} is out of range for {} outcomes",
                            level.outcome, q
                        ))
                    })?;
                    if matches!(level.rule, OutcomeRule::Difference) {
                        return Err(Error::Config(format!(
                            "{what}: prioritized levels need a win rule; \
                             the difference rule is not one"
                        )));
                    }
                    level.rule.validate(ty, &what)?;
                    if let TiePredicate::WithinMargin(d) = &level.tie {
                        if !(d.is_finite() && *d >= 0.0) {
                            return Err(Error::Config(format!(
                                "{what}: tie margin must be a finite non-negative number"
                            )));
                        }
                    }
                }
                let mut lo = *tie_value;
                let mut hi = *tie_value;
                for level in levels.iter() {
                    let (rlo, rhi) = level.rule.range().expect("win rules are bounded");
                    lo = lo.min(rlo);
                    hi = hi.max(rhi);
                }
                range = Some((lo, hi));
                let level_sums: Option<Vec<f64>> = levels
                    .iter()
                    .map(|l| l.rule.pair_sum_given_decided(&l.tie))
                    .collect();
                pair_sum = level_sums.and_then(|sums| {
                    let s = sums[0];
                    let all_match =
                        sums.iter().all(|x| *x == s) && 2.0 * *tie_value == s;
                    if all_match {
                        Some(s)
                    } else {
                        None
                    }
                });
            }
            ContrastSpec::Pareto { directions, tie_value } => {
                if directions.len() != q {
                    return Err(Error::Config(format!(
                        "pareto contrast declares {} directions for {} outcomes",
                        directions.len(),
                        q
                    )));
                }
                if !tie_value.is_finite() {
                    return Err(Error::Config("tie value must be finite".into()));
                }
                for (idx, ty) in schema.outcomes.iter().enumerate() {
                    require_ordered(ty, &format!("outcome_{}", idx + 1))?;
                }
                range = Some((tie_value.min(0.0), tie_value.max(1.0)));
                // Orientations sum to 1 on dominance, 2*tie_value on exact
                // equality, 0 on incomparable pairs: never constant.
                pair_sum = None;
            }
        }
        let link = match range {
            Some((lo, hi)) if lo >= 0.0 && hi <= 1.0 => Link::Logit,
            _ => Link::Identity,
        };
        Ok(CompiledContrast {
            spec,
            outcome_types: schema.outcomes.clone(),
            range,
            pair_sum,
            link,
        })
    }

    /// Outcome dimension this contrast was compiled against.
    pub fn q(&self) -> usize {
        self.outcome_types.len()
    }

    /// The underlying (normalized) spec.
    pub fn spec(&self) -> &ContrastSpec {
        &self.spec
    }

    /// Numeric view of an outcome vector: each coordinate mapped onto the
    /// real line per its declared type (categorical coordinates, which no
    /// compiled rule ever touches, become NaN placeholders).
    pub fn numeric_view(&self, outcomes: &[OutcomeValue]) -> Vec<f64> {
        debug_assert_eq!(outcomes.len(), self.outcome_types.len());
        outcomes
            .iter()
            .zip(&self.outcome_types)
            .map(|(v, ty)| ty.numeric(v).unwrap_or(f64::NAN))
            .collect()
    }

    /// Evaluate w(u, v) on raw outcome vectors.
    pub fn eval(&self, u: &[OutcomeValue], v: &[OutcomeValue]) -> f64 {
        self.eval_numeric(&self.numeric_view(u), &self.numeric_view(v))
    }

    /// Evaluate w(u, v) on precomputed numeric views (the hot path).
    pub fn eval_numeric(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.outcome_types.len());
        debug_assert_eq!(v.len(), self.outcome_types.len());
        match &self.spec {
            ContrastSpec::DimensionWise { rules, weights } => {
                let mut total = 0.0;
                for ((rule, w), (uq, vq)) in
                    rules.iter().zip(weights).zip(u.iter().zip(v))
                {
                    if *w > 0.0 {
                        total += w * rule.eval(*uq, *vq);
                    }
                }
                total
            }
            ContrastSpec::Prioritized { levels, tie_value } => {
                for level in levels {
                    let (uq, vq) = (u[level.outcome], v[level.outcome]);
                    if !level.tie.is_tie(uq, vq) {
                        return level.rule.eval(uq, vq);
                    }
                }
                *tie_value
            }
            ContrastSpec::Pareto { directions, tie_value } => {
                let mut any_better = false;
                let mut any_worse = false;
                for ((uq, vq), dir) in u.iter().zip(v).zip(directions) {
                    let d = match dir {
                        Direction::HigherBetter => uq - vq,
                        Direction::LowerBetter => vq - uq,
                    };
                    if d > 0.0 {
                        any_better = true;
                    } else if d < 0.0 {
                        any_worse = true;
                    }
                }
                match (any_better, any_worse) {
                    (true, false) => 1.0,
                    (false, false) => *tie_value,
                    _ => 0.0,
                }
            }
        }
    }
}

fn dimension_wise_range(rules: &[OutcomeRule], weights: &[f64]) -> Option<(f64, f64)> {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (rule, w) in rules.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let (rlo, rhi) = rule.range()?;
        lo += w * rlo;
        hi += w * rhi;
    }
    Some((lo, hi))
}

/// The observed between-cluster average contrast
/// w̄(winner, loser) = (N_i N_k)⁻¹ Σ_j Σ_l w(Y_winner,j , Y_loser,l).
pub fn cluster_pair_average(
    contrast: &CompiledContrast,
    winner: &ClusterRecord,
    loser: &ClusterRecord,
) -> f64 {
    let wu: Vec<Vec<f64>> =
        winner.individuals.iter().map(|ind| contrast.numeric_view(&ind.outcomes)).collect();
    let lu: Vec<Vec<f64>> =
        loser.individuals.iter().map(|ind| contrast.numeric_view(&ind.outcomes)).collect();
    let mut total = 0.0;
    for u in &wu {
        for v in &lu {
            total += contrast.eval_numeric(u, v);
        }
    }
    total / (wu.len() as f64 * lu.len() as f64)
}

/// How the two arm parameters (λ₁, λ₀) collapse into the reported effect Λ.
#[derive(Debug, Clone, PartialEq)]
pub enum SummarySpec {
    /// Λ = λ₁ − λ₀.
    Difference,
    /// Λ = λ₁ / λ₀.
    Ratio,
    /// Λ = f(λ₁, λ₀) for a user-declared expression with its analytic
    /// partial derivatives. The derivatives are cross-checked against
    /// central finite differences at every evaluation point.
    Custom { f: Expr, df_du: Expr, df_dv: Expr },
}

impl SummarySpec {
    /// Λ = f(λ₁, λ₀).
    pub fn value(&self, lambda1: f64, lambda0: f64) -> Result<f64> {
        let v = match self {
            SummarySpec::Difference => lambda1 - lambda0,
            SummarySpec::Ratio => {
                if lambda0 == 0.0 {
                    return Err(Error::Numerical(
                        "ratio summary is undefined at lambda_0 = 0".into(),
                    ));
                }
                lambda1 / lambda0
            }
            SummarySpec::Custom { f, .. } => f.eval(lambda1, lambda0),
        };
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "summary map is not finite at ({lambda1}, {lambda0})"
            )));
        }
        Ok(v)
    }

    /// ∇f(λ₁, λ₀). For custom maps the declared derivatives are checked
    /// against central finite differences with step 1e-5·(1+|λ|); a
    /// mismatch beyond 1e-4 (relative to scale, with an absolute floor so
    /// genuinely zero gradients pass) is a hard error, because the
    /// delta-method variance is only as good as this gradient.
    pub fn gradient(&self, lambda1: f64, lambda0: f64) -> Result<[f64; 2]> {
        match self {
            SummarySpec::Difference => Ok([1.0, -1.0]),
            SummarySpec::Ratio => {
                if lambda0 == 0.0 {
                    return Err(Error::Numerical(
                        "ratio summary is undefined at lambda_0 = 0".into(),
                    ));
                }
                Ok([1.0 / lambda0, -lambda1 / (lambda0 * lambda0)])
            }
            SummarySpec::Custom { f, df_du, df_dv } => {
                let g = [df_du.eval(lambda1, lambda0), df_dv.eval(lambda1, lambda0)];
                if !g[0].is_finite() || !g[1].is_finite() {
                    return Err(Error::Numerical(format!(
                        "custom summary gradient is not finite at ({lambda1}, {lambda0})"
                    )));
                }
                let h1 = 1e-5 * (1.0 + lambda1.abs());
                let h0 = 1e-5 * (1.0 + lambda0.abs());
                let fd = [
                    (f.eval(lambda1 + h1, lambda0) - f.eval(lambda1 - h1, lambda0)) / (2.0 * h1),
                    (f.eval(lambda1, lambda0 + h0) - f.eval(lambda1, lambda0 - h0)) / (2.0 * h0),
                ];
                for i in 0..2 {
                    let scale = 1.0 + g[i].abs().max(fd[i].abs());
                    if !fd[i].is_finite() || (g[i] - fd[i]).abs() > 1e-4 * scale {
                        return Err(Error::Numerical(format!(
                            "custom summary gradient component {} disagrees with finite \
                             differences at ({lambda1}, {lambda0}): declared {}, numeric {}",
                            i + 1,
                            g[i],
                            fd[i]
                        )));
                    }
                }
                Ok(g)
            }
        }
    }
}

/// Point estimate Λ = f(λ₁, λ₀) and its delta-method variance ∇fᵀ V ∇f.
pub fn summarize(spec: &SummarySpec, lambda: [f64; 2], cov: &Mat2) -> Result<(f64, f64)> {
    let value = spec.value(lambda[0], lambda[1])?;
    let grad = spec.gradient(lambda[0], lambda[1])?;
    Ok((value, quad2(grad, cov)))
}
