//! Study data-generating processes: informative cluster sizes, cluster- and
//! individual-level covariates, a shared random intercept, and two potential
//! outcomes per individual — a three-category ordinal and a continuous one —
//! coupled across arms through shared uniforms so treatment effects are
//! monotone at the individual level.

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::contrast::{ContrastSpec, OutcomeRule, PriorityLevel, TiePredicate};
use crate::data::{
    ClusterRecord, IndividualRecord, OutcomeSchema, OutcomeType, OutcomeValue, TrialDataset,
};
use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng, StreamKey};

/// Which study binding to use: the contrast attached to generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Equal-weight blend: tie-inclusive win on the ordinal outcome plus
    /// strict win on the continuous one.
    Study1,
    /// Prioritized comparison: strict win on the ordinal outcome, ties
    /// passed to a strict win on the continuous one.
    Study2,
}

/// Generator constants. Defaults reproduce the study settings; every knob
/// is overridable for sensitivity experiments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpParams {
    /// Cluster sizes are discrete-uniform on [n_min, n_max].
    pub n_min: u64,
    pub n_max: u64,
    /// Treatment assignment probability.
    pub pi: f64,
    /// C₁ ~ Normal(N/10, c1_sd²).
    pub c1_sd: f64,
    /// X₂ ~ Normal(X̄₁(2C₂−1), x2_sd²).
    pub x2_sd: f64,
    /// Cluster random intercept γ ~ Normal(0, gamma_sd²).
    pub gamma_sd: f64,
    /// Upper ordinal cutpoints by arm, [treated, control]. The lower
    /// cutpoint is N/10; the smaller treated value pushes treated
    /// individuals toward the top category.
    pub alpha2: [f64; 2],
    /// Treated shift of the continuous outcome per unit of cluster size
    /// (Y₂ gains N·shift under treatment).
    pub y2_shift_per_n: f64,
    /// Force every cluster to this size, making sizes non-informative.
    pub constant_size: Option<u64>,
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            n_min: 2,
            n_max: 10,
            pi: 0.5,
            c1_sd: 2.0,
            x2_sd: 3.0,
            gamma_sd: 1.0,
            alpha2: [1.5, 2.0],
            y2_shift_per_n: 0.2,
            constant_size: None,
        }
    }
}

/// A complete simulation setting: contrast binding, number of clusters,
/// master seed, and generator constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub preset: Preset,
    pub m: usize,
    pub seed: u64,
    pub params: DgpParams,
}

impl Scenario {
    pub fn study1(m: usize, seed: u64) -> Self {
        Scenario { preset: Preset::Study1, m, seed, params: DgpParams::default() }
    }

    pub fn study2(m: usize, seed: u64) -> Self {
        Scenario { preset: Preset::Study2, m, seed, params: DgpParams::default() }
    }

    /// The outcome/covariate schema every generated trial carries.
    pub fn schema() -> OutcomeSchema {
        OutcomeSchema {
            outcomes: vec![OutcomeType::Ordinal { levels: vec![1, 2, 3] }, OutcomeType::Real],
            p_x: 2,
            p_c: 2,
        }
    }

    /// The contrast this preset binds to generated data.
    pub fn contrast_spec(&self) -> ContrastSpec {
        match self.preset {
            Preset::Study1 => ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::TieInclusiveWin, OutcomeRule::StrictGreater],
                weights: vec![0.5, 0.5],
            },
            Preset::Study2 => ContrastSpec::Prioritized {
                levels: vec![
                    PriorityLevel {
                        outcome: 0,
                        rule: OutcomeRule::StrictGreater,
                        tie: TiePredicate::Equal,
                    },
                    PriorityLevel {
                        outcome: 1,
                        rule: OutcomeRule::StrictGreater,
                        tie: TiePredicate::Equal,
                    },
                ],
                tie_value: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if self.m < 4 {
            return Err(Error::Config(format!("scenario needs m ≥ 4, got {}", self.m)));
        }
        if p.n_min < 1 || p.n_min > p.n_max {
            return Err(Error::Config(format!(
                "cluster-size bounds must satisfy 1 ≤ n_min ≤ n_max, got [{}, {}]",
                p.n_min, p.n_max
            )));
        }
        if !(p.pi > 0.0 && p.pi < 1.0) {
            return Err(Error::Config(format!(
                "assignment probability must lie in (0,1), got {}",
                p.pi
            )));
        }
        // Cutpoint monotonicity: the lower cutpoint N/10 must stay below
        // both upper cutpoints at every realizable size.
        let n_top = p.constant_size.unwrap_or(p.n_max) as f64;
        if n_top / 10.0 >= p.alpha2[0].min(p.alpha2[1]) {
            return Err(Error::Config(format!(
                "ordinal cutpoints must increase: N/10 reaches {} but alpha2 = {:?}",
                n_top / 10.0,
                p.alpha2
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One cluster with both potential outcome vectors.
pub(crate) struct DrawnCluster {
    pub n: usize,
    pub a: u8,
    pub c: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// Potential outcomes: `y[0]` under treatment, `y[1]` under control,
    /// one outcome vector per individual.
    pub y: [Vec<Vec<OutcomeValue>>; 2],
}

/// Draw one cluster. Fixed draw order (size, arm, cluster covariates,
/// intercept, X₁ sweep, X₂ sweep, per-individual outcome uniforms) keeps
/// the stream layout stable for reproducibility.
pub(crate) fn draw_cluster(params: &DgpParams, rng: &mut CounterRng) -> DrawnCluster {
    let n = match params.constant_size {
        Some(c) => c,
        None => params.n_min + rng.below(params.n_max - params.n_min + 1),
    } as usize;
    let nf = n as f64;
    let a = u8::from(rng.uniform() < params.pi);
    let c1 = Normal::new(nf / 10.0, params.c1_sd).unwrap().sample(rng);
    let c2 = f64::from(rng.uniform() < nf / (nf + 10.0));
    let gamma = Normal::new(0.0, params.gamma_sd).unwrap().sample(rng);
    let x1: Vec<f64> = (0..n).map(|_| f64::from(rng.uniform() < nf / 10.0)).collect();
    let xbar1 = x1.iter().sum::<f64>() / nf;
    let x2_law = Normal::new(xbar1 * (2.0 * c2 - 1.0), params.x2_sd).unwrap();
    let x2: Vec<f64> = (0..n).map(|_| x2_law.sample(rng)).collect();

    let mut y_treated = Vec::with_capacity(n);
    let mut y_control = Vec::with_capacity(n);
    for j in 0..n {
        let eta = c1.cos() + c2 + x1[j] + x2[j].sin() + gamma;
        // One uniform drives the ordinal outcome in both arms, one
        // exponential shock is shared by both continuous outcomes.
        let u = rng.uniform();
        let eps = -(1.0 - rng.uniform()).ln() - 1.0;
        let p1 = expit(nf / 10.0 + eta);
        let category = |alpha2: f64| -> i64 {
            if u < p1 {
                1
            } else if u < expit(alpha2 + eta) {
                2
            } else {
                3
            }
        };
        let y2 = eta + eps;
        y_treated.push(vec![
            OutcomeValue::Ordinal(category(params.alpha2[0])),
            OutcomeValue::Real(nf * params.y2_shift_per_n + y2),
        ]);
        y_control.push(vec![
            OutcomeValue::Ordinal(category(params.alpha2[1])),
            OutcomeValue::Real(y2),
        ]);
    }
    let x = x1.into_iter().zip(x2).map(|(a, b)| vec![a, b]).collect();
    DrawnCluster { n, a, c: vec![c1, c2], x, y: [y_treated, y_control] }
}

/// One generated trial: the observed dataset estimators see, plus the
/// hidden potential outcomes kept aside for oracle checks. Estimators take
/// only the [`TrialDataset`], so the hidden arm cannot leak into them.
pub struct GeneratedTrial {
    pub data: TrialDataset,
    /// `potential[i][0]` holds cluster i's treated-arm outcome vectors,
    /// `potential[i][1]` the control-arm ones.
    pub potential: Vec<[Vec<Vec<OutcomeValue>>; 2]>,
}

/// Generate one replicate's trial, deterministic in (scenario seed,
/// replicate index) and independent across clusters.
pub fn generate_trial(scenario: &Scenario, replicate: u64) -> Result<GeneratedTrial> {
    scenario.validate()?;
    let ckey = StreamKey::root(scenario.seed)
        .child(tags::REPLICATE)
        .child(replicate)
        .child(tags::CLUSTER);
    let mut clusters = Vec::with_capacity(scenario.m);
    let mut potential = Vec::with_capacity(scenario.m);
    for i in 0..scenario.m {
        let mut rng = ckey.child(i as u64).rng();
        let drawn = draw_cluster(&scenario.params, &mut rng);
        let observed_arm = if drawn.a == 1 { 0 } else { 1 };
        let individuals = (0..drawn.n)
            .map(|j| IndividualRecord {
                outcomes: drawn.y[observed_arm][j].clone(),
                x_covariates: drawn.x[j].clone(),
            })
            .collect();
        clusters.push(ClusterRecord {
            id: format!("c{i:04}"),
            treatment: drawn.a,
            c_covariates: drawn.c.clone(),
            individuals,
        });
        potential.push(drawn.y);
    }
    let data = TrialDataset::new(clusters, Scenario::schema(), Some(scenario.params.pi))?;
    Ok(GeneratedTrial { data, potential })
}
