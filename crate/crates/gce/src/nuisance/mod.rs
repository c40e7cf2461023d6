//! Working models for ζ — the conditional expected pairwise contrast —
//! plus the machinery both learners share: the pair-level training-set
//! builder, per-dataset prediction caches, and fitted-model summaries.
//!
//! Unit feature vectors follow the construction
//! U_ij = (A_i, X_ij, X̄_i, C_i, N_i); the probabilistic index model is fit
//! on differences U_ij − U_kl, the boosted learner on concatenations.

mod boost;
mod pim;

pub use boost::{fit_boosted, BoostConfig, BoostedModel, Stump};
pub use pim::{fit_pim, PimConfig, PimModel};

use serde::Serialize;

use crate::contrast::{CompiledContrast, Link};
use crate::data::{ClusterRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::kernel::ZetaTable;

/// Learner selection for estimators that fit ζ themselves.
#[derive(Debug, Clone)]
pub enum LearnerConfig {
    Pim(PimConfig),
    Boosted(BoostConfig),
}

/// One training row materialized as explicit feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    pub u_winner: Vec<f64>,
    pub u_loser: Vec<f64>,
}

/// Fast approximation of 1/(1+e^{−x}), exact at 0 and monotone, with
/// relative error below 1e−11. Hot inner loops evaluate this tens of
/// millions of times per fit, where the libm round trip dominates.
#[inline]
pub(crate) fn fast_sigmoid(x: f64) -> f64 {
    let ax = x.abs();
    if ax > 36.8 {
        // e^{−ax} < 1e−16 vanishes against 1.0 at f64 precision.
        return if x >= 0.0 { 1.0 } else { 0.0 };
    }
    let t = exp_neg(ax);
    if x >= 0.0 {
        1.0 / (1.0 + t)
    } else {
        t / (1.0 + t)
    }
}

/// e^{−ax} for 0 ≤ ax ≤ 37 via range reduction and a degree-10 polynomial
/// (Taylor remainder ≈ 2e−13 at |r| ≤ ln2/2).
#[inline]
fn exp_neg(ax: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let z = -ax;
    let n = (z * LOG2E).round();
    let r = (z - n * LN2_HI) - n * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0
                            + r * (1.0 / 720.0
                                + r * (1.0 / 5_040.0
                                    + r * (1.0 / 40_320.0
                                        + r * (1.0 / 362_880.0
                                            + r * (1.0 / 3_628_800.0))))))))));
    // Scale by 2^n through the exponent bits; n ∈ [−54, 0] keeps it normal.
    f64::from_bits(((1023 + n as i64) as u64) << 52) * p
}

/// Per-unit feature rows for a whole dataset, flattened row-major with the
/// observed treatment in slot 0.
#[derive(Debug)]
pub(crate) struct UnitMatrix {
    pub dim: usize,
    pub n_units: usize,
    /// First unit index of each cluster, plus a trailing total.
    pub offsets: Vec<usize>,
    pub features: Vec<f64>,
    pub arm: Vec<u8>,
}

impl UnitMatrix {
    pub fn new(data: &TrialDataset) -> Self {
        let p_x = data.schema.p_x;
        let dim = 2 + 2 * p_x + data.schema.p_c;
        let n_units = data.total_individuals();
        let mut offsets = Vec::with_capacity(data.m() + 1);
        let mut features = Vec::with_capacity(n_units * dim);
        let mut arm = Vec::with_capacity(n_units);
        let mut next = 0usize;
        for cl in &data.clusters {
            offsets.push(next);
            next += cl.size();
            let xbar = cluster_x_means(cl, p_x);
            for ind in &cl.individuals {
                features.push(cl.treatment as f64);
                features.extend_from_slice(&ind.x_covariates);
                features.extend_from_slice(&xbar);
                features.extend_from_slice(&cl.c_covariates);
                features.push(cl.size() as f64);
                arm.push(cl.treatment);
            }
        }
        offsets.push(next);
        UnitMatrix { dim, n_units, offsets, features, arm }
    }

    #[inline]
    pub fn unit(&self, u: usize) -> &[f64] {
        &self.features[u * self.dim..(u + 1) * self.dim]
    }

}

/// Within-cluster means of the individual-level covariates.
fn cluster_x_means(cl: &ClusterRecord, p_x: usize) -> Vec<f64> {
    let mut xbar = vec![0.0; p_x];
    for ind in &cl.individuals {
        for (s, x) in xbar.iter_mut().zip(&ind.x_covariates) {
            *s += x;
        }
    }
    let n = cl.size() as f64;
    for s in &mut xbar {
        *s /= n;
    }
    xbar
}

/// Pair-level training data in unit-indexed form: rows reference per-unit
/// feature vectors instead of materializing every pair's features.
#[derive(Debug)]
pub struct PairTrainingSet {
    pub u_dim: usize,
    pub(crate) units: UnitMatrix,
    pub(crate) winners: Vec<u32>,
    pub(crate) losers: Vec<u32>,
    pub(crate) labels: Vec<f64>,
}

impl PairTrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, row: usize) -> f64 {
        self.labels[row]
    }

    /// Materialize one row's feature vectors.
    pub fn row(&self, row: usize) -> PairFeature {
        PairFeature {
            u_winner: self.units.unit(self.winners[row] as usize).to_vec(),
            u_loser: self.units.unit(self.losers[row] as usize).to_vec(),
        }
    }

    /// Assemble a training set from explicit unit feature rows and
    /// (winner index, loser index, label) triples — for fitting ζ models on
    /// externally constructed data (calibration checks, synthetic
    /// benchmarks). Unit arms alternate 1/0 by index, which only matters to
    /// consumers that read arms back out.
    pub fn from_rows(unit_rows: Vec<Vec<f64>>, rows: Vec<(u32, u32, f64)>) -> PairTrainingSet {
        let dim = unit_rows[0].len();
        let n_units = unit_rows.len();
        let units = UnitMatrix {
            dim,
            n_units,
            offsets: (0..=n_units).collect(),
            features: unit_rows.into_iter().flatten().collect(),
            arm: (0..n_units).map(|u| (u % 2) as u8).collect(),
        };
        let mut winners = Vec::new();
        let mut losers = Vec::new();
        let mut labels = Vec::new();
        for (w, l, y) in rows {
            winners.push(w);
            losers.push(l);
            labels.push(y);
        }
        PairTrainingSet { u_dim: dim, units, winners, losers, labels }
    }
}

/// Shorthand used throughout the unit tests.
#[cfg(test)]
pub(crate) fn synth_training(
    unit_rows: Vec<Vec<f64>>,
    rows: Vec<(u32, u32, f64)>,
) -> PairTrainingSet {
    PairTrainingSet::from_rows(unit_rows, rows)
}

/// Build one training row per individual pair (j, l) for every supplied
/// ordered cluster pair (i, k), with label w(Y_ij, Y_kl). Pairs whose
/// clusters share an arm are skipped: ζ models train on cross-arm
/// comparisons only.
pub fn build_pair_training_set(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    pairs: &[(usize, usize)],
) -> Result<PairTrainingSet> {
    let units = UnitMatrix::new(data);
    let views: Vec<Vec<Vec<f64>>> = data
        .clusters
        .iter()
        .map(|cl| cl.individuals.iter().map(|ind| contrast.numeric_view(&ind.outcomes)).collect())
        .collect();
    let mut winners = Vec::new();
    let mut losers = Vec::new();
    let mut labels = Vec::new();
    for &(i, k) in pairs {
        if data.clusters[i].treatment == data.clusters[k].treatment {
            continue;
        }
        for (j, vi) in views[i].iter().enumerate() {
            let uw = (units.offsets[i] + j) as u32;
            for (l, vk) in views[k].iter().enumerate() {
                winners.push(uw);
                losers.push((units.offsets[k] + l) as u32);
                labels.push(contrast.eval_numeric(vi, vk));
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Config(
            "nuisance training set is empty: no cross-arm cluster pairs in the supplied set"
                .into(),
        ));
    }
    Ok(PairTrainingSet { u_dim: units.dim, units, winners, losers, labels })
}

/// A fitted ζ model of either kind.
pub enum NuisanceModel {
    Pim(PimModel),
    Boosted(BoostedModel),
}

impl NuisanceModel {
    pub fn link(&self) -> Link {
        match self {
            NuisanceModel::Pim(m) => m.link,
            NuisanceModel::Boosted(m) => m.link,
        }
    }

    fn clamp(&self) -> Option<(f64, f64)> {
        match self {
            NuisanceModel::Pim(m) => m.clamp,
            NuisanceModel::Boosted(m) => m.clamp,
        }
    }

    /// Raw link-scale score for one explicit feature pair.
    fn score_pair(&self, u_winner: &[f64], u_loser: &[f64]) -> f64 {
        match self {
            NuisanceModel::Pim(m) => m.score_difference(u_winner, u_loser),
            NuisanceModel::Boosted(m) => m.score_concat(u_winner, u_loser),
        }
    }

    pub fn summary(&self) -> NuisanceSummary {
        match self {
            NuisanceModel::Pim(m) => NuisanceSummary::Pim {
                coefficients: m.theta.clone(),
                iterations: m.iterations,
                converged: m.converged,
                ridged: m.ridged,
                separation: m.separation,
                link: link_name(m.link),
            },
            NuisanceModel::Boosted(m) => NuisanceSummary::Boosted {
                trees: m.stumps.len(),
                constant_model: m.constant,
                link: link_name(m.link),
            },
        }
    }
}

fn link_name(link: Link) -> String {
    match link {
        Link::Logit => "logit".into(),
        Link::Identity => "identity".into(),
    }
}

/// Fitted-model summary carried in reports for auditability.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuisanceSummary {
    Pim {
        coefficients: Vec<f64>,
        iterations: usize,
        converged: bool,
        ridged: bool,
        separation: bool,
        link: String,
    },
    Boosted {
        trees: usize,
        constant_model: bool,
        link: String,
    },
    /// One summary per cross-fitting cell.
    PerCell { cells: Vec<CellNuisance> },
    /// Predictions supplied externally rather than fit here.
    Injected,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellNuisance {
    pub cell: [usize; 2],
    pub summary: NuisanceSummary,
}

/// Map a link-scale score to the outcome scale, respecting the model's
/// clamp: logit predictions stay in (ε, 1−ε); identity predictions stay in
/// the declared contrast range when one exists.
#[inline]
fn inverse_link(link: Link, clamp: Option<(f64, f64)>, score: f64) -> f64 {
    match link {
        Link::Logit => fast_sigmoid(score).clamp(1e-6, 1.0 - 1e-6),
        Link::Identity => match clamp {
            Some((lo, hi)) => score.clamp(lo, hi),
            None => score,
        },
    }
}

/// Predicted mean contrast ζ̂_{ik,a}: the average over all individual pairs
/// of g⁻¹(score) with the winner's treatment feature set to `a` and the
/// loser's to 1−a, regardless of observed assignments.
pub fn predict_zeta(
    model: &NuisanceModel,
    winner: &ClusterRecord,
    loser: &ClusterRecord,
    a: u8,
) -> f64 {
    let (uw, ul) = (unit_rows(winner, a), unit_rows(loser, 1 - a));
    let mut acc = 0.0;
    for w in &uw {
        for l in &ul {
            acc += inverse_link(model.link(), model.clamp(), model.score_pair(w, l));
        }
    }
    acc / (uw.len() * ul.len()) as f64
}

/// Unit feature rows of one cluster with the treatment slot overridden.
fn unit_rows(cl: &ClusterRecord, a: u8) -> Vec<Vec<f64>> {
    let p_x = cl.individuals.first().map_or(0, |i| i.x_covariates.len());
    let xbar = cluster_x_means(cl, p_x);
    cl.individuals
        .iter()
        .map(|ind| {
            let mut u = Vec::with_capacity(2 + 2 * p_x + cl.c_covariates.len());
            u.push(a as f64);
            u.extend_from_slice(&ind.x_covariates);
            u.extend_from_slice(&xbar);
            u.extend_from_slice(&cl.c_covariates);
            u.push(cl.size() as f64);
            u
        })
        .collect()
}

/// Per-dataset prediction cache: decomposes every unit's contribution to
/// the model score once, so each ζ̂ entry costs one pass over the pair's
/// individual grid instead of re-evaluating the model.
pub struct ZetaPredictor {
    link: Link,
    clamp: Option<(f64, f64)>,
    offsets: Vec<usize>,
    kind: PredictorKind,
}

enum PredictorKind {
    /// score(j,l,a) = β_A(2a−1) + rest[j] − rest[l].
    Pim { beta_a: f64, rest: Vec<f64> },
    /// score(j,l,a) = f0 + winner_part[j][a] + loser_part[l][1−a].
    Boosted { f0: f64, winner_part: Vec<[f64; 2]>, loser_part: Vec<[f64; 2]> },
}

impl ZetaPredictor {
    pub fn new(model: &NuisanceModel, data: &TrialDataset) -> Self {
        let units = UnitMatrix::new(data);
        let kind = match model {
            NuisanceModel::Pim(m) => {
                let rest: Vec<f64> = (0..units.n_units)
                    .map(|u| {
                        let row = units.unit(u);
                        row[1..].iter().zip(&m.theta[1..]).map(|(x, t)| x * t).sum()
                    })
                    .collect();
                PredictorKind::Pim { beta_a: m.theta[0], rest }
            }
            NuisanceModel::Boosted(m) => {
                let mut winner_part = vec![[0.0f64; 2]; units.n_units];
                let mut loser_part = vec![[0.0f64; 2]; units.n_units];
                let d = m.u_dim;
                for st in &m.stumps {
                    let f = st.feature as usize;
                    let (part, local) = if f < d {
                        (&mut winner_part, f)
                    } else {
                        (&mut loser_part, f - d)
                    };
                    for u in 0..units.n_units {
                        for arm in 0..2usize {
                            let x = if local == 0 {
                                arm as f64
                            } else {
                                units.unit(u)[local]
                            };
                            part[u][arm] +=
                                if x <= st.threshold { st.left as f64 } else { st.right as f64 };
                        }
                    }
                }
                PredictorKind::Boosted { f0: m.f0, winner_part, loser_part }
            }
        };
        ZetaPredictor {
            link: model.link(),
            clamp: model.clamp(),
            offsets: units.offsets,
            kind,
        }
    }

    /// ζ̂_{ik,a} for clusters by index, averaging over the individual grid.
    pub fn zeta(&self, i: usize, k: usize, a: u8) -> f64 {
        let wi = self.offsets[i]..self.offsets[i + 1];
        let lk = self.offsets[k]..self.offsets[k + 1];
        let count = (wi.len() * lk.len()) as f64;
        let mut acc = 0.0;
        match &self.kind {
            PredictorKind::Pim { beta_a, rest } => {
                let shift = beta_a * (2.0 * a as f64 - 1.0);
                for j in wi {
                    for l in lk.clone() {
                        acc += inverse_link(self.link, self.clamp, shift + rest[j] - rest[l]);
                    }
                }
            }
            PredictorKind::Boosted { f0, winner_part, loser_part } => {
                let (ai, al) = (a as usize, 1 - a as usize);
                for j in wi {
                    let base = f0 + winner_part[j][ai];
                    for l in lk.clone() {
                        acc += inverse_link(self.link, self.clamp, base + loser_part[l][al]);
                    }
                }
            }
        }
        acc / count
    }

    /// Fill all four table entries owned by the unordered pair {i, k}.
    pub fn fill_pair(&self, table: &mut ZetaTable, i: usize, k: usize) {
        for a in 0..2u8 {
            table.set(a, i, k, self.zeta(i, k, a));
            table.set(a, k, i, self.zeta(k, i, a));
        }
    }
}

/// Fit the configured learner on the supplied training pairs.
pub fn fit_learner(
    rows: &PairTrainingSet,
    contrast: &CompiledContrast,
    config: &LearnerConfig,
) -> Result<NuisanceModel> {
    match config {
        LearnerConfig::Pim(c) => Ok(NuisanceModel::Pim(fit_pim(rows, contrast, c)?)),
        LearnerConfig::Boosted(c) => Ok(NuisanceModel::Boosted(fit_boosted(rows, contrast, c)?)),
    }
}
