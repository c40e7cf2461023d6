//! Gradient-boosted depth-1 regression stumps on concatenated unit
//! features (U_ij, U_kl), used as the data-adaptive ζ learner.
//!
//! The fit is histogram-based: each feature is quantized once into at most
//! 256 bins, and every tree accumulates Newton gradient/Hessian pairs per
//! bin. Because rows are individual pairs, a row's score decomposes into a
//! winner-unit part plus a loser-unit part; the running boosted score is
//! therefore kept per unit and treatment slot rather than per row, which
//! keeps the whole working state cache-resident even for hundreds of
//! thousands of rows.

use crate::contrast::{CompiledContrast, Link};
use crate::error::{Error, Result};
use crate::rng::{tags, StreamKey};

use super::{fast_sigmoid, PairTrainingSet};

#[derive(Debug, Clone)]
pub struct BoostConfig {
    pub trees: usize,
    pub shrinkage: f64,
    /// Per-tree row subsampling fraction in (0, 1].
    pub subsample: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig { trees: 200, shrinkage: 0.1, subsample: 0.8, seed: 0 }
    }
}

/// One depth-1 tree: `feature < u_dim` tests the winner-side unit vector,
/// otherwise the loser side; rows with value ≤ threshold receive `left`.
/// Leaf values are stored with shrinkage already applied.
#[derive(Debug, Clone, Copy)]
pub struct Stump {
    pub feature: u16,
    pub threshold: f64,
    pub left: f32,
    pub right: f32,
}

#[derive(Debug)]
pub struct BoostedModel {
    pub(crate) f0: f64,
    pub(crate) stumps: Vec<Stump>,
    pub(crate) u_dim: usize,
    pub(crate) link: Link,
    pub(crate) clamp: Option<(f64, f64)>,
    pub(crate) constant: bool,
}

impl BoostedModel {
    /// Link-scale score for one explicit feature pair.
    #[inline]
    pub(crate) fn score_concat(&self, u_winner: &[f64], u_loser: &[f64]) -> f64 {
        let d = self.u_dim;
        let mut f = self.f0;
        for st in &self.stumps {
            let fi = st.feature as usize;
            let x = if fi < d { u_winner[fi] } else { u_loser[fi - d] };
            f += if x <= st.threshold { st.left as f64 } else { st.right as f64 };
        }
        f
    }
}

/// Guards the Newton leaf and gain denominators against empty sides.
const EPS_H: f64 = 1e-9;
/// Bin-edge budget per feature (bins = edges + 1 ≤ 256, so a bin fits u8).
const MAX_EDGES: usize = 255;
/// Rows sampled for quantile estimation.
const EDGE_SAMPLE: usize = 4096;

pub fn fit_boosted(
    rows: &PairTrainingSet,
    contrast: &CompiledContrast,
    config: &BoostConfig,
) -> Result<BoostedModel> {
    let n = rows.len();
    if n < 20 {
        return Err(Error::Config(format!(
            "boosted fit needs at least 20 rows, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&config.subsample) || config.subsample == 0.0 {
        return Err(Error::Config(format!(
            "subsample fraction must be in (0, 1], got {}",
            config.subsample
        )));
    }
    let link = contrast.link;
    let labels: Vec<f64> = match link {
        Link::Logit => rows.labels.iter().map(|&y| y.clamp(1e-6, 1.0 - 1e-6)).collect(),
        Link::Identity => rows.labels.clone(),
    };
    let mean = labels.iter().sum::<f64>() / n as f64;
    let (lo, hi) = labels.iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
    let f0 = match link {
        Link::Logit => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
        Link::Identity => mean,
    };
    let d = rows.u_dim;
    let mut model = BoostedModel {
        f0,
        stumps: Vec::with_capacity(config.trees),
        u_dim: d,
        link,
        clamp: contrast.range,
        constant: false,
    };
    if hi - lo < 1e-12 || config.trees == 0 {
        model.constant = true;
        return Ok(model);
    }

    let units = &rows.units;
    let n_units = units.n_units;

    // Quantile bin edges per concatenated feature, from a strided row sample.
    let stride = (n / EDGE_SAMPLE).max(1);
    let mut edges_all: Vec<Vec<f64>> = Vec::with_capacity(2 * d);
    let mut sample = Vec::with_capacity(n.div_ceil(stride));
    for f in 0..2 * d {
        sample.clear();
        let mut r = 0;
        while r < n {
            let u = if f < d { rows.winners[r] } else { rows.losers[r] } as usize;
            sample.push(units.unit(u)[f % d]);
            r += stride;
        }
        sample.sort_unstable_by(f64::total_cmp);
        let mut edges = Vec::new();
        for t in 1..=MAX_EDGES {
            let v = sample[t * sample.len() / (MAX_EDGES + 1)];
            if edges.last() != Some(&v) {
                edges.push(v);
            }
        }
        edges_all.push(edges);
    }

    // Per-unit bin ids for each side's edge set.
    let mut wbins = vec![0u8; n_units * d];
    let mut lbins = vec![0u8; n_units * d];
    for u in 0..n_units {
        let row = units.unit(u);
        for f in 0..d {
            wbins[u * d + f] = edges_all[f].partition_point(|e| *e < row[f]) as u8;
            lbins[u * d + f] = edges_all[d + f].partition_point(|e| *e < row[f]) as u8;
        }
    }

    // Running boosted score per (unit, treatment slot); a training row's
    // score is f0 + winner_part[2·unit + observed arm] + loser_part[...].
    let mut winner_part = vec![0.0f64; n_units * 2];
    let mut loser_part = vec![0.0f64; n_units * 2];
    let w_slot: Vec<u32> =
        rows.winners.iter().map(|&u| u * 2 + units.arm[u as usize] as u32).collect();
    let l_slot: Vec<u32> =
        rows.losers.iter().map(|&u| u * 2 + units.arm[u as usize] as u32).collect();

    let key = StreamKey::root(config.seed).child(tags::TREE);
    let mut order: Vec<u32> = (0..n as u32).collect();
    let k = if config.subsample >= 1.0 {
        n
    } else {
        ((config.subsample * n as f64).floor() as usize).clamp(1, n)
    };
    let mut hist = vec![[0.0f32; 2]; 256 * 2 * d];

    for t in 0..config.trees {
        if k < n {
            // Partial Fisher–Yates: after the loop, order[..k] is a uniform
            // k-subset. Starting from last tree's permutation is still
            // uniform, so the scratch array is never re-initialized.
            let mut rng = key.child(t as u64).rng();
            for i in 0..k {
                let j = i + rng.below((n - i) as u64) as usize;
                order.swap(i, j);
            }
        }
        hist.fill([0.0f32; 2]);
        let mut g_total = 0.0f64;
        let mut h_total = 0.0f64;
        for &r in &order[..k] {
            let r = r as usize;
            let (ws, ls) = (w_slot[r] as usize, l_slot[r] as usize);
            let f_row = f0 + winner_part[ws] + loser_part[ls];
            let (g, h) = match link {
                Link::Logit => {
                    let p = fast_sigmoid(f_row);
                    (labels[r] - p, p * (1.0 - p))
                }
                Link::Identity => (labels[r] - f_row, 1.0),
            };
            g_total += g;
            h_total += h;
            let (g32, h32) = (g as f32, h as f32);
            let wrow = &wbins[(ws >> 1) * d..(ws >> 1) * d + d];
            let lrow = &lbins[(ls >> 1) * d..(ls >> 1) * d + d];
            for f in 0..d {
                let bw = &mut hist[f * 256 + wrow[f] as usize];
                bw[0] += g32;
                bw[1] += h32;
                let bl = &mut hist[(d + f) * 256 + lrow[f] as usize];
                bl[0] += g32;
                bl[1] += h32;
            }
        }

        // Best single split by the Newton gain; ties keep the first
        // (lowest feature, leftmost threshold).
        let parent = g_total * g_total / (h_total + EPS_H);
        let mut best: Option<(usize, usize, f64, f64)> = None; // (f, b, gl, hl)
        let mut best_gain = parent + 1e-12;
        for (f, edges) in edges_all.iter().enumerate() {
            let (mut gl, mut hl) = (0.0f64, 0.0f64);
            for b in 1..=edges.len() {
                let cell = hist[f * 256 + (b - 1)];
                gl += cell[0] as f64;
                hl += cell[1] as f64;
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = gl * gl / (hl + EPS_H) + gr * gr / (hr + EPS_H);
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((f, b, gl, hl));
                }
            }
        }
        let stump = match best {
            Some((f, b, gl, hl)) => Stump {
                feature: f as u16,
                threshold: edges_all[f][b - 1],
                left: (config.shrinkage * gl / (hl + EPS_H)) as f32,
                right: (config.shrinkage * (g_total - gl) / (h_total - hl + EPS_H)) as f32,
            },
            None => {
                // No informative split: a constant adjustment toward the
                // current mean residual.
                let c = (config.shrinkage * g_total / (h_total + EPS_H)) as f32;
                Stump { feature: 0, threshold: f64::INFINITY, left: c, right: c }
            }
        };

        // Fold the stump into the per-unit running scores for both possible
        // treatment-slot values, so later prediction at either orientation
        // sees the same ensemble the training loop used.
        let fi = stump.feature as usize;
        let (part, local) = if fi < d {
            (&mut winner_part, fi)
        } else {
            (&mut loser_part, fi - d)
        };
        for u in 0..n_units {
            for arm in 0..2usize {
                let x = if local == 0 { arm as f64 } else { units.unit(u)[local] };
                part[u * 2 + arm] +=
                    if x <= stump.threshold { stump.left as f64 } else { stump.right as f64 };
            }
        }
        model.stumps.push(stump);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::{predict_zeta, synth_training, NuisanceModel};
    use super::*;
    use crate::contrast::{CompiledContrast, ContrastSpec, OutcomeRule};
    use crate::data::{OutcomeSchema, OutcomeType};
    use crate::rng::StreamKey;
    use rand::RngCore;

    fn probability_contrast() -> CompiledContrast {
        let schema = OutcomeSchema { outcomes: vec![OutcomeType::Real], p_x: 0, p_c: 0 };
        CompiledContrast::compile(
            ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::TieInclusiveWin],
                weights: vec![1.0],
            },
            &schema,
        )
        .unwrap()
    }

    fn heaviside_contrast() -> CompiledContrast {
        let schema = OutcomeSchema { outcomes: vec![OutcomeType::Real], p_x: 0, p_c: 0 };
        CompiledContrast::compile(
            ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::Heaviside],
                weights: vec![1.0],
            },
            &schema,
        )
        .unwrap()
    }

    fn random_units(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = StreamKey::root(seed).rng();
        (0..n)
            .map(|_| (0..d).map(|_| rng.uniform() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn constant_labels_give_a_constant_model() {
        let units = random_units(10, 2, 3);
        let rows = (0..30).map(|i| ((i % 10) as u32, ((i + 1) % 10) as u32, 0.7)).collect();
        let ts = synth_training(units, rows);
        let model = fit_boosted(&ts, &probability_contrast(), &BoostConfig::default()).unwrap();
        assert!(model.constant);
        assert!(model.stumps.is_empty());
        // f0 = logit(0.7); any prediction returns 0.7.
        let p = fast_sigmoid(model.f0);
        assert!((p - 0.7).abs() < 1e-9);
    }

    #[test]
    fn separable_labels_reach_low_training_misclassification() {
        // Label depends on one winner-side coordinate; 1000 rows.
        let units = random_units(200, 3, 17);
        let mut rng = StreamKey::root(99).rng();
        let mut rows = Vec::new();
        for _ in 0..1000 {
            let w = (rng.next_u64() % 200) as u32;
            let mut l = (rng.next_u64() % 200) as u32;
            if w == l {
                l = (l + 1) % 200;
            }
            let y = if units[w as usize][1] > 0.0 { 1.0 } else { 0.0 };
            rows.push((w, l, y));
        }
        let ts = synth_training(units.clone(), rows.clone());
        let model = fit_boosted(&ts, &probability_contrast(), &BoostConfig::default()).unwrap();
        let misclassified = rows
            .iter()
            .filter(|(w, l, y)| {
                let s = model.score_concat(&units[*w as usize], &units[*l as usize]);
                let p = fast_sigmoid(s);
                (p > 0.5) != (*y > 0.5)
            })
            .count();
        assert!(
            (misclassified as f64) < 0.05 * rows.len() as f64,
            "misclassified {misclassified} of {}",
            rows.len()
        );
    }

    #[test]
    fn identity_link_fits_signed_labels() {
        let units = random_units(100, 2, 5);
        let mut rng = StreamKey::root(7).rng();
        let mut rows = Vec::new();
        for _ in 0..600 {
            let w = (rng.next_u64() % 100) as u32;
            let mut l = (rng.next_u64() % 100) as u32;
            if w == l {
                l = (l + 1) % 100;
            }
            // Heaviside-style label in {−1, 1}, decided by the loser side.
            let y = if units[l as usize][0] > 0.0 { 1.0 } else { -1.0 };
            rows.push((w, l, y));
        }
        let ts = synth_training(units.clone(), rows.clone());
        let model = fit_boosted(&ts, &heaviside_contrast(), &BoostConfig::default()).unwrap();
        let wrong = rows
            .iter()
            .filter(|(w, l, y)| {
                let s = model.score_concat(&units[*w as usize], &units[*l as usize]);
                (s > 0.0) != (*y > 0.0)
            })
            .count();
        assert!((wrong as f64) < 0.05 * rows.len() as f64, "wrong sign on {wrong}");
        // Identity predictions are clamped into the declared [−1, 1] range.
        let z = predict_zeta(
            &NuisanceModel::Boosted(model),
            &sample_cluster(1, &units[0]),
            &sample_cluster(0, &units[1]),
            1,
        );
        assert!((-1.0..=1.0).contains(&z));
    }

    fn sample_cluster(a: u8, feats: &[f64]) -> crate::data::ClusterRecord {
        crate::data::ClusterRecord {
            id: format!("s{a}"),
            treatment: a,
            c_covariates: vec![],
            individuals: vec![crate::data::IndividualRecord {
                outcomes: vec![crate::data::OutcomeValue::Real(feats[0])],
                x_covariates: vec![],
            }],
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_ensemble() {
        let units = random_units(50, 3, 41);
        let mut rng = StreamKey::root(13).rng();
        let rows: Vec<(u32, u32, f64)> = (0..400)
            .map(|_| {
                let w = (rng.next_u64() % 50) as u32;
                let l = ((rng.next_u64() % 49 + w as u64 + 1) % 50) as u32;
                (w, l, if rng.uniform() < 0.4 { 1.0 } else { 0.0 })
            })
            .collect();
        let ts = synth_training(units, rows);
        let cfg = BoostConfig { trees: 30, seed: 123, ..Default::default() };
        let m1 = fit_boosted(&ts, &probability_contrast(), &cfg).unwrap();
        let m2 = fit_boosted(&ts, &probability_contrast(), &cfg).unwrap();
        assert_eq!(m1.stumps.len(), m2.stumps.len());
        for (a, b) in m1.stumps.iter().zip(&m2.stumps) {
            assert_eq!(a.feature, b.feature);
            assert_eq!(a.threshold, b.threshold);
            assert_eq!(a.left, b.left);
            assert_eq!(a.right, b.right);
        }
        let m3 = fit_boosted(
            &ts,
            &probability_contrast(),
            &BoostConfig { seed: 124, ..cfg },
        )
        .unwrap();
        let differs = m1
            .stumps
            .iter()
            .zip(&m3.stumps)
            .any(|(a, b)| a.feature != b.feature || a.threshold != b.threshold || a.left != b.left);
        assert!(differs, "different seeds should subsample differently");
    }

    #[test]
    fn small_training_sets_are_rejected() {
        let units = random_units(5, 2, 1);
        let ts = synth_training(units, (0..19).map(|i| ((i % 5) as u32, ((i + 1) % 5) as u32, 0.5)).collect());
        let err = fit_boosted(&ts, &probability_contrast(), &BoostConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn full_subsample_fraction_uses_every_row() {
        let units = random_units(30, 2, 8);
        let mut rng = StreamKey::root(2).rng();
        let rows: Vec<(u32, u32, f64)> = (0..200)
            .map(|_| {
                let w = (rng.next_u64() % 30) as u32;
                let l = ((w as u64 + 1 + rng.next_u64() % 29) % 30) as u32;
                (w, l, if rng.uniform() < 0.5 { 1.0 } else { 0.0 })
            })
            .collect();
        let ts = synth_training(units, rows);
        let cfg = BoostConfig { trees: 10, subsample: 1.0, seed: 77, ..Default::default() };
        let m1 = fit_boosted(&ts, &probability_contrast(), &cfg).unwrap();
        // With no subsampling the seed is irrelevant.
        let m2 = fit_boosted(
            &ts,
            &probability_contrast(),
            &BoostConfig { seed: 78, ..cfg },
        )
        .unwrap();
        for (a, b) in m1.stumps.iter().zip(&m2.stumps) {
            assert_eq!(a.threshold, b.threshold);
            assert_eq!(a.left, b.left);
        }
    }
}
