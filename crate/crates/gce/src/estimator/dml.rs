//! Cross-fitted estimator: clusters are dealt into folds, cluster pairs
//! into fold-pair cells, and each cell's predictions come from a learner
//! trained on clusters belonging to neither of the cell's folds.

use crate::contrast::CompiledContrast;
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::{GceEstimate, Target};
use crate::kernel::ZetaTable;
use crate::nuisance::{
    build_pair_training_set, fit_learner, CellNuisance, LearnerConfig, NuisanceModel,
    NuisanceSummary, ZetaPredictor,
};
use crate::pairs::PairCache;
use crate::rng::{tags, StreamKey};
use rand::RngCore;

use super::mr::eif_core;

/// One cell of a pair partition: the unordered cluster pairs whose folds
/// are exactly `folds` (diagonal cells pair a fold with itself, excluding
/// same-cluster "pairs").
#[derive(Debug, Clone)]
pub struct PartitionCell {
    /// Fold indices (s₁, s₂) with s₁ ≤ s₂.
    pub folds: (usize, usize),
    /// Unordered cluster pairs (i, k) with i < k owned by this cell.
    pub pairs: Vec<(usize, usize)>,
}

/// A deal of clusters into K folds together with the induced partition of
/// all C(m,2) unordered cluster pairs into K(K+1)/2 fold-pair cells. Every
/// pair lands in exactly one cell.
#[derive(Debug, Clone)]
pub struct PairPartition {
    /// Number of folds.
    pub k: usize,
    /// Seed the deal was drawn from.
    pub seed: u64,
    /// Fold index of each cluster.
    pub fold_of_cluster: Vec<usize>,
    /// Cells in (s₁, s₂) lexicographic order.
    pub cells: Vec<PartitionCell>,
}

impl PairPartition {
    pub fn m(&self) -> usize {
        self.fold_of_cluster.len()
    }

    /// Clusters eligible to train a cell's learner: those in neither of the
    /// cell's folds (for a diagonal cell, everything outside its fold).
    pub fn training_complement(&self, cell: &PartitionCell) -> Vec<usize> {
        let (s1, s2) = cell.folds;
        (0..self.m())
            .filter(|&c| {
                let f = self.fold_of_cluster[c];
                f != s1 && f != s2
            })
            .collect()
    }
}

fn validate_k(m: usize, k: usize) -> Result<()> {
    if k < 2 || 2 * k > m {
        return Err(Error::Config(format!(
            "fold count K={k} must satisfy 2 ≤ K ≤ m/2 (m={m})"
        )));
    }
    Ok(())
}

/// Assemble the cell structure from a completed fold assignment.
pub(crate) fn from_fold_assignment(
    fold_of_cluster: Vec<usize>,
    k: usize,
    seed: u64,
) -> PairPartition {
    let m = fold_of_cluster.len();
    let mut cells = Vec::with_capacity(k * (k + 1) / 2);
    let mut index = vec![vec![usize::MAX; k]; k];
    for s1 in 0..k {
        for s2 in s1..k {
            index[s1][s2] = cells.len();
            cells.push(PartitionCell { folds: (s1, s2), pairs: Vec::new() });
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let (a, b) = (fold_of_cluster[i], fold_of_cluster[j]);
            let (s1, s2) = (a.min(b), a.max(b));
            cells[index[s1][s2]].pairs.push((i, j));
        }
    }
    PairPartition { k, seed, fold_of_cluster, cells }
}

/// Deal m clusters into K folds by a seeded shuffle followed by contiguous
/// blocks, with the remainder spread over the earliest folds, so fold sizes
/// differ by at most one.
pub fn build_pair_partition(m: usize, k: usize, seed: u64) -> Result<PairPartition> {
    validate_k(m, k)?;
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = StreamKey::root(seed).child(tags::FOLDS).rng();
    for i in (1..m).rev() {
        let j = rng.below((i + 1) as u64) as usize;
        order.swap(i, j);
    }
    let (base, extra) = (m / k, m % k);
    let mut fold_of = vec![0usize; m];
    let mut pos = 0;
    for (f, fold_of_f) in (0..k).map(|f| (f, base + usize::from(f < extra))) {
        for _ in 0..fold_of_f {
            fold_of[order[pos]] = f;
            pos += 1;
        }
    }
    Ok(from_fold_assignment(fold_of, k, seed))
}

/// Arm-stratified deal: treated and control clusters are shuffled
/// separately and dealt round-robin, so each fold's arm counts differ by at
/// most one within each arm as well as overall.
pub fn build_stratified_pair_partition(
    treatment: &[u8],
    k: usize,
    seed: u64,
) -> Result<PairPartition> {
    let m = treatment.len();
    validate_k(m, k)?;
    let key = StreamKey::root(seed).child(tags::FOLDS);
    let mut arms: [Vec<usize>; 2] = [
        (0..m).filter(|&c| treatment[c] == 1).collect(),
        (0..m).filter(|&c| treatment[c] == 0).collect(),
    ];
    for (tag, arm) in arms.iter_mut().enumerate() {
        let mut rng = key.child(tag as u64 + 1).rng();
        for i in (1..arm.len()).rev() {
            let j = rng.below((i + 1) as u64) as usize;
            arm.swap(i, j);
        }
    }
    let mut fold_of = vec![0usize; m];
    for (pos, &c) in arms[0].iter().chain(arms[1].iter()).enumerate() {
        fold_of[c] = pos % k;
    }
    Ok(from_fold_assignment(fold_of, k, seed))
}

/// Cross-fitted estimate with the default unstratified deal.
///
/// Builds a K-fold pair partition from the seed, fits the learner once per
/// cell on that cell's training complement, tabulates predictions for the
/// cell's pairs, and solves the pooled augmented estimating equation. Every
/// pair's predictions come from a model that never saw either of its
/// clusters. A cell whose complement has fewer than two clusters in either
/// arm fails with an error naming the cell; K = 2 always fails this way,
/// because off-diagonal cells then have empty complements.
pub fn estimate_dml(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    learner: &LearnerConfig,
    k: usize,
    seed: u64,
) -> Result<GceEstimate> {
    let partition = build_pair_partition(data.m(), k, seed)?;
    estimate_dml_with_partition(data, contrast, target, learner, &partition)
}

/// Cross-fitted estimate over a caller-supplied partition (e.g. an
/// arm-stratified one).
pub fn estimate_dml_with_partition(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    learner: &LearnerConfig,
    partition: &PairPartition,
) -> Result<GceEstimate> {
    if partition.m() != data.m() {
        return Err(Error::Config(format!(
            "partition is over {} clusters but the dataset has {}",
            partition.m(),
            data.m()
        )));
    }
    let cache = PairCache::new(data, contrast)?;
    let (zeta, cells, warnings) = fit_cell_models(data, contrast, learner, partition)?;
    eif_core(
        &cache,
        target,
        &zeta,
        contrast.range,
        Some(NuisanceSummary::PerCell { cells }),
        warnings,
    )
}

/// Both targets from one round of per-cell fits. The fitted prediction
/// table and the pair cache are target-independent, so sharing them halves
/// the cost of reporting cluster-pair and individual-pair estimates
/// together.
pub(super) fn estimate_dml_both(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    learner: &LearnerConfig,
    partition: &PairPartition,
) -> Result<(GceEstimate, GceEstimate)> {
    if partition.m() != data.m() {
        return Err(Error::Config(format!(
            "partition is over {} clusters but the dataset has {}",
            partition.m(),
            data.m()
        )));
    }
    let cache = PairCache::new(data, contrast)?;
    let (zeta, cells, warnings) = fit_cell_models(data, contrast, learner, partition)?;
    let c = eif_core(
        &cache,
        Target::ClusterPair,
        &zeta,
        contrast.range,
        Some(NuisanceSummary::PerCell { cells: cells.clone() }),
        warnings.clone(),
    )?;
    let i = eif_core(
        &cache,
        Target::IndividualPair,
        &zeta,
        contrast.range,
        Some(NuisanceSummary::PerCell { cells }),
        warnings,
    )?;
    Ok((c, i))
}

/// Cross-fitted estimate with externally supplied predictions: the pooled
/// solve over the partition's cells with a pre-filled table. Used when the
/// per-cell fits were produced elsewhere (or cannot be produced, as with
/// very small trials) and for reproducing an estimate from recorded
/// predictions.
pub fn estimate_dml_with_zeta(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    target: Target,
    partition: &PairPartition,
    zeta: &ZetaTable,
) -> Result<GceEstimate> {
    if partition.m() != data.m() {
        return Err(Error::Config(format!(
            "partition is over {} clusters but the dataset has {}",
            partition.m(),
            data.m()
        )));
    }
    if zeta.m != data.m() {
        return Err(Error::Config(format!(
            "prediction table is sized for {} clusters but the dataset has {}",
            zeta.m,
            data.m()
        )));
    }
    if !zeta.is_complete() {
        return Err(Error::Config(
            "prediction table has unset entries; every ordered cluster pair needs all four \
             counterfactual predictions"
                .into(),
        ));
    }
    let cache = PairCache::new(data, contrast)?;
    eif_core(
        &cache,
        target,
        zeta,
        contrast.range,
        Some(NuisanceSummary::Injected),
        Vec::new(),
    )
}

/// Fit one learner per cell and tabulate its predictions for the cell's
/// pairs. Boosted cell fits draw their seeds from the partition seed and
/// the cell index, so a cross-fitted run is reproducible from (data, K,
/// seed) alone.
pub(crate) fn fit_cell_models(
    data: &TrialDataset,
    contrast: &CompiledContrast,
    learner: &LearnerConfig,
    partition: &PairPartition,
) -> Result<(ZetaTable, Vec<CellNuisance>, Vec<String>)> {
    let m = data.m();
    let mut zeta = ZetaTable::new(m);
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    let seed_key = StreamKey::root(partition.seed).child(tags::FOLDS);
    let mut boosted = false;
    for (ci, cell) in partition.cells.iter().enumerate() {
        if cell.pairs.is_empty() {
            continue;
        }
        let complement = partition.training_complement(cell);
        let n1 = complement.iter().filter(|&&c| data.clusters[c].treatment == 1).count();
        let n0 = complement.len() - n1;
        if n1 < 2 || n0 < 2 {
            return Err(Error::FoldInfeasible {
                cell: cell.folds,
                detail: format!(
                    "training complement has {n1} treated and {n0} control clusters; \
                     at least 2 of each are required"
                ),
            });
        }
        let mut train_pairs = Vec::with_capacity(complement.len() * (complement.len() - 1));
        for &i in &complement {
            for &j in &complement {
                if i != j {
                    train_pairs.push((i, j));
                }
            }
        }
        let training = build_pair_training_set(data, contrast, &train_pairs)?;
        let cfg = match learner {
            LearnerConfig::Pim(c) => LearnerConfig::Pim(c.clone()),
            LearnerConfig::Boosted(c) => {
                boosted = true;
                let mut c = c.clone();
                c.seed = seed_key.child(1 + ci as u64).rng().next_u64();
                LearnerConfig::Boosted(c)
            }
        };
        let model = fit_learner(&training, contrast, &cfg)?;
        cell_warnings(&model, cell.folds, &mut warnings);
        let predictor = ZetaPredictor::new(&model, data);
        for &(i, j) in &cell.pairs {
            predictor.fill_pair(&mut zeta, i, j);
        }
        cells.push(CellNuisance {
            cell: [cell.folds.0, cell.folds.1],
            summary: model.summary(),
        });
    }
    // Boosted scores carry no structural antisymmetry, so their predictions
    // are re-centered to respect a contrast whose two orientations sum to a
    // constant; index-model predictions satisfy it by construction.
    if boosted {
        if let Some(s) = contrast.pair_sum {
            zeta.symmetrize(s);
        }
    }
    Ok((zeta, cells, warnings))
}

fn cell_warnings(model: &NuisanceModel, folds: (usize, usize), warnings: &mut Vec<String>) {
    let (s1, s2) = folds;
    match model {
        NuisanceModel::Pim(pm) => {
            if pm.separation {
                warnings.push(format!(
                    "cell ({s1},{s2}): index model shows signs of separation; predictions \
                     are clamped"
                ));
            } else if !pm.converged {
                warnings.push(format!(
                    "cell ({s1},{s2}): index model did not converge within {} iterations",
                    pm.iterations
                ));
            }
            if pm.ridged {
                warnings.push(format!(
                    "cell ({s1},{s2}): index model solve required ridge regularization"
                ));
            }
        }
        NuisanceModel::Boosted(bm) => {
            if bm.constant {
                warnings.push(format!(
                    "cell ({s1},{s2}): boosted model is constant (degenerate training labels)"
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::{ContrastSpec, OutcomeRule};
    use crate::data::{
        ClusterRecord, IndividualRecord, OutcomeSchema, OutcomeType, OutcomeValue,
    };
    use crate::estimator::estimate_np;
    use crate::nuisance::PimConfig;
    use crate::testkit;
    use approx::assert_relative_eq;

    #[test]
    fn block_deal_reproduces_worked_example() {
        // Four clusters, two folds, identity assignment: cells must be
        // {(0,1)}, {(0,2),(0,3),(1,2),(1,3)}, {(2,3)}.
        let p = from_fold_assignment(vec![0, 0, 1, 1], 2, 0);
        assert_eq!(p.cells.len(), 3);
        assert_eq!(p.cells[0].folds, (0, 0));
        assert_eq!(p.cells[0].pairs, vec![(0, 1)]);
        assert_eq!(p.cells[1].folds, (0, 1));
        assert_eq!(p.cells[1].pairs, vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
        assert_eq!(p.cells[2].folds, (1, 1));
        assert_eq!(p.cells[2].pairs, vec![(2, 3)]);
    }

    #[test]
    fn cells_partition_all_pairs_exactly_once() {
        for (m, k, seed) in [(10usize, 3usize, 5u64), (13, 4, 7), (9, 3, 1), (60, 5, 2)] {
            let p = build_pair_partition(m, k, seed).unwrap();
            assert_eq!(p.cells.len(), k * (k + 1) / 2);
            let mut seen = std::collections::HashSet::new();
            for cell in &p.cells {
                for &(i, j) in &cell.pairs {
                    assert!(i < j && j < m);
                    assert_eq!(p.fold_of_cluster[i].min(p.fold_of_cluster[j]), cell.folds.0);
                    assert_eq!(p.fold_of_cluster[i].max(p.fold_of_cluster[j]), cell.folds.1);
                    assert!(seen.insert((i, j)), "pair ({i},{j}) appears twice");
                }
            }
            assert_eq!(seen.len(), m * (m - 1) / 2);
            // Fold sizes differ by at most one.
            let mut sizes = vec![0usize; k];
            for &f in &p.fold_of_cluster {
                sizes[f] += 1;
            }
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn ten_clusters_three_folds_gives_six_cells_and_45_pairs() {
        let p = build_pair_partition(10, 3, 42).unwrap();
        assert_eq!(p.cells.len(), 6);
        let total: usize = p.cells.iter().map(|c| c.pairs.len()).sum();
        assert_eq!(total, 45);
    }

    #[test]
    fn fold_count_bounds_are_enforced() {
        assert!(matches!(build_pair_partition(10, 1, 0), Err(Error::Config(_))));
        assert!(matches!(build_pair_partition(5, 3, 0), Err(Error::Config(_))));
        assert!(build_pair_partition(4, 2, 0).is_ok());
        assert!(build_pair_partition(10, 5, 0).is_ok());
    }

    #[test]
    fn same_seed_same_partition_different_seed_usually_differs() {
        let a = build_pair_partition(12, 3, 9).unwrap();
        let b = build_pair_partition(12, 3, 9).unwrap();
        assert_eq!(a.fold_of_cluster, b.fold_of_cluster);
        let differs = (0..20)
            .any(|s| build_pair_partition(12, 3, s).unwrap().fold_of_cluster != a.fold_of_cluster);
        assert!(differs);
    }

    #[test]
    fn stratified_deal_balances_arms_within_one() {
        let treatment: Vec<u8> =
            (0..17).map(|i| u8::from(i < 7)).collect();
        let p = build_stratified_pair_partition(&treatment, 3, 77).unwrap();
        let mut per_fold = vec![[0usize; 2]; 3];
        for (c, &f) in p.fold_of_cluster.iter().enumerate() {
            per_fold[f][treatment[c] as usize] += 1;
        }
        for arm in 0..2 {
            let counts: Vec<usize> = per_fold.iter().map(|pf| pf[arm]).collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    pub(super) fn trial(m: usize, seed: u64) -> (TrialDataset, CompiledContrast) {
        use crate::rng::{tags, StreamKey};
        use rand::RngCore;
        let schema = OutcomeSchema { outcomes: vec![OutcomeType::Real], p_x: 1, p_c: 1 };
        let key = StreamKey::root(seed).child(tags::DATASET);
        let clusters = (0..m)
            .map(|i| {
                let mut rng = key.child(i as u64).rng();
                let n = 2 + (rng.next_u64() % 3) as usize;
                ClusterRecord {
                    id: format!("cl{i}"),
                    treatment: (i % 2) as u8,
                    c_covariates: vec![rng.uniform()],
                    individuals: (0..n)
                        .map(|_| IndividualRecord {
                            outcomes: vec![OutcomeValue::Real(rng.uniform() * 3.0)],
                            x_covariates: vec![rng.uniform()],
                        })
                        .collect(),
                }
            })
            .collect();
        let data = TrialDataset::new(clusters, schema.clone(), None).unwrap();
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
    fn two_folds_fail_naming_the_cross_cell() {
        let (data, contrast) = trial(8, 3);
        let err = estimate_dml(
            &data,
            &contrast,
            Target::ClusterPair,
            &LearnerConfig::Pim(PimConfig::default()),
            2,
            1,
        )
        .unwrap_err();
        match err {
            Error::FoldInfeasible { cell, .. } => assert_eq!(cell, (0, 1)),
            other => panic!("expected FoldInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn one_armed_complement_fails_naming_the_cell() {
        // Six clusters in three explicit folds. Cell (0,0) trains on folds
        // 1∪2 = {2,3,4,5} (two per arm, feasible); cell (0,1) trains on
        // fold 2 = clusters {4,5} alone, both treated, so it must fail and
        // name itself.
        let treatments = [1u8, 0, 0, 0, 1, 1];
        let (data, contrast) = {
            let (mut data, contrast) = trial(6, 5);
            for (c, &a) in treatments.iter().enumerate() {
                data.clusters[c].treatment = a;
            }
            (data, contrast)
        };
        let p = from_fold_assignment(vec![0, 0, 1, 1, 2, 2], 3, 0);
        let err = estimate_dml_with_partition(
            &data,
            &contrast,
            Target::ClusterPair,
            &LearnerConfig::Pim(PimConfig::default()),
            &p,
        )
        .unwrap_err();
        match err {
            Error::FoldInfeasible { cell, .. } => assert_eq!(cell, (0, 1)),
            other => panic!("expected FoldInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn fitted_cells_match_reference_solver_end_to_end() {
        let (data, contrast) = trial(12, 13);
        let treatment: Vec<u8> = data.clusters.iter().map(|c| c.treatment).collect();
        let partition = build_stratified_pair_partition(&treatment, 3, 17).unwrap();
        let learner = LearnerConfig::Pim(PimConfig::default());
        let (zeta, _, _) = fit_cell_models(&data, &contrast, &learner, &partition).unwrap();
        for target in [Target::ClusterPair, Target::IndividualPair] {
            let est = estimate_dml_with_partition(&data, &contrast, target, &learner, &partition)
                .unwrap();
            let oracle = testkit::reference_dml(&data, &contrast, target, &partition, &zeta);
            for a in 0..2 {
                assert_relative_eq!(est.lambda[a], oracle.lambda[a], epsilon = 1e-12);
                for b in 0..2 {
                    assert_relative_eq!(
                        est.diagnostics.sigma_hat[a][b],
                        oracle.sigma_hat[a][b],
                        epsilon = 1e-11,
                        max_relative = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn cell_models_train_only_on_their_complement() {
        // Refit cell 0's learner by hand on its complement and check the
        // production table reproduces its predictions for that cell's pairs.
        let (data, contrast) = trial(12, 23);
        let treatment: Vec<u8> = data.clusters.iter().map(|c| c.treatment).collect();
        let partition = build_stratified_pair_partition(&treatment, 3, 29).unwrap();
        let learner = LearnerConfig::Pim(PimConfig::default());
        let (zeta, _, _) = fit_cell_models(&data, &contrast, &learner, &partition).unwrap();

        let cell = &partition.cells[0];
        let complement = partition.training_complement(cell);
        for &c in &complement {
            assert!(partition.fold_of_cluster[c] != cell.folds.0);
            assert!(partition.fold_of_cluster[c] != cell.folds.1);
        }
        let mut train_pairs = Vec::new();
        for &i in &complement {
            for &j in &complement {
                if i != j {
                    train_pairs.push((i, j));
                }
            }
        }
        let training = build_pair_training_set(&data, &contrast, &train_pairs).unwrap();
        let model = fit_learner(&training, &contrast, &learner).unwrap();
        let predictor = ZetaPredictor::new(&model, &data);
        for &(i, j) in &cell.pairs {
            for a in 0..2u8 {
                assert_relative_eq!(zeta.get(a, i, j), predictor.zeta(i, j, a), epsilon = 1e-14);
                assert_relative_eq!(zeta.get(a, j, i), predictor.zeta(j, i, a), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn constant_table_reduces_to_np() {
        let (data, contrast) = trial(10, 33);
        let partition = build_pair_partition(10, 3, 37).unwrap();
        let mut zeta = ZetaTable::new(10);
        zeta.fill_constant(0.5);
        for target in [Target::ClusterPair, Target::IndividualPair] {
            let dml =
                estimate_dml_with_zeta(&data, &contrast, target, &partition, &zeta).unwrap();
            let np = estimate_np(&data, &contrast, target).unwrap();
            for a in 0..2 {
                assert_relative_eq!(dml.lambda[a], np.lambda[a], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cross_fitted_run_is_seed_deterministic() {
        let (data, contrast) = trial(12, 43);
        let learner = LearnerConfig::Pim(PimConfig::default());
        let a = estimate_dml(&data, &contrast, Target::ClusterPair, &learner, 3, 5).unwrap();
        let b = estimate_dml(&data, &contrast, Target::ClusterPair, &learner, 3, 5).unwrap();
        assert_eq!(a.lambda[0].to_bits(), b.lambda[0].to_bits());
        assert_eq!(a.lambda[1].to_bits(), b.lambda[1].to_bits());
        assert_eq!(a.cov[0][0].to_bits(), b.cov[0][0].to_bits());
    }
}

