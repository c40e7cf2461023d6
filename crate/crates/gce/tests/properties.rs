//! Randomized invariant checks over the public surface: contrast algebra,
//! CSV round-trips, estimating-equation structure, partition accounting,
//! and seeded reproducibility. Each property draws its instances from a
//! counter-based stream keyed by a proptest-supplied seed, so failures
//! shrink to a single reproducible seed.

use proptest::prelude::*;
use rand::RngCore as _;

use gce::contrast::{CompiledContrast, ContrastSpec, OutcomeRule};
use gce::data::{
    load_dataset_from_reader, ClusterRecord, IndividualRecord, OutcomeSchema, OutcomeType,
    OutcomeValue, TrialDataset,
};
use gce::estimate::Target;
use gce::estimator::{build_pair_partition, build_stratified_pair_partition, estimate_np};
use gce::nuisance::{
    build_pair_training_set, fit_pim, predict_zeta, NuisanceModel, PimConfig, ZetaPredictor,
};
use gce::rng::StreamKey;
use gce::sim::{generate_trial, Scenario};
use gce::subsample::estimate_subsampled;
use gce::testkit::reference_np_residual;

// ---------------------------------------------------------------------------
// Seeded generators
// ---------------------------------------------------------------------------

fn unif(rng: &mut gce::rng::CounterRng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Random trial over an (ordinal, real) schema with guaranteed two clusters
/// per arm and cluster sizes 1–4.
fn random_trial(seed: u64, m: usize) -> TrialDataset {
    let mut rng = StreamKey::root(0x9E0).child(seed).rng();
    let mut treatment: Vec<u8> = vec![1, 1, 0, 0];
    for _ in 4..m {
        treatment.push(rng.below(2) as u8);
    }
    treatment.rotate_left(rng.below(m as u64) as usize);
    let schema = OutcomeSchema {
        outcomes: vec![OutcomeType::Ordinal { levels: vec![1, 2, 3] }, OutcomeType::Real],
        p_x: 1,
        p_c: 1,
    };
    let clusters = (0..m)
        .map(|i| {
            let n = 1 + rng.below(4) as usize;
            let individuals = (0..n)
                .map(|_| IndividualRecord {
                    outcomes: vec![
                        OutcomeValue::Ordinal(1 + rng.below(3) as i64),
                        OutcomeValue::Real(4.0 * unif(&mut rng) - 2.0),
                    ],
                    x_covariates: vec![2.0 * unif(&mut rng) - 1.0],
                })
                .collect();
            ClusterRecord {
                id: format!("c{i}"),
                treatment: treatment[i],
                c_covariates: vec![2.0 * unif(&mut rng) - 1.0],
                individuals,
            }
        })
        .collect();
    TrialDataset::new(clusters, schema, Some(0.5)).expect("valid dataset")
}

fn tie_inclusive_contrast() -> CompiledContrast {
    let schema = OutcomeSchema {
        outcomes: vec![OutcomeType::Ordinal { levels: vec![1, 2, 3] }, OutcomeType::Real],
        p_x: 1,
        p_c: 1,
    };
    CompiledContrast::compile(
        ContrastSpec::DimensionWise {
            rules: vec![OutcomeRule::TieInclusiveWin, OutcomeRule::TieInclusiveWin],
            weights: vec![0.5, 0.5],
        },
        &schema,
    )
    .expect("spec compiles")
}

// ---------------------------------------------------------------------------
// Contrast algebra
// ---------------------------------------------------------------------------

proptest! {
    /// Heaviside scores negate exactly when the pair swaps, whenever no
    /// coordinate ties.
    #[test]
    fn heaviside_negates_under_swap(
        u0 in 1i64..=5, v0 in 1i64..=5,
        u1 in -100.0f64..100.0, v1 in -100.0f64..100.0,
        w in 0.05f64..0.95,
    ) {
        prop_assume!(u0 != v0 && u1 != v1);
        let schema = OutcomeSchema {
            outcomes: vec![
                OutcomeType::Ordinal { levels: vec![1, 2, 3, 4, 5] },
                OutcomeType::Real,
            ],
            p_x: 0,
            p_c: 0,
        };
        let contrast = CompiledContrast::compile(
            ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::Heaviside, OutcomeRule::Heaviside],
                weights: vec![w, 1.0 - w],
            },
            &schema,
        ).unwrap();
        let a = [OutcomeValue::Ordinal(u0), OutcomeValue::Real(u1)];
        let b = [OutcomeValue::Ordinal(v0), OutcomeValue::Real(v1)];
        let (fa, fb) = (contrast.numeric_view(&a), contrast.numeric_view(&b));
        prop_assert_eq!(
            contrast.eval_numeric(&fa, &fb),
            -contrast.eval_numeric(&fb, &fa)
        );
    }

    /// Putting all weight on one outcome reproduces that outcome's rule
    /// alone, exactly.
    #[test]
    fn unit_weight_matches_single_rule(
        u0 in 1i64..=3, v0 in 1i64..=3,
        u1 in -10.0f64..10.0, v1 in -10.0f64..10.0,
    ) {
        let two = OutcomeSchema {
            outcomes: vec![OutcomeType::Ordinal { levels: vec![1, 2, 3] }, OutcomeType::Real],
            p_x: 0,
            p_c: 0,
        };
        let one = OutcomeSchema {
            outcomes: vec![OutcomeType::Ordinal { levels: vec![1, 2, 3] }],
            p_x: 0,
            p_c: 0,
        };
        let weighted = CompiledContrast::compile(
            ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::TieInclusiveWin, OutcomeRule::StrictGreater],
                weights: vec![1.0, 0.0],
            },
            &two,
        ).unwrap();
        let single = CompiledContrast::compile(
            ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::TieInclusiveWin],
                weights: vec![1.0],
            },
            &one,
        ).unwrap();
        let a = [OutcomeValue::Ordinal(u0), OutcomeValue::Real(u1)];
        let b = [OutcomeValue::Ordinal(v0), OutcomeValue::Real(v1)];
        let (fa, fb) = (weighted.numeric_view(&a), weighted.numeric_view(&b));
        let (ga, gb) = (
            single.numeric_view(&a[..1]),
            single.numeric_view(&b[..1]),
        );
        prop_assert_eq!(
            weighted.eval_numeric(&fa, &fb),
            single.eval_numeric(&ga, &gb)
        );
    }
}

// ---------------------------------------------------------------------------
// Data round-trips and ingestion totality
// ---------------------------------------------------------------------------

proptest! {
    /// Serializing a valid dataset to CSV and loading it back reproduces it
    /// exactly, and the row count matches the summed cluster sizes.
    #[test]
    fn csv_round_trip_is_lossless(seed in 0u64..1000, m in 4usize..10) {
        let data = random_trial(seed, m);
        let csv = data.to_csv_string();
        let rows = csv.lines().count() - 1;
        prop_assert_eq!(rows, data.total_individuals());
        let reloaded =
            load_dataset_from_reader(csv.as_bytes(), &data.schema, Some(data.pi)).unwrap();
        prop_assert_eq!(reloaded, data);
    }

    /// Arbitrary input text never panics the loader: every malformed input
    /// comes back as a typed error.
    #[test]
    fn loader_is_total_on_junk(text in ".{0,400}") {
        let schema = OutcomeSchema {
            outcomes: vec![OutcomeType::Real],
            p_x: 1,
            p_c: 0,
        };
        let _ = load_dataset_from_reader(text.as_bytes(), &schema, Some(0.5));
    }
}

// ---------------------------------------------------------------------------
// Estimator structure
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Tie-inclusive contrasts make the two orientation estimates
    /// complementary for both targets.
    #[test]
    fn tie_inclusive_estimates_sum_to_one(seed in 0u64..10_000, m in 5usize..12) {
        let data = random_trial(seed, m);
        let contrast = tie_inclusive_contrast();
        for target in [Target::ClusterPair, Target::IndividualPair] {
            let est = estimate_np(&data, &contrast, target).unwrap();
            prop_assert!((est.lambda[0] + est.lambda[1] - 1.0).abs() <= 1e-12);
        }
    }

    /// With the raw-difference rule, the cluster-pair estimate collapses to
    /// the difference of arm-wise means of cluster averages — once in each
    /// orientation, so the spread λ̂₁ − λ̂₀ is twice that difference.
    #[test]
    fn difference_rule_doubles_the_mean_difference(seed in 0u64..10_000, m in 5usize..12) {
        let data = random_trial(seed, m);
        let schema = data.schema.clone();
        let contrast = CompiledContrast::compile(
            ContrastSpec::DimensionWise {
                rules: vec![OutcomeRule::TieInclusiveWin, OutcomeRule::Difference],
                weights: vec![0.0, 1.0],
            },
            &schema,
        ).unwrap();
        let est = estimate_np(&data, &contrast, Target::ClusterPair).unwrap();
        let mean_of = |arm: u8| {
            let means: Vec<f64> = data
                .clusters
                .iter()
                .filter(|c| c.treatment == arm)
                .map(|c| {
                    c.individuals
                        .iter()
                        .map(|ind| match ind.outcomes[1] {
                            OutcomeValue::Real(y) => y,
                            _ => unreachable!("schema fixes outcome 2 as real"),
                        })
                        .sum::<f64>()
                        / c.size() as f64
                })
                .collect();
            means.iter().sum::<f64>() / means.len() as f64
        };
        let ate = mean_of(1) - mean_of(0);
        prop_assert!((est.lambda[0] - est.lambda[1] - 2.0 * ate).abs() <= 1e-10);
    }

    /// Plugging the produced estimate back into the pooled moment equations
    /// leaves a residual at solver precision.
    #[test]
    fn moment_equations_vanish_at_the_estimate(seed in 0u64..10_000, m in 5usize..12) {
        let data = random_trial(seed, m);
        let contrast = tie_inclusive_contrast();
        for target in [Target::ClusterPair, Target::IndividualPair] {
            let est = estimate_np(&data, &contrast, target).unwrap();
            let resid = reference_np_residual(&data, &contrast, target, est.lambda);
            // The equation pools C(m,2) kernel terms; normalize before
            // comparing against the tolerance.
            let scale = (m * (m - 1) / 2) as f64;
            prop_assert!(resid[0].abs() / scale <= 1e-10);
            prop_assert!(resid[1].abs() / scale <= 1e-10);
        }
    }

    /// Estimates do not depend on the order clusters appear in.
    #[test]
    fn estimates_ignore_cluster_order(seed in 0u64..10_000, m in 5usize..12, rot in 1usize..11) {
        let data = random_trial(seed, m);
        let mut clusters = data.clusters.clone();
        clusters.rotate_left(rot % m);
        clusters.reverse();
        let permuted =
            TrialDataset::new(clusters, data.schema.clone(), Some(data.pi)).unwrap();
        let contrast = tie_inclusive_contrast();
        for target in [Target::ClusterPair, Target::IndividualPair] {
            let a = estimate_np(&data, &contrast, target).unwrap();
            let b = estimate_np(&permuted, &contrast, target).unwrap();
            for arm in 0..2 {
                prop_assert!((a.lambda[arm] - b.lambda[arm]).abs() <= 1e-10);
                prop_assert!((a.cov[arm][arm] - b.cov[arm][arm]).abs()
                    <= 1e-10 * a.cov[arm][arm].abs().max(1.0));
            }
        }
    }

    /// The subsampled point estimate is exactly the average of its
    /// per-subsample parts.
    #[test]
    fn subsample_average_is_mean_of_parts(seed in 0u64..10_000, m in 10usize..20, r in 2usize..4) {
        let data = random_trial(seed, m);
        let contrast = tie_inclusive_contrast();
        let est = match estimate_subsampled(
            &data,
            &contrast,
            Target::ClusterPair,
            &gce::estimator::EstimatorKind::Np,
            r,
            seed,
            true,
            None,
        ) {
            Ok(est) => est,
            // A drawn subsample can end up with fewer than two clusters in
            // an arm; that is a legitimate typed error, not a property
            // failure.
            Err(gce::error::Error::SubsampleInfeasible { .. }) => return Ok(()),
            Err(other) => return Err(TestCaseError::fail(other.to_string())),
        };
        let parts = est.diagnostics.subsamples.as_ref().expect("parts recorded");
        prop_assert_eq!(parts.len(), r);
        for a in 0..2 {
            let mean = parts.iter().map(|p| p.lambda[a]).sum::<f64>() / r as f64;
            prop_assert!((est.lambda[a] - mean).abs() <= 1e-14);
        }
    }
}

// ---------------------------------------------------------------------------
// Partition accounting
// ---------------------------------------------------------------------------

fn tiles_exactly(p: &gce::estimator::PairPartition, m: usize) -> bool {
    let mut seen = vec![false; m * m];
    let mut count = 0usize;
    for cell in &p.cells {
        let (s1, s2) = cell.folds;
        for &(i, k) in &cell.pairs {
            let (lo, hi) = (i.min(k), i.max(k));
            if lo == hi || seen[lo * m + hi] {
                return false;
            }
            seen[lo * m + hi] = true;
            count += 1;
            let (fi, fk) = (p.fold_of_cluster[lo], p.fold_of_cluster[hi]);
            if (fi.min(fk), fi.max(fk)) != (s1.min(s2), s1.max(s2)) {
                return false;
            }
        }
    }
    count == m * (m - 1) / 2
}

proptest! {
    /// Fold deals tile all C(m,2) pairs into K(K+1)/2 cells with balanced
    /// fold sizes, plain and arm-stratified alike.
    #[test]
    fn pair_partitions_tile_all_pairs(m in 6usize..40, k in 2usize..6, seed in 0u64..1000) {
        prop_assume!(2 * k <= m);
        let p = build_pair_partition(m, k, seed).unwrap();
        prop_assert_eq!(p.cells.len(), k * (k + 1) / 2);
        prop_assert!(tiles_exactly(&p, m));
        let mut sizes = vec![0usize; k];
        for &f in &p.fold_of_cluster {
            sizes[f] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        let treatment: Vec<u8> = (0..m).map(|i| (i % 2) as u8).collect();
        let sp = build_stratified_pair_partition(&treatment, k, seed).unwrap();
        prop_assert!(tiles_exactly(&sp, m));
    }
}

// ---------------------------------------------------------------------------
// Prediction-model invariants
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Index-model predictions are counterfactual: they depend on the
    /// requested orientation, never on the observed assignments. And on the
    /// log-odds scale the two orientations of a pair are complementary.
    #[test]
    fn predictions_are_counterfactual_and_complementary(seed in 0u64..1000) {
        let data = random_trial(seed, 8);
        let contrast = tie_inclusive_contrast();
        let pairs: Vec<(usize, usize)> = (0..8)
            .flat_map(|i| (0..8).filter(move |&k| k != i).map(move |k| (i, k)))
            .collect();
        let training = build_pair_training_set(&data, &contrast, &pairs).unwrap();
        let model = NuisanceModel::Pim(
            fit_pim(&training, &contrast, &PimConfig::default()).unwrap(),
        );

        // Flipping the recorded arm of a cluster must not move predictions:
        // the predictor substitutes the requested orientation's arms.
        let mut flipped = data.clusters[0].clone();
        flipped.treatment = 1 - flipped.treatment;
        for a in 0..2u8 {
            let before = predict_zeta(&model, &data.clusters[0], &data.clusters[1], a);
            let after = predict_zeta(&model, &flipped, &data.clusters[1], a);
            prop_assert_eq!(before.to_bits(), after.to_bits());
        }

        let predictor = ZetaPredictor::new(&model, &data);
        for i in 0..8 {
            for k in 0..8 {
                if i != k {
                    for a in 0..2u8 {
                        let fwd = predictor.zeta(i, k, a);
                        let rev = predictor.zeta(k, i, 1 - a);
                        prop_assert!((fwd + rev - 1.0).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Seeded reproducibility
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// One (scenario, replicate) key yields one dataset, and the replicate
    /// counter actually moves the draw.
    #[test]
    fn generated_trials_are_seed_deterministic(seed in 0u64..10_000, rep in 0u64..50) {
        let sc = Scenario::study1(10, seed);
        let a = generate_trial(&sc, rep).unwrap();
        let b = generate_trial(&sc, rep).unwrap();
        prop_assert_eq!(&a.data, &b.data);
        let c = generate_trial(&sc, rep + 1).unwrap();
        prop_assert_ne!(&a.data, &c.data);
    }
}
