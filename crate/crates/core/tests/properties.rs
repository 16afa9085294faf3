mod common;

use common::{exhaustive_match, permutations};
use nalgebra::DMatrix;
use proptest::prelude::*;

use spectral_panel::estimators::{CovarianceScale, UncertaintyEstimate};
use spectral_panel::metrics::{average_match, max_weight_assignment};
use spectral_panel::simulation::batch::{run_batch, SimulationConfig};
use spectral_panel::simulation::dgp::ModelKind;
use spectral_panel::spectral::{
    adjacency, build_dissimilarity, kmeans, matrix_inverse_sqrt, normalized_laplacian,
    sorted_eigen, spectral_cluster, DissimilarityMatrix, KMeansOptions, PeriodWeights,
};

fn dissimilarity_strategy(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.0..20.0f64, n * n).prop_map(move |raw| {
            DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Equal => 0.0,
                std::cmp::Ordering::Less => raw[i * n + j],
                std::cmp::Ordering::Greater => raw[j * n + i],
            })
        })
    })
}

/// `G` well-separated clusters of 1-D points with random sizes.
fn clustered_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2..=4usize, prop::collection::vec(2..=6usize, 4)).prop_flat_map(|(g, sizes)| {
        let total: usize = sizes[..g].iter().sum();
        prop::collection::vec(-0.3..0.3f64, total).prop_map(move |noise| {
            let mut betas = Vec::new();
            let mut truth = Vec::new();
            let mut k = 0;
            for (c, &size) in sizes[..g].iter().enumerate() {
                for _ in 0..size {
                    betas.push(vec![10.0 * c as f64 + noise[k]]);
                    truth.push(c + 1);
                    k += 1;
                }
            }
            (betas, truth)
        })
    })
}

fn unit_scalar(n: usize) -> Vec<UncertaintyEstimate> {
    (0..n)
        .map(|i| {
            UncertaintyEstimate::new(
                i,
                DMatrix::from_element(1, 1, 0.5),
                CovarianceScale::AlreadyScaled,
            )
        })
        .collect()
}

fn spd_strategy(s: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, s * s).prop_map(move |raw| {
        let a = DMatrix::from_vec(s, s, raw);
        &a * a.transpose() + DMatrix::identity(s, s) * 0.1
    })
}

fn labels_strategy(g: usize, n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=g, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_spectrum_lies_in_unit_interval_doubled(v in dissimilarity_strategy(12)) {
        let (l, _) = normalized_laplacian(&adjacency(&v));
        prop_assert!((&l - l.transpose()).amax() <= 1e-12);
        let (eig, _) = sorted_eigen(&l).unwrap();
        prop_assert!(eig.iter().all(|&e| (-1e-8..=2.0 + 1e-8).contains(&e)));
        prop_assert!(eig[0].abs() <= 1e-8);
    }

    #[test]
    fn block_adjacency_has_zero_multiplicity_equal_to_blocks(sizes in prop::collection::vec(1..=5usize, 1..=5)) {
        let n: usize = sizes.iter().sum();
        let mut block = vec![0; n];
        let mut k = 0;
        for (b, &s) in sizes.iter().enumerate() {
            for _ in 0..s {
                block[k] = b;
                k += 1;
            }
        }
        let a = DMatrix::from_fn(n, n, |i, j| if block[i] == block[j] { 1.0 } else { 0.0 });
        let (l, _) = normalized_laplacian(&a);
        let (eig, _) = sorted_eigen(&l).unwrap();
        let zeros = eig.iter().filter(|e| e.abs() <= 1e-10).count();
        prop_assert_eq!(zeros, sizes.len());
        // Each block contributes I − 11ᵀ/s, whose other eigenvalues are all one.
        for e in eig.iter().filter(|e| e.abs() > 1e-10) {
            prop_assert!((e - 1.0).abs() <= 1e-10, "eigenvalue {}", e);
        }
    }

    #[test]
    fn dissimilarity_is_symmetric_and_scale_invariant(
        betas in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 2..8),
        sigma in prop::collection::vec(spd_strategy(2), 8),
        c in 0.1..10.0f64,
    ) {
        let n = betas.len();
        let unc: Vec<UncertaintyEstimate> = (0..n)
            .map(|i| UncertaintyEstimate::new(i, sigma[i].clone(), CovarianceScale::AlreadyScaled))
            .collect();
        let v = build_dissimilarity(&betas, &unc, &PeriodWeights::Common(1.0)).unwrap();
        let m = v.values();
        prop_assert_eq!(m, &m.transpose());
        prop_assert!((0..n).all(|i| m[(i, i)] == 0.0));

        let scaled_betas: Vec<Vec<f64>> = betas.iter().map(|b| b.iter().map(|x| c * x).collect()).collect();
        let scaled_unc: Vec<UncertaintyEstimate> = (0..n)
            .map(|i| UncertaintyEstimate::new(i, &sigma[i] * (c * c), CovarianceScale::AlreadyScaled))
            .collect();
        let w = build_dissimilarity(&scaled_betas, &scaled_unc, &PeriodWeights::Common(1.0)).unwrap();
        prop_assert!((w.values() - m).amax() <= 1e-12 * m.amax().max(1.0));
    }

    #[test]
    fn per_observation_matches_prescaled(
        betas in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 2..6),
        sigma in prop::collection::vec(spd_strategy(2), 6),
        t in 2.0..500.0f64,
    ) {
        let n = betas.len();
        let per: Vec<_> = (0..n).map(|i| UncertaintyEstimate::new(i, sigma[i].clone(), CovarianceScale::PerObservation)).collect();
        let pre: Vec<_> = (0..n).map(|i| UncertaintyEstimate::new(i, &sigma[i] / t, CovarianceScale::AlreadyScaled)).collect();
        let a = build_dissimilarity(&betas, &per, &PeriodWeights::Common(t)).unwrap();
        let b = build_dissimilarity(&betas, &pre, &PeriodWeights::Common(1.0)).unwrap();
        prop_assert!((a.values() - b.values()).amax() <= 1e-9 * a.values().amax().max(1.0));
        let w = build_dissimilarity(&betas, &per, &PeriodWeights::PerIndividual(vec![t; n])).unwrap();
        prop_assert!((w.values() - a.values()).amax() <= 1e-9 * a.values().amax().max(1.0));
    }

    #[test]
    fn inverse_sqrt_reconstructs_identity(s in (1..=5usize).prop_flat_map(spd_strategy)) {
        let r = matrix_inverse_sqrt(&s).unwrap();
        let dim = s.nrows();
        prop_assert!((&r * &s * &r - DMatrix::identity(dim, dim)).norm() < 1e-8);
        prop_assert!((&r - r.transpose()).amax() <= 1e-12 * r.amax());
    }

    #[test]
    fn clustering_is_permutation_equivariant(
        (betas, truth) in clustered_strategy(),
        perm_seed in any::<u64>(),
    ) {
        let n = betas.len();
        let g = *truth.iter().max().unwrap();
        let v = build_dissimilarity(&betas, &unit_scalar(n), &PeriodWeights::Common(1.0)).unwrap();
        let opts = KMeansOptions { restarts: 10, seed: 3, ..Default::default() };
        let (base, _) = spectral_cluster(&v, g, &opts).unwrap();
        prop_assert_eq!(average_match(&truth, &base.labels).unwrap().perfect, true);

        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = perm_seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let (moved, _) = spectral_cluster(&v.permuted(&perm), g, &opts).unwrap();
        let expected: Vec<usize> = perm.iter().map(|&p| base.labels[p]).collect();
        prop_assert!(average_match(&expected, &moved.labels).unwrap().perfect);
    }

    #[test]
    fn constant_shift_keeps_two_block_labels(
        (betas, truth) in clustered_strategy(),
        shift in 0.0..5.0f64,
    ) {
        let n = betas.len();
        let g = *truth.iter().max().unwrap();
        let v = build_dissimilarity(&betas, &unit_scalar(n), &PeriodWeights::Common(1.0)).unwrap();
        let shifted = DissimilarityMatrix::new(DMatrix::from_fn(n, n, |i, j| {
            if i == j { 0.0 } else { v.get(i, j) + shift }
        })).unwrap();
        let a0 = adjacency(v.values());
        let a1 = adjacency(shifted.values());
        let factor = (-shift).exp();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    prop_assert!((a1[(i, j)] - factor * a0[(i, j)]).abs() <= 1e-12);
                }
            }
        }
        let opts = KMeansOptions { restarts: 10, ..Default::default() };
        let (x, _) = spectral_cluster(&v, g, &opts).unwrap();
        let (y, _) = spectral_cluster(&shifted, g, &opts).unwrap();
        prop_assert!(average_match(&x.labels, &y.labels).unwrap().perfect);
    }

    #[test]
    fn hungarian_equals_enumeration(
        g in 1..=6usize,
        raw in prop::collection::vec(-10.0..10.0f64, 36),
    ) {
        let w: Vec<Vec<f64>> = (0..g).map(|i| raw[i * 6..i * 6 + g].to_vec()).collect();
        let assignment = max_weight_assignment(&w);
        let mut seen = assignment.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..g).collect::<Vec<_>>());
        let got: f64 = assignment.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
        let best = permutations(g)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| w[i][j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((got - best).abs() <= 1e-9);
    }

    #[test]
    fn average_match_equals_enumeration(
        (g, truth, est) in (1..=6usize).prop_flat_map(|g| (Just(g), labels_strategy(g, 25), labels_strategy(g, 25)))
    ) {
        // Ensure both alphabets have exactly g labels.
        let mut truth = truth;
        let mut est = est;
        for k in 0..g {
            truth[k] = k + 1;
            est[g + k] = k + 1;
        }
        let score = average_match(&truth, &est).unwrap();
        prop_assert!((score.average - exhaustive_match(&truth, &est, g)).abs() <= 1e-12);
        prop_assert_eq!(score.perfect, score.average == 1.0);
        let back = average_match(&est, &truth).unwrap();
        prop_assert!((score.average - back.average).abs() <= 1e-12);
    }

    #[test]
    fn average_match_ignores_relabeling(
        (g, truth, est) in (1..=6usize).prop_flat_map(|g| (Just(g), labels_strategy(g, 20), labels_strategy(g, 20))),
        rot in 0..6usize,
    ) {
        let relabel = |l: usize| (l - 1 + rot) % g + 1;
        let base = average_match(&truth, &est).unwrap().average;
        let renamed: Vec<usize> = est.iter().map(|&l| relabel(l)).collect();
        prop_assert!((average_match(&truth, &renamed).unwrap().average - base).abs() <= 1e-12);
        let renamed_truth: Vec<usize> = truth.iter().map(|&l| relabel(l)).collect();
        prop_assert!((average_match(&renamed_truth, &est).unwrap().average - base).abs() <= 1e-12);
        prop_assert_eq!(average_match(&truth, &truth).unwrap().average, 1.0);
    }

    #[test]
    fn lloyd_objective_never_increases(
        (n, d, raw) in (3..40usize, 1..4usize).prop_flat_map(|(n, d)| (Just(n), Just(d), prop::collection::vec(-5.0..5.0f64, n * d))),
        k in 1..6usize,
        seed in any::<u64>(),
    ) {
        let points = DMatrix::from_vec(n, d, raw);
        let k = k.min(n);
        let res = kmeans(&points, k, &KMeansOptions { restarts: 3, seed, ..Default::default() });
        for w in res.trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", res.trace);
        }
        let direct: f64 = (0..n)
            .map(|i| (0..d).map(|j| (points[(i, j)] - res.centers[(res.labels[i], j)]).powi(2)).sum::<f64>())
            .sum();
        prop_assert!((direct - res.objective).abs() <= 1e-9 * direct.max(1.0));
        let mut used = res.labels.clone();
        used.sort();
        used.dedup();
        prop_assert_eq!(used.len(), k);
    }
}

#[test]
fn simulation_batch_replays_byte_for_byte() {
    let mut config = SimulationConfig::new(ModelKind::Model1, 15, 40, 4, 77);
    config.method.select_groups = true;
    config.method.compare_identity = true;
    config.method.compare_naive_kmeans = true;
    let a = serde_json::to_string(&run_batch(&config).unwrap()).unwrap();
    let b = serde_json::to_string(&run_batch(&config).unwrap()).unwrap();
    assert_eq!(a, b);

    let logistic = SimulationConfig::new(ModelKind::Logistic, 12, 30, 3, 5);
    let a = serde_json::to_string(&run_batch(&logistic).unwrap()).unwrap();
    let b = serde_json::to_string(&run_batch(&logistic).unwrap()).unwrap();
    assert_eq!(a, b);
}
