//! Probe methods checked against independent oracles: pair counting for AUC,
//! brute-force scans, a library eigensolver for PCA, recomputed objectives for
//! NMF and recounted votes for cluster labeling.

use agentprefs::nn::Tensor;
use agentprefs::probe::{
    auc, best_single_feature, cluster_majority, fit_nmf, fit_pca, oriented_auc, train_nn_probe,
    InputSource, LabeledDataset, NnProbeHyperparams, SourceTag, Variant,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tag() -> SourceTag {
    SourceTag {
        input: InputSource::Activations,
        variant: Variant::Penalized,
    }
}

/// Probability a random positive outscores a random negative, ties counting half.
fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(2..=30);
    // a coarse grid of score values forces ties
    let levels = rng.gen_range(1..=8);
    let scores = (0..n)
        .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    (scores, labels)
}

#[test]
fn auc_matches_pair_counting_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa0c);
    for _ in 0..1000 {
        let (scores, labels) = random_instance(&mut rng);
        assert_eq!(
            auc(&scores, &labels).unwrap(),
            pair_count_auc(&scores, &labels),
            "{scores:?} {labels:?}"
        );
    }
}

proptest! {
    #[test]
    fn auc_is_rank_symmetric(seed in any::<u64>()) {
        let (scores, labels) = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auc_ignores_increasing_transforms(seed in any::<u64>()) {
        let (scores, labels) = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
    }

    #[test]
    fn oriented_auc_is_at_least_half(seed in any::<u64>()) {
        let (scores, labels) = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(oriented_auc(&scores, &labels).unwrap().0 >= 0.5);
    }

    #[test]
    fn pca_projection_contracts_distances(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![20, 6], (0..120).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>()).unwrap();
        let p = fit_pca(&x, k).unwrap();
        let z = p.apply_batch(&x).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        for i in 0..20 {
            for j in 0..i {
                prop_assert!(dist(z.row(i), z.row(j)) <= dist(x.row(i), x.row(j)) + 1e-9);
            }
        }
    }
}

#[test]
fn best_single_feature_matches_exhaustive_scan() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (50, 5);
        let data: Vec<f32> = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let ds = LabeledDataset::new(
            tag(),
            Tensor::new(vec![n, d], data).unwrap(),
            labels.clone(),
        )
        .unwrap();

        let mut oracle = (0, 1i8, f64::NEG_INFINITY);
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| ds.row(i)[j] as f64).collect();
            let a = pair_count_auc(&col, &labels);
            let (oa, sign) = if a >= 1.0 - a { (a, 1) } else { (1.0 - a, -1) };
            if oa > oracle.2 {
                oracle = (j, sign, oa);
            }
        }
        let s = best_single_feature(&ds).unwrap();
        assert_eq!((s.index, s.orientation, s.train_auc), oracle, "seed {seed}");
    }
}

/// Top-k eigenpairs of the sample covariance from a library solver.
fn library_components(x: &Tensor<f64>, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (x.batch(), x.sample_len());
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (vals, vecs)
}

fn assert_same_up_to_sign(ours: &[f64], theirs: &[f64], tol: f64) {
    let plus = ours
        .iter()
        .zip(theirs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let minus = ours
        .iter()
        .zip(theirs)
        .map(|(a, b)| (a + b).abs())
        .fold(0.0, f64::max);
    assert!(
        plus.min(minus) <= tol,
        "component mismatch {}",
        plus.min(minus)
    );
}

#[test]
fn dense_pca_matches_library_eigendecomposition() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct column scales keep the spectrum well separated
        let data: Vec<f64> = (0..100 * 10)
            .map(|i| rng.gen_range(-1.0..1.0) * (1.0 + (i % 10) as f64))
            .collect();
        let x = Tensor::new(vec![100, 10], data).unwrap();
        let p = fit_pca(&x, 10).unwrap();
        let (vals, vecs) = library_components(&x, 10);
        for c in 0..10 {
            assert!(
                (p.variances[c] - vals[c]).abs() <= 1e-6 * vals[0],
                "seed {seed} eigenvalue {c}"
            );
            assert_same_up_to_sign(&p.components[c], &vecs[c], 1e-6);
        }
    }
}

#[test]
fn subspace_pca_matches_library_eigendecomposition() {
    // d above the dense threshold exercises block power iteration
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (n, d, k) = (400, 300, 4);
    let data: Vec<f64> = (0..n * d)
        .map(|i| {
            let j = i % d;
            let scale = if j < 6 { 10.0 - j as f64 } else { 0.3 };
            rng.gen_range(-1.0..1.0) * scale
        })
        .collect();
    let x = Tensor::new(vec![n, d], data).unwrap();
    let p = fit_pca(&x, k).unwrap();
    let (vals, vecs) = library_components(&x, k);
    for c in 0..k {
        assert!((p.variances[c] - vals[c]).abs() <= 1e-6 * vals[0]);
        assert_same_up_to_sign(&p.components[c], &vecs[c], 1e-6);
    }
}

#[test]
fn nmf_objective_never_increases() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (rng.gen_range(10..40), rng.gen_range(4..12));
        let x = Tensor::new(
            vec![n, d],
            (0..n * d)
                .map(|_| rng.gen_range(0.0..3.0))
                .collect::<Vec<f64>>(),
        )
        .unwrap();
        let fit = fit_nmf(&x, rng.gen_range(1..=d.min(5)), 200, seed).unwrap();
        assert_eq!(fit.objective.len(), 201);
        for w in fit.objective.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12),
                "seed {seed}: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn cluster_labels_match_recounted_votes() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unl = Tensor::new(
            vec![200, 3],
            (0..600)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f32>>(),
        )
        .unwrap();
        let lx = Tensor::new(
            vec![50, 3],
            (0..150)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f32>>(),
        )
        .unwrap();
        let ly: Vec<u8> = (0..50).map(|_| rng.gen_range(0..2)).collect();
        let labeled = LabeledDataset::new(tag(), lx, ly.clone()).unwrap();
        let m = cluster_majority(&unl, 4, &labeled, seed).unwrap();

        // recount by brute-force nearest centroid
        let mut votes = vec![[0usize; 2]; 4];
        for i in 0..50 {
            let row = labeled.row(i);
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da: f32 = m.kmeans.centroids[a]
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c - v) * (c - v))
                        .sum();
                    let db: f32 = m.kmeans.centroids[b]
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c - v) * (c - v))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            votes[nearest][ly[i] as usize] += 1;
        }
        let positives = ly.iter().filter(|&&l| l == 1).count();
        let global = u8::from(2 * positives >= ly.len());
        let oracle: Vec<u8> = votes
            .iter()
            .map(|v| {
                if v[1] > v[0] {
                    1
                } else if v[0] > v[1] {
                    0
                } else {
                    global
                }
            })
            .collect();
        assert_eq!(m.cluster_labels, oracle, "seed {seed}");
    }
}

#[test]
fn nn_probe_on_shuffled_labels_is_at_chance() {
    // early stopping selects on the eval split, so chance is judged on a third split
    let mut scores = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let make = |n: usize, rng: &mut ChaCha8Rng| {
            let x = (0..n * 64)
                .map(|_| StandardNormal.sample(rng))
                .collect::<Vec<f32>>();
            let mut y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            y[0] = 0;
            y[1] = 1;
            LabeledDataset::new(tag(), Tensor::new(vec![n, 64], x).unwrap(), y).unwrap()
        };
        let (train, eval, test) = (make(50, &mut rng), make(100, &mut rng), make(500, &mut rng));
        let p = train_nn_probe(&train, &eval, &NnProbeHyperparams::default(), seed).unwrap();
        let a = auc(&p.score(test.features()).unwrap(), test.labels()).unwrap();
        assert!((0.35..=0.65).contains(&a), "seed {seed}: held-out AUC {a}");
        scores.push(a);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((0.4..=0.6).contains(&mean), "mean {mean}");
}
