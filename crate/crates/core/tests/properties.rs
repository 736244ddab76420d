mod common;

use proptest::prelude::*;

use common::*;
use weaksupcon::datagen::{generate_dataset, SplitCounts, SyntheticMILConfig};
use weaksupcon::losses::{loss_and_grad, similarity_loss, LossKind};
use weaksupcon::numerics::{Matrix, Pca2d};
use weaksupcon::rng::Rng;
use weaksupcon::Label;

fn kind_strategy() -> impl Strategy<Value = LossKind> {
    prop::sample::select(LossKind::ALL.to_vec())
}

fn tau_strategy() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.1, 0.5, 1.0])
}

/// Orthogonal matrix from Gram-Schmidt on a random square matrix.
fn orthogonal(rng: &mut Rng, d: usize) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&basis).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_match_naive_oracles(seed: u64, n in 1usize..8, d in 2usize..10, tau in tau_strategy()) {
        let mut rng = Rng::new(seed);
        let labels = random_labels(&mut rng, n);
        let batch = random_batch(&mut rng, &labels, d, tau);
        let all: Vec<usize> = (0..batch.len()).collect();
        let pairs = [
            (LossKind::Simclr, naive_simclr(&batch, &all)),
            (LossKind::Supcon, naive_supcon(&batch, &bag_label_ids(&batch))),
            (LossKind::Similarity, naive_similarity_on_negatives(&batch)),
            (LossKind::Weaksupcon, naive_weaksupcon(&batch)),
        ];
        for (kind, want) in pairs {
            let got = loss_and_grad(kind, &batch).unwrap().value;
            prop_assert!((got - want).abs() <= 1e-12, "{kind}: {got} vs {want}");
        }
    }

    #[test]
    fn loss_values_and_grads_follow_view_permutations(
        seed: u64, n in 1usize..6, d in 2usize..8, tau in tau_strategy(), kind in kind_strategy()
    ) {
        let mut rng = Rng::new(seed);
        let labels = random_labels(&mut rng, n);
        let batch = random_batch(&mut rng, &labels, d, tau);
        let mut perm: Vec<usize> = (0..batch.len()).collect();
        rng.shuffle(&mut perm);
        let base = loss_and_grad(kind, &batch).unwrap();
        let moved = loss_and_grad(kind, &batch.permuted(&perm).unwrap()).unwrap();
        prop_assert!((base.value - moved.value).abs() <= 1e-10);
        for (a, &old) in perm.iter().enumerate() {
            prop_assert!(max_abs_diff(moved.grad.row(a), base.grad.row(old)) <= 1e-10);
        }
    }

    #[test]
    fn loss_values_ignore_rotation_and_scale(
        seed: u64, n in 1usize..6, d in 2usize..8, tau in tau_strategy(),
        kind in kind_strategy(), factor in 1e-3f64..1e3
    ) {
        let mut rng = Rng::new(seed);
        let labels = random_labels(&mut rng, n);
        let batch = random_batch(&mut rng, &labels, d, tau);
        let base = loss_and_grad(kind, &batch).unwrap().value;
        let rotated = batch.embeddings().matmul(&orthogonal(&mut rng, d)).unwrap();
        let r = loss_and_grad(kind, &batch.with_embeddings(rotated).unwrap()).unwrap().value;
        prop_assert!((r - base).abs() <= 1e-9, "rotation: {r} vs {base}");
        let mut scaled = batch.embeddings().clone();
        scaled.scale(factor);
        let s = loss_and_grad(kind, &batch.with_embeddings(scaled).unwrap()).unwrap().value;
        prop_assert!((s - base).abs() <= 1e-9, "scale: {s} vs {base}");
    }

    #[test]
    fn similarity_loss_is_bounded_below(seed: u64, n in 1usize..8, d in 1usize..6, tau in tau_strategy()) {
        let mut rng = Rng::new(seed);
        let batch = random_batch(&mut rng, &vec![Label::Negative; n], d, tau);
        let all: Vec<usize> = (0..batch.len()).collect();
        let m = all.len() as f64;
        let v = similarity_loss(&batch, &all).unwrap().value;
        prop_assert!(v >= -(m - 1.0) / tau - 1e-9);
    }

    #[test]
    fn loss_grads_match_finite_differences(
        seed: u64, n in 1usize..5, d in 3usize..10, tau in tau_strategy(), kind in kind_strategy()
    ) {
        let mut rng = Rng::new(seed);
        let labels = random_labels(&mut rng, n);
        let batch = random_batch(&mut rng, &labels, d, tau);
        let analytic = loss_and_grad(kind, &batch).unwrap().grad;
        let h = 1e-4;
        for k in 0..analytic.values().len() {
            let probe = |delta: f64| {
                let mut z = batch.embeddings().clone();
                z.values_mut()[k] += delta;
                loss_and_grad(kind, &batch.with_embeddings(z).unwrap()).unwrap().value
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let g = analytic.values()[k];
            prop_assert!((numeric - g).abs() / g.abs().max(1.0) <= 1e-5);
        }
    }

    #[test]
    fn auc_equals_pair_counting(seed: u64, n in 2usize..60) {
        let mut rng = Rng::new(seed);
        let mut labels = random_labels(&mut rng, n);
        labels[0] = Label::Negative;
        labels[1] = Label::Positive;
        let scores: Vec<f64> = (0..n).map(|_| rng.below(8) as f64).collect();
        let got = weaksupcon::mil::auc(&scores, &labels).unwrap();
        prop_assert_eq!(got, brute_force_auc(&scores, &labels));
    }

    #[test]
    fn pca_components_are_orthonormal(seed: u64, n in 3usize..40, d in 2usize..8) {
        let mut rng = Rng::new(seed);
        let x = random_matrix(&mut rng, n, d);
        let pca = Pca2d::fit(&x).unwrap();
        let c = &pca.components;
        for i in 0..2 {
            for j in 0..2 {
                let dot: f64 = c.row(i).iter().zip(c.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-9, "c{i}.c{j} = {dot}");
            }
        }
        prop_assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
        prop_assert!(pca.explained_variance[0] + pca.explained_variance[1] <= pca.total_variance + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_bags_satisfy_mil_labels(
        seed: u64, pi in 0.01f64..=1.0, lo in 2usize..12, extra in 0usize..10, dim in 1usize..6
    ) {
        let counts = SplitCounts { train: 3, val: 1, test: 2 };
        let cfg = SyntheticMILConfig {
            n_neg_bags: counts,
            n_pos_bags: counts,
            bag_size_range: [lo, lo + extra],
            instance_dim: dim,
            positive_fraction: pi,
            seed,
            ..SyntheticMILConfig::camelyon_like()
        };
        let ds = generate_dataset(&cfg).unwrap();
        for (_, bag) in ds.bags() {
            let n = bag.len();
            prop_assert!((lo..=lo + extra).contains(&n));
            prop_assert_eq!(bag.instances.shape(), (n, dim));
            let positives = bag.true_instance_labels.iter().filter(|l| l.is_positive()).count();
            match bag.bag_label {
                Label::Negative => prop_assert_eq!(positives, 0),
                Label::Positive => {
                    prop_assert!(positives >= 1);
                    // ceil(pi * n): at least pi * n, less than one above it.
                    let target = pi * n as f64;
                    prop_assert!(positives as f64 >= target - 1e-9 && (positives as f64) < target + 1.0);
                }
            }
        }
    }
}
