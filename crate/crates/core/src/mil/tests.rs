use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assume, proptest};

use super::*;

const NEG: Label = Label::Negative;
const POS: Label = Label::Positive;

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn labels(bits: &[u8]) -> Vec<Label> {
    bits.iter().map(|&b| Label::from_u8(b).unwrap()).collect()
}

#[test]
fn split_examples() {
    let mut rng = Rng::new(1);
    let x = random_matrix(&mut rng, 30, 3);
    let parts = pseudo_bag_split(&x, 5, &mut rng);
    assert_eq!(
        parts.iter().map(Matrix::rows).collect::<Vec<_>>(),
        vec![6; 5]
    );

    let one = pseudo_bag_split(&x, 1, &mut rng);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].rows(), 30);

    let small = random_matrix(&mut rng, 3, 2);
    let parts = pseudo_bag_split(&small, 5, &mut rng);
    assert_eq!(
        parts.iter().map(Matrix::rows).collect::<Vec<_>>(),
        vec![1; 3]
    );
}

#[test]
fn pool_single_instance_and_identical_rows() {
    let mut rng = Rng::new(2);
    let model = AttentionMILModel::init(4, 6, &mut rng);
    let x = random_matrix(&mut rng, 1, 4);
    let p = attention_pool(&x, &model).unwrap();
    assert_eq!(p.weights, vec![1.0]);
    assert_eq!(p.embedding, x.row(0));

    let same = Matrix::from_rows(&vec![x.row(0).to_vec(); 5]).unwrap();
    let p = attention_pool(&same, &model).unwrap();
    assert!(p.weights.iter().all(|&a| (a - 0.2).abs() < 1e-15));
}

#[test]
fn pool_matches_naive_oracle() {
    let mut rng = Rng::new(3);
    let model = AttentionMILModel::init(4, 3, &mut rng);
    let x = random_matrix(&mut rng, 5, 4);
    let p = attention_pool(&x, &model).unwrap();
    let scores: Vec<f64> = (0..5)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..3 {
                let mut pre = 0.0;
                for c in 0..4 {
                    pre += model.v[(j, c)] * x[(i, c)];
                }
                s += model.w[j] * pre.tanh();
            }
            s
        })
        .collect();
    let denom: f64 = scores.iter().map(|s| s.exp()).sum();
    for (w, s) in p.weights.iter().zip(&scores) {
        assert!((w - s.exp() / denom).abs() < 1e-12);
    }
    for c in 0..4 {
        let e: f64 = (0..5).map(|i| scores[i].exp() / denom * x[(i, c)]).sum();
        assert!((p.embedding[c] - e).abs() < 1e-12);
    }
}

#[test]
fn empty_bag_is_rejected() {
    let model = AttentionMILModel::zeros(3, 2);
    let empty = Matrix::zeros(0, 3);
    assert!(matches!(
        attention_pool(&empty, &model),
        Err(Error::EmptyBag)
    ));
    assert!(matches!(mil_predict(&model, &empty), Err(Error::EmptyBag)));
}

#[test]
fn predict_examples() {
    let mut rng = Rng::new(4);
    let mut model = AttentionMILModel::init(2, 3, &mut rng);
    model.classifier = vec![0.0; 2];
    let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
    assert_eq!(mil_predict(&model, &x).unwrap(), 0.5);

    model.classifier = vec![0.7, -0.2];
    let low = mil_predict(&model, &x).unwrap();
    model.bias = 0.3;
    let high = mil_predict(&model, &x).unwrap();
    assert!(high > low);

    // hand computation for the 2-instance bag
    let s: Vec<f64> = (0..2)
        .map(|i| {
            (0..3)
                .map(|j| {
                    model.w[j] * (model.v[(j, 0)] * x[(i, 0)] + model.v[(j, 1)] * x[(i, 1)]).tanh()
                })
                .sum()
        })
        .collect();
    let a0 = 1.0 / (1.0 + (s[1] - s[0]).exp());
    let pool = [a0 * 1.0 + (1.0 - a0) * 0.5, a0 * -2.0 + (1.0 - a0) * 3.0];
    let z = 0.7 * pool[0] - 0.2 * pool[1] + 0.3;
    assert!((high - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
}

#[test]
fn bag_gradient_matches_finite_differences() {
    let mut rng = Rng::new(5);
    for draw in 0..5 {
        let model = AttentionMILModel::init(4, 3, &mut rng);
        let x = random_matrix(&mut rng, 6, 4);
        let label = if draw % 2 == 0 { POS } else { NEG };
        let (_, grad) = bag_loss_and_grad(&model, &x, label).unwrap();
        let analytic = grad.flat_params();
        let base = model.flat_params();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[k] += h;
            probe.set_flat_params(&p);
            let fp = bag_loss_and_grad(&probe, &x, label).unwrap().0;
            p[k] -= 2.0 * h;
            probe.set_flat_params(&p);
            let fm = bag_loss_and_grad(&probe, &x, label).unwrap().0;
            let numeric = (fp - fm) / (2.0 * h);
            let err = (numeric - analytic[k]).abs() / analytic[k].abs().max(1.0);
            assert!(err < 1e-7, "param {k}: {numeric} vs {}", analytic[k]);
        }
    }
}

fn separable_bags(seed: u64) -> (Vec<Matrix>, Vec<Label>) {
    let mut rng = Rng::new(seed);
    let mut bags = Vec::new();
    let mut ls = Vec::new();
    for b in 0..20 {
        let label = if b % 2 == 0 { POS } else { NEG };
        let shift = if label.is_positive() { 2.0 } else { -2.0 };
        let n = 8 + rng.below(5);
        let mut x = random_matrix(&mut rng, n, 3);
        for i in 0..n {
            x[(i, 0)] += shift;
        }
        bags.push(x);
        ls.push(label);
    }
    (bags, ls)
}

#[test]
fn separable_bags_are_learned() {
    let (bags, ls) = separable_bags(6);
    let cfg = MILTrainConfig {
        epochs: 200,
        learning_rate: 1e-2,
        attention_hidden: 8,
        ..MILTrainConfig::default()
    };
    let out = mil_train(&bags, &ls, &cfg).unwrap();
    let m = evaluate(&out.model, &bags, &ls).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
}

#[test]
fn zero_learning_rate_and_determinism() {
    let (bags, ls) = separable_bags(7);
    let frozen = MILTrainConfig {
        epochs: 2,
        learning_rate: 0.0,
        ..MILTrainConfig::default()
    };
    let init = AttentionMILModel::init(3, 32, &mut Rng::derived(0, "mil-init", 0));
    assert_eq!(mil_train(&bags, &ls, &frozen).unwrap().model, init);

    let cfg = MILTrainConfig {
        epochs: 3,
        seed: 11,
        ..MILTrainConfig::default()
    };
    let a = mil_train(&bags, &ls, &cfg).unwrap();
    let b = mil_train(&bags, &ls, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_class_training_is_rejected() {
    let (bags, _) = separable_bags(8);
    let ls = vec![NEG; bags.len()];
    assert!(matches!(
        mil_train(&bags, &ls, &MILTrainConfig::default()),
        Err(Error::SingleClassTraining(_))
    ));
    let cfg = MILTrainConfig {
        n_pseudo_bags: 0,
        ..MILTrainConfig::default()
    };
    assert!(matches!(
        mil_train(&bags, &labels(&[0, 1]), &cfg),
        Err(Error::ConfigInvalid(_))
    ));
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.1], &labels(&[1, 0])).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 4], &labels(&[1, 0, 0, 1])).unwrap(), 0.5);
    assert_eq!(
        auc(&[0.2, 0.8, 0.4, 0.6], &labels(&[0, 1, 1, 0])).unwrap(),
        0.75
    );
    assert!(matches!(
        auc(&[0.1, 0.2], &labels(&[1, 1])),
        Err(Error::SingleClass)
    ));
}

#[test]
fn accuracy_examples() {
    let truth = labels(&[1, 1, 1, 0]);
    assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
    assert_eq!(balanced_accuracy(&truth, &truth).unwrap(), 1.0);
    let all_pos = vec![POS; 4];
    assert_eq!(accuracy(&all_pos, &truth).unwrap(), 0.75);
    assert_eq!(balanced_accuracy(&all_pos, &truth).unwrap(), 0.5);
    let inverted = labels(&[0, 0, 0, 1]);
    assert_eq!(balanced_accuracy(&inverted, &truth).unwrap(), 0.0);
    assert!(matches!(
        balanced_accuracy(&all_pos, &all_pos),
        Err(Error::SingleClass)
    ));
}

#[test]
fn oracle_scores_are_perfect() {
    let truth = labels(&[1, 0, 0, 1, 0]);
    let scores: Vec<f64> = truth.iter().map(|l| l.as_u8() as f64).collect();
    let m = BagMetrics::from_scores(&scores, &truth).unwrap();
    assert_eq!((m.balanced_accuracy, m.accuracy, m.auc), (1.0, 1.0, 1.0));
}

#[test]
fn random_scores_give_chance_auc() {
    let mut rng = Rng::new(9);
    let truth: Vec<Label> = (0..2000)
        .map(|i| Label::from_u8((i % 2) as u8).unwrap())
        .collect();
    let scores: Vec<f64> = truth.iter().map(|_| rng.uniform()).collect();
    assert!((auc(&scores, &truth).unwrap() - 0.5).abs() < 0.15);
}

#[test]
fn report_uses_population_std() {
    let run = |x| BagMetrics {
        balanced_accuracy: x,
        accuracy: x,
        auc: x,
    };
    let r = MetricsReport::from_runs(vec![run(0.8), run(0.9), run(1.0)]).unwrap();
    assert!((r.mean.auc - 0.9).abs() < 1e-12);
    assert!((r.std.auc - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((r.std.auc - 0.0816).abs() < 1e-4);
}

#[test]
fn scaler_standardizes_training_rows() {
    let mut rng = Rng::new(12);
    let mut a = random_matrix(&mut rng, 7, 3);
    for i in 0..7 {
        a[(i, 0)] = 3.0 * a[(i, 0)] + 10.0;
        a[(i, 2)] = -4.0;
    }
    let mut b = random_matrix(&mut rng, 5, 3);
    for i in 0..5 {
        b[(i, 2)] = -4.0;
    }
    let scaler = FeatureScaler::fit(&[a.clone(), b.clone()]).unwrap();
    let all = Matrix::vstack(&[&scaler.transform(&a), &scaler.transform(&b)]).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = all.iter_rows().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / 12.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }
    assert_eq!(scaler.scale[2], 1.0);
    assert!(matches!(FeatureScaler::fit(&[]), Err(Error::EmptyInput(_))));
}

proptest! {
    #[test]
    fn split_partitions_rows(n in 1usize..80, m in 1usize..40, seed: u64) {
        let x = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let parts = pseudo_bag_split(&x, m, &mut Rng::new(seed));
        prop_assert_eq!(parts.len(), m.min(n));
        let sizes: Vec<usize> = parts.iter().map(Matrix::rows).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut seen: Vec<f64> = parts.iter().flat_map(|p| p.values().to_vec()).collect();
        seen.sort_by(f64::total_cmp);
        prop_assert_eq!(seen, x.values().to_vec());
    }

    #[test]
    fn attention_weights_lie_on_simplex(n in 1usize..20, seed: u64) {
        let mut rng = Rng::new(seed);
        let model = AttentionMILModel::init(5, 4, &mut rng);
        let x = random_matrix(&mut rng, n, 5);
        let p = attention_pool(&x, &model).unwrap();
        prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.weights.iter().all(|&a| a > 0.0 && a <= 1.0));
    }

    #[test]
    fn duplicating_instances_keeps_pool(n in 1usize..12, seed: u64) {
        let mut rng = Rng::new(seed);
        let model = AttentionMILModel::init(3, 4, &mut rng);
        let x = random_matrix(&mut rng, n, 3);
        let doubled = Matrix::vstack(&[&x, &x]).unwrap();
        let a = attention_pool(&x, &model).unwrap();
        let b = attention_pool(&doubled, &model).unwrap();
        for (u, v) in a.embedding.iter().zip(&b.embedding) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..40)
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let truth: Vec<Label> = raw.iter().map(|r| if r.1 { POS } else { NEG }).collect();
        prop_assume!(truth.contains(&POS) && truth.contains(&NEG));
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&scores, &truth).unwrap(), auc(&warped, &truth).unwrap());
    }
}
