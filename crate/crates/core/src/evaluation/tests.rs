use proptest::prelude::*;

use super::*;
use crate::model::ModelConfig;

#[test]
fn confusion_examples() {
    let cm = confusion(&[-1, 0, 1, 1], &[-1, 0, 1, 1], 2).unwrap();
    assert_eq!(cm.get(-1, -1), 1);
    assert_eq!(cm.get(1, 1), 2);
    assert_eq!(cm.total(), 4);
    assert_eq!(cm.get(0, 1), 0);
    assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
    let cm = confusion(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
    assert_eq!(cm.get(0, 1), 1);
    assert_eq!(cm.get(1, 0), 0);
    assert!(matches!(confusion(&[2], &[0], 2), Err(Error::Index { .. })));
    assert!(matches!(
        confusion(&[0], &[-2], 2),
        Err(Error::Index { .. })
    ));
}

#[test]
fn perfect_predictions() {
    let labels = [-1, 0, 1, 2, 2, 0];
    let m = classification_metrics(&confusion(&labels, &labels, 3).unwrap()).unwrap();
    assert_eq!(
        (m.balanced_accuracy, m.precision, m.recall, m.f1),
        (1.0, 1.0, 1.0, 1.0)
    );
}

#[test]
fn constant_predictor_on_balanced_data() {
    let labels = [-1, -1, 0, 0, 1, 1];
    let m = classification_metrics(&confusion(&[0; 6], &labels, 2).unwrap()).unwrap();
    assert!((m.balanced_accuracy - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn hand_computed_two_class_matrix() {
    let cm = ConfusionMatrix::from_counts(1, vec![8, 2, 3, 7]).unwrap();
    let m = classification_metrics(&cm).unwrap();
    assert!((m.balanced_accuracy - 0.75).abs() < 1e-15);
    let f1_a = 2.0 * (8.0 / 11.0) * 0.8 / (8.0 / 11.0 + 0.8);
    let f1_b = 2.0 * (7.0 / 9.0) * 0.7 / (7.0 / 9.0 + 0.7);
    assert!((m.f1 - (f1_a + f1_b) / 2.0).abs() < 1e-15);
    assert!((m.f1 - 0.7494).abs() < 1e-4);
}

#[test]
fn empty_matrix_is_an_error() {
    assert!(matches!(
        classification_metrics(&ConfusionMatrix::zeros(2)),
        Err(Error::Domain(_))
    ));
}

#[test]
fn map_examples() {
    let probs = Tensor::from_rows(&[
        vec![0.9, 0.1],
        vec![0.8, 0.2],
        vec![0.1, 0.9],
        vec![0.3, 0.7],
    ])
    .unwrap();
    assert_eq!(
        mean_average_precision(&probs, &[-1, -1, 0, 0]).unwrap(),
        1.0
    );

    // Only class 0 present: ranking by column 1 is 2, 3, 1, 0 -> AP 1.
    assert_eq!(mean_average_precision(&probs, &[0, 0, 0, 0]).unwrap(), 1.0);

    // Class-0 scores rank samples as pos, neg, pos, neg.
    let probs = Tensor::from_rows(&[
        vec![0.1, 0.9],
        vec![0.2, 0.8],
        vec![0.3, 0.7],
        vec![0.4, 0.6],
    ])
    .unwrap();
    let single_class = mean_average_precision(&probs, &[0, -1, 0, -1]).unwrap();
    let ap0 = (1.0 + 2.0 / 3.0) / 2.0;
    // Column 0 ranks samples 3, 2, 1, 0: also pos, neg, pos, neg.
    let ap_minus = (1.0 + 2.0 / 3.0) / 2.0;
    assert!((single_class - (ap0 + ap_minus) / 2.0).abs() < 1e-15);
    assert!((ap0 - 0.8333).abs() < 1e-4);

    assert!(matches!(
        mean_average_precision(&Tensor::zeros(vec![0, 3]), &[]),
        Err(Error::Domain(_))
    ));
}

/// Exhaustive neighbor scan: full distance matrix, full sort.
fn retrieval_oracle(x: &Tensor, labels: &[i64], k: usize) -> (f64, f64) {
    let n = labels.len();
    let (mut p_sum, mut ap_sum, mut ap_n) = (0.0, 0.0, 0);
    for q in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| {
                let d: f64 = x
                    .row(q)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (d.sqrt(), j)
            })
            .collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let top = &others[..k];
        let hits = top.iter().filter(|(_, j)| labels[*j] == labels[q]).count();
        p_sum += hits as f64 / k as f64;
        let r = (0..n).filter(|&j| j != q && labels[j] == labels[q]).count();
        if r > 0 {
            let mut found = 0;
            let mut s = 0.0;
            for (i, (_, j)) in top.iter().enumerate() {
                if labels[*j] == labels[q] {
                    found += 1;
                    s += found as f64 / (i + 1) as f64;
                }
            }
            ap_sum += s / (k.min(r)) as f64;
            ap_n += 1;
        }
    }
    (
        p_sum / n as f64,
        if ap_n == 0 { 0.0 } else { ap_sum / ap_n as f64 },
    )
}

#[test]
fn retrieval_single_label() {
    let x = Tensor::new(vec![5, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let m = retrieval_at_k(&x, &[3; 5], 2).unwrap();
    assert_eq!((m.precision_at_k, m.map_at_k), (1.0, 1.0));
}

#[test]
fn retrieval_two_separated_clusters() {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..12 {
        rows.push(vec![i as f64 * 0.01, 0.0]);
        labels.push(0);
        rows.push(vec![100.0 + i as f64 * 0.01, 5.0]);
        labels.push(1);
    }
    let x = Tensor::from_rows(&rows).unwrap();
    let m = retrieval_at_k(&x, &labels, 10).unwrap();
    assert_eq!((m.precision_at_k, m.map_at_k), (1.0, 1.0));
}

#[test]
fn retrieval_hand_case() {
    let x = Tensor::new(vec![6, 1], vec![0.0, 1.0, 3.0, 4.0, 10.0, 11.0]).unwrap();
    let labels = [0, 0, 1, 1, 0, 1];
    let m = retrieval_at_k(&x, &labels, 2).unwrap();
    assert!((m.precision_at_k - 2.5 / 6.0).abs() < 1e-15);
    assert!((m.map_at_k - 2.25 / 6.0).abs() < 1e-15);
    let (p, a) = retrieval_oracle(&x, &labels, 2);
    assert_eq!((m.precision_at_k, m.map_at_k), (p, a));
}

#[test]
fn retrieval_rejects_large_k() {
    let x = Tensor::zeros(vec![3, 2]);
    assert!(matches!(
        retrieval_at_k(&x, &[0, 0, 1], 3),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        retrieval_at_k(&x, &[0, 0, 1], 0),
        Err(Error::Domain(_))
    ));
}

#[test]
fn neighbor_ties_go_to_lower_index() {
    let x = Tensor::new(vec![4, 1], vec![0.0, 1.0, -1.0, 5.0]).unwrap();
    assert_eq!(nearest(&x, 0, 2), vec![1, 2]);
}

#[test]
fn evaluate_contract() {
    let ds = crate::data::generate_synthetic(&crate::data::SynthConfig {
        num_classes: 3,
        dim: 4,
        samples_per_class: 10,
        outlier_count: 10,
        ..Default::default()
    })
    .unwrap();
    let mut model = Model::new(ModelConfig::new(4, 4, 3)).unwrap();
    assert!(matches!(evaluate(&model, &ds, 5), Err(Error::Contract(_))));
    model.eval();
    let r = evaluate(&model, &ds, 5).unwrap();
    assert_eq!(r.k, 5);
    let json = serde_json::to_value(&r).unwrap();
    for key in [
        "balanced_accuracy",
        "f1",
        "precision",
        "recall",
        "map",
        "precision_at_k",
        "map_at_k",
        "k",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
    let empty = ds.subset(&[]);
    assert!(matches!(evaluate(&model, &empty, 5), Err(Error::Domain(_))));
}

fn dataset_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<i64>, Vec<f64>)> {
    (12usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0..3.0f64, n * 2),
            prop::collection::vec(-1i64..3, n),
            prop::collection::vec(0.01..1.0f64, n * 4),
        )
    })
}

fn normalize_rows(raw: &[f64], width: usize) -> Tensor {
    let mut out = Vec::with_capacity(raw.len());
    for row in raw.chunks(width) {
        let s: f64 = row.iter().sum();
        out.extend(row.iter().map(|v| v / s));
    }
    Tensor::new(vec![raw.len() / width, width], out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn retrieval_matches_oracle((x, labels, _) in dataset_strategy(), k in 1usize..10) {
        let n = labels.len();
        let t = Tensor::new(vec![n, 2], x).unwrap();
        let m = retrieval_at_k(&t, &labels, k).unwrap();
        let (p, a) = retrieval_oracle(&t, &labels, k);
        prop_assert!((m.precision_at_k - p).abs() < 1e-12);
        prop_assert!((m.map_at_k - a).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_bounded_and_order_free((x, labels, raw) in dataset_strategy(), rot in 1usize..11) {
        let n = labels.len();
        let emb = Tensor::new(vec![n, 2], x.clone()).unwrap();
        let probs = normalize_rows(&raw, 4);
        let r = metrics_from_outputs(&emb, &probs, &labels, 3, 5).unwrap();
        for v in [r.balanced_accuracy, r.f1, r.precision, r.recall, r.mean_average_precision, r.precision_at_k, r.map_at_k] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // Rotate the sample order.
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let emb2 = Tensor::new(vec![n, 2], perm.iter().flat_map(|&i| x[2 * i..2 * i + 2].to_vec()).collect()).unwrap();
        let probs2 = Tensor::new(vec![n, 4], perm.iter().flat_map(|&i| probs.row(i).to_vec()).collect()).unwrap();
        let labels2: Vec<i64> = perm.iter().map(|&i| labels[i]).collect();
        let r2 = metrics_from_outputs(&emb2, &probs2, &labels2, 3, 5).unwrap();
        prop_assert!((r.balanced_accuracy - r2.balanced_accuracy).abs() < 1e-12);
        prop_assert!((r.f1 - r2.f1).abs() < 1e-12);
        prop_assert!((r.mean_average_precision - r2.mean_average_precision).abs() < 1e-12);
        prop_assert!((r.precision_at_k - r2.precision_at_k).abs() < 1e-12);
        prop_assert!((r.map_at_k - r2.map_at_k).abs() < 1e-12);
    }

    #[test]
    fn map_ignores_monotone_rescoring((_, labels, raw) in dataset_strategy()) {
        let probs = normalize_rows(&raw, 4);
        let base = mean_average_precision(&probs, &labels).unwrap();
        let warped = Tensor::new(probs.shape().to_vec(), probs.data().iter().map(|p| p.powi(3) * 2.0 + 1.0).collect()).unwrap();
        prop_assert_eq!(base, mean_average_precision(&warped, &labels).unwrap());
    }

    #[test]
    fn diagonal_matrix_scores_one(counts in prop::collection::vec(0u64..20, 4)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let mut raw = vec![0; 16];
        for (i, c) in counts.iter().enumerate() {
            raw[i * 4 + i] = *c;
        }
        let m = classification_metrics(&ConfusionMatrix::from_counts(3, raw).unwrap()).unwrap();
        prop_assert_eq!((m.balanced_accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }
}
