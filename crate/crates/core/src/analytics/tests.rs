use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;

fn pts(rows: &[[f64; 2]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn gaussian_1d(groups: &[(f64, usize, i64)], seed: u64) -> (Tensor, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for &(mu, n, label) in groups {
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + z);
            labels.push(label);
        }
    }
    (Tensor::new(vec![labels.len(), 1], data).unwrap(), labels)
}

#[test]
fn pairwise_examples() {
    let d = pairwise_distances(&pts(&[[0.0, 0.0], [3.0, 4.0]])).unwrap();
    assert_eq!(d.data(), &[0.0, 5.0, 5.0, 0.0]);

    let (x, _) = gaussian_1d(&[(0.0, 50, 0)], 1);
    let x = Tensor::new(vec![25, 2], x.into_data()).unwrap();
    let d = pairwise_distances(&x).unwrap();
    for i in 0..25 {
        assert_eq!(d.row(i)[i], 0.0);
        for j in 0..25 {
            assert_eq!(d.row(i)[j], d.row(j)[i]);
        }
    }
}

#[test]
fn class_distance_examples() {
    let x = pts(&[[0.0, 0.0], [0.0, 1.0], [5.0, 5.0]]);
    assert_eq!(
        class_distances(&x, &[0, 0, 1], 0, DistanceKind::Intra).unwrap(),
        vec![1.0]
    );

    let x = pts(&[[0.0, 0.0], [0.0, 0.0], [3.0, 4.0]]);
    assert_eq!(
        class_distances(&x, &[2, 2, -1], 2, DistanceKind::Intra).unwrap(),
        vec![0.0]
    );
    assert_eq!(
        class_distances(&x, &[2, 2, -1], 2, DistanceKind::Inter).unwrap(),
        vec![5.0, 5.0]
    );

    let err = class_distances(&x, &[2, 0, -1], 2, DistanceKind::Intra).unwrap_err();
    assert!(matches!(&err, Error::Domain(m) if m.contains("class 2")));
    assert!(matches!(
        class_distances(&x, &[2, 2, 2], 2, DistanceKind::Inter),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        class_distances(&x, &[2, 2], 2, DistanceKind::Inter),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn box_stats_examples() {
    let v: Vec<f64> = (0..53).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
    let b = box_stats(&v).unwrap();
    // Reference values from numpy.quantile (linear method).
    let expect = [
        0.32857142857142857,
        3.2857142857142856,
        7.0,
        10.571428571428571,
        13.814285714285713,
    ];
    for (got, want) in [b.q025, b.q25, b.median, b.q75, b.q975].iter().zip(expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
    let b = box_stats(&hundred).unwrap();
    assert!((b.median - 50.5).abs() < 1e-12);
    assert!((b.q25 - 25.75).abs() < 1e-12);
    assert!((b.q975 - 97.525).abs() < 1e-12);

    let b = box_stats(&[4.0; 9]).unwrap();
    assert_eq!([b.q025, b.q25, b.median, b.q75, b.q975], [4.0; 5]);
    let b = box_stats(&[7.0]).unwrap();
    assert_eq!([b.q025, b.q25, b.median, b.q75, b.q975], [7.0; 5]);
    assert!(matches!(box_stats(&[]), Err(Error::Domain(_))));
}

#[test]
fn mean_distance_examples() {
    let x = pts(&[[1.0, 2.0], [1.0, 2.0]]);
    assert_eq!(mean_distance_statistic(0, &x, &[-1, 0], 0).unwrap(), 0.0);

    let x = pts(&[[0.0, 0.0], [3.0, 4.0], [0.0, 5.0]]);
    assert_eq!(mean_distance_statistic(0, &x, &[1, 0, 0], 0).unwrap(), 5.0);

    // Member: the 0 distance to itself is left out.
    let x = pts(&[[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]]);
    assert_eq!(mean_distance_statistic(0, &x, &[0, 0, 0], 0).unwrap(), 7.5);

    assert!(matches!(
        mean_distance_statistic(0, &x, &[0, 1, 1], 0),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        mean_distance_statistic(5, &x, &[0, 1, 1], 0),
        Err(Error::Index { .. })
    ));
}

#[test]
fn separated_classes_have_no_errors() {
    let (x, labels) = gaussian_1d(&[(0.0, 40, 0), (100.0, 40, 1), (-100.0, 30, -1)], 2);
    let e = quantile_error_estimates(&x, &labels, 0, 0.025, 0.025).unwrap();
    assert_eq!(e.at_alpha.type2, 0.0);
    assert_eq!(e.at_beta.type1, 0.0);
    assert_eq!((e.members, e.non_members), (40, 70));
}

#[test]
fn identical_distributions_give_complementary_error() {
    let (x, labels) = gaussian_1d(&[(0.0, 2000, 0), (0.0, 2000, 1)], 3);
    let e = quantile_error_estimates(&x, &labels, 0, 0.025, 0.025).unwrap();
    assert!((e.at_alpha.type2 - 0.975).abs() < 0.02, "{e:?}");
    assert!((e.at_beta.type1 - 0.975).abs() < 0.02, "{e:?}");
}

/// Straight double loop over all pairs; members divide by `n - 1` since their
/// own term is zero.
fn brute_force(x: &Tensor, labels: &[i64], class: i64, alpha: f64, beta: f64) -> [f64; 4] {
    let n_in = labels.iter().filter(|&&l| l == class).count();
    let mut t_in = Vec::new();
    let mut t_out = Vec::new();
    for i in 0..labels.len() {
        let s: f64 = (0..labels.len())
            .filter(|&j| labels[j] == class)
            .map(|j| (x.row(i)[0] - x.row(j)[0]).abs())
            .sum();
        if labels[i] == class {
            t_in.push(s / (n_in - 1) as f64);
        } else {
            t_out.push(s / n_in as f64);
        }
    }
    let q = |v: &mut Vec<f64>, p: f64| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = p * (v.len() - 1) as f64;
        let (f, c) = (pos.floor() as usize, pos.ceil() as usize);
        v[f] * (1.0 - (pos - f as f64)) + v[c] * (pos - f as f64)
    };
    let qa = q(&mut t_in, 1.0 - alpha);
    let qb = q(&mut t_out, beta);
    let frac = |v: &[f64], f: &dyn Fn(f64) -> bool| {
        v.iter().filter(|&&t| f(t)).count() as f64 / v.len() as f64
    };
    [
        frac(&t_in, &|t| t >= qa),
        frac(&t_out, &|t| t < qa),
        frac(&t_in, &|t| t >= qb),
        frac(&t_out, &|t| t < qb),
    ]
}

#[test]
fn shifted_gaussians_match_brute_force() {
    let (x, labels) = gaussian_1d(&[(0.0, 4000, 0), (3.0, 4000, 1)], 4);
    let e = quantile_error_estimates(&x, &labels, 0, 0.025, 0.025).unwrap();
    let oracle = brute_force(&x, &labels, 0, 0.025, 0.025);
    let got = [
        e.at_alpha.type1,
        e.at_alpha.type2,
        e.at_beta.type1,
        e.at_beta.type2,
    ];
    for (g, o) in got.iter().zip(oracle) {
        assert!((g - o).abs() <= 0.01, "{got:?} vs {oracle:?}");
    }
    for v in got {
        assert!((0.0..=1.0).contains(&v));
    }
    // Self-consistent legs stay within two binomial standard deviations.
    let sigma = (0.025f64 * 0.975 / 4000.0).sqrt();
    assert!((e.at_alpha.type1 - 0.025).abs() <= 2.0 * sigma);
    assert!((e.at_beta.type2 - 0.025).abs() <= 2.0 * sigma);
}

#[test]
fn small_classes_fail_the_guard() {
    let (x, labels) = gaussian_1d(&[(0.0, 19, 0), (3.0, 40, 1)], 5);
    assert!(matches!(
        quantile_error_estimates(&x, &labels, 0, 0.025, 0.025),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        quantile_error_estimates(&x, &labels, 1, 0.025, 0.025),
        Err(Error::Domain(_))
    ));
    let (x, labels) = gaussian_1d(&[(0.0, 20, 0), (3.0, 20, 1)], 5);
    assert!(quantile_error_estimates(&x, &labels, 0, 0.025, 0.025).is_ok());
    assert!(matches!(
        quantile_error_estimates(&x, &labels, 0, 0.0, 0.025),
        Err(Error::Domain(_))
    ));
}

#[test]
fn analyze_orders_and_skips() {
    let (x, labels) = gaussian_1d(
        &[(9.0, 25, 2), (0.0, 30, 0), (-5.0, 1, 1), (20.0, 25, -1)],
        6,
    );
    let r = analyze(&x, &labels, 0.025, 0.025).unwrap();
    let keys: Vec<(i64, DistanceKind)> = r
        .summaries
        .iter()
        .map(|s| (s.class_label, s.kind))
        .collect();
    assert_eq!(
        keys,
        vec![
            (-1, DistanceKind::Intra),
            (-1, DistanceKind::Inter),
            (0, DistanceKind::Intra),
            (0, DistanceKind::Inter),
            (1, DistanceKind::Inter),
            (2, DistanceKind::Intra),
            (2, DistanceKind::Inter),
        ]
    );
    assert_eq!(
        r.estimates
            .iter()
            .map(|e| e.class_label)
            .collect::<Vec<_>>(),
        vec![0, 2]
    );
    let skipped: Vec<(i64, &str)> = r
        .skipped
        .iter()
        .map(|s| (s.class_label, s.what.as_str()))
        .collect();
    assert_eq!(skipped, vec![(1, "intra"), (1, "errors")]);

    assert!(matches!(
        analyze(&x, &vec![0; labels.len()], 0.025, 0.025),
        Err(Error::Domain(_))
    ));
}

#[test]
fn error_csv_layout() {
    let (x, labels) = gaussian_1d(&[(0.0, 20, 0), (30.0, 20, 1)], 7);
    let r = analyze(&x, &labels, 0.025, 0.025).unwrap();
    let mut buf = Vec::new();
    write_error_csv(&r.estimates, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "class,type1_at_alpha,type2_at_alpha,type1_at_beta,type2_at_beta"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,"));
    let json = serde_json::to_value(&r).unwrap();
    for key in ["alpha", "beta", "summaries", "estimates", "skipped"] {
        assert!(json.get(key).is_some());
    }
    assert!(json["summaries"][0].get("q975").is_some());
}

fn summary(label: i64, v: f64) -> DistanceSummary {
    DistanceSummary {
        class_label: label,
        kind: DistanceKind::Intra,
        stats: box_stats(&[v, v * 2.0, v * 3.0]).unwrap(),
        sample_count: 3,
    }
}

#[test]
fn svg_is_well_formed() {
    let summaries: Vec<DistanceSummary> = (-1..6).map(|l| summary(l, 1.0 + l as f64)).collect();
    let svg = render_boxplots(&summaries, "intra <class> distances").unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.attribute("version"), Some("1.1"));
    let boxes: Vec<_> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("box"))
        .map(|n| n.attribute("data-class").unwrap().to_string())
        .collect();
    assert_eq!(boxes, (-1..6).map(|l| l.to_string()).collect::<Vec<_>>());
    let labels: Vec<_> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("axis-label"))
        .filter_map(|n| n.text())
        .collect();
    assert_eq!(labels, vec!["distance", "class"]);
}

#[test]
fn degenerate_box_renders() {
    let s = DistanceSummary {
        class_label: 0,
        kind: DistanceKind::Inter,
        stats: box_stats(&[0.0, 0.0]).unwrap(),
        sample_count: 2,
    };
    let svg = render_boxplots(&[s], "flat").unwrap();
    roxmltree::Document::parse(&svg).unwrap();
    assert!(svg.contains(r#"height="0.00""#));
    assert!(matches!(
        render_boxplots(&[], "none"),
        Err(Error::Domain(_))
    ));
}

proptest! {
    #[test]
    fn box_stats_monotone(values in prop::collection::vec(-1e6..1e6f64, 1..200)) {
        let b = box_stats(&values).unwrap();
        prop_assert!(b.q025 <= b.q25 && b.q25 <= b.median && b.median <= b.q75 && b.q75 <= b.q975);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(b.q025 >= lo && b.q975 <= hi);
    }

    #[test]
    fn distance_counts_are_combinatorial(
        raw in prop::collection::vec(-5.0..5.0f64, 60),
        labels in prop::collection::vec(-1i64..3, 30),
    ) {
        let x = Tensor::new(vec![30, 2], raw).unwrap();
        for class in -1..3 {
            let n = labels.iter().filter(|&&l| l == class).count();
            match class_distances(&x, &labels, class, DistanceKind::Intra) {
                Ok(d) => prop_assert_eq!(d.len(), n * (n - 1) / 2),
                Err(_) => prop_assert!(n < 2),
            }
            match class_distances(&x, &labels, class, DistanceKind::Inter) {
                Ok(d) => {
                    prop_assert_eq!(d.len(), n * (30 - n));
                    prop_assert!(d.iter().all(|&v| v >= 0.0));
                }
                Err(_) => prop_assert!(n == 0 || n == 30),
            }
        }
    }

    #[test]
    fn estimates_ignore_uniform_scaling(seed in 0u64..1000, power in -3i32..4) {
        let (x, labels) = gaussian_1d(&[(0.0, 30, 0), (1.5, 30, 1), (4.0, 25, -1)], seed);
        let c = 2f64.powi(power);
        let scaled = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect()).unwrap();
        for class in [0, 1] {
            let a = quantile_error_estimates(&x, &labels, class, 0.025, 0.025).unwrap();
            let b = quantile_error_estimates(&scaled, &labels, class, 0.025, 0.025).unwrap();
            prop_assert_eq!(a.at_alpha, b.at_alpha);
            prop_assert_eq!(a.at_beta, b.at_beta);
        }
    }

    #[test]
    fn analyze_ignores_sample_order(seed in 0u64..1000, rot in 1usize..80) {
        let (x, labels) = gaussian_1d(&[(0.0, 25, 0), (2.0, 25, 1), (5.0, 30, -1)], seed);
        let n = labels.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + rot) % n).collect();
        let x2 = Tensor::new(vec![n, 1], perm.iter().map(|&i| x.data()[i]).collect()).unwrap();
        let l2: Vec<i64> = perm.iter().map(|&i| labels[i]).collect();
        let a = analyze(&x, &labels, 0.025, 0.025).unwrap();
        let b = analyze(&x2, &l2, 0.025, 0.025).unwrap();
        prop_assert_eq!(a.summaries.len(), b.summaries.len());
        for (s, t) in a.summaries.iter().zip(&b.summaries) {
            prop_assert_eq!((s.class_label, s.kind, s.sample_count), (t.class_label, t.kind, t.sample_count));
            prop_assert!((s.stats.median - t.stats.median).abs() < 1e-12);
            prop_assert!((s.stats.q975 - t.stats.q975).abs() < 1e-12);
        }
        for (e, f) in a.estimates.iter().zip(&b.estimates) {
            prop_assert_eq!(e.at_alpha, f.at_alpha);
            prop_assert_eq!(e.at_beta, f.at_beta);
        }
    }
}
