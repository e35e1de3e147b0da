use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::finite_diff_check;

fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
    .unwrap()
}

fn small_config() -> ModelConfig {
    let mut c = ModelConfig::new(16, 8, 5);
    c.backbone_hidden = vec![12];
    c.seed = 7;
    c
}

#[test]
fn same_seed_gives_identical_weights() {
    let a = Model::new(small_config()).unwrap();
    let b = Model::new(small_config()).unwrap();
    assert_eq!(a, b);
    let mut c = small_config();
    c.seed = 8;
    assert_ne!(a, Model::new(c).unwrap());
}

#[test]
fn init_bounds_and_batch_norm_defaults() {
    let m = Model::new(small_config()).unwrap();
    let first = m.parameters()[0];
    let bound = 1.0 / 16f64.sqrt();
    assert!(first.data().iter().all(|w| w.abs() <= bound));
    assert!(m.batch_norm().gamma.data().iter().all(|&g| g == 1.0));
    assert!(m.batch_norm().beta.data().iter().all(|&b| b == 0.0));
    assert!(m.batch_norm().running_mean.iter().all(|&v| v == 0.0));
    assert!(m.batch_norm().running_var.iter().all(|&v| v == 1.0));
    assert_eq!(m.parameter_names().len(), m.parameters().len());
}

#[test]
fn output_shapes() {
    let m = Model::new(small_config()).unwrap();
    let x = random_batch(4, 16, 1);
    let e = m.embed(&x).unwrap();
    assert_eq!(e.shape(), &[4, 8]);
    let l = m.classify(&e).unwrap();
    assert_eq!(l.shape(), &[4, 6]);
}

#[test]
fn head_width_is_classes_plus_one() {
    let mut c = ModelConfig::new(4, 7, 6);
    c.seed = 1;
    let m = Model::new(c).unwrap();
    let l = m.classify(&random_batch(3, 7, 2)).unwrap();
    assert_eq!(l.shape()[1], 7);
}

#[test]
fn wide_embedding_warns_but_builds() {
    let c = ModelConfig::new(16, 40, 5);
    assert_eq!(c.warnings().len(), 1);
    assert!(Model::new(c).is_ok());
    assert!(ModelConfig::new(16, 6, 5).warnings().is_empty());
}

#[test]
fn embedding_width_below_two_is_rejected() {
    assert!(matches!(
        Model::new(ModelConfig::new(16, 1, 5)),
        Err(Error::Config { .. })
    ));
    assert!(matches!(
        Model::new(ModelConfig::new(16, 4, 1)),
        Err(Error::Config { .. })
    ));
}

#[test]
fn zero_weights_embed_to_zero() {
    let mut m = Model::new(small_config()).unwrap();
    for p in m.parameters_mut() {
        p.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let e = m.embed(&random_batch(5, 16, 3)).unwrap();
    assert!(e.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_head_output_layer_gives_zero_logits() {
    let mut m = Model::new(small_config()).unwrap();
    m.head_out
        .weight
        .data_mut()
        .iter_mut()
        .for_each(|x| *x = 0.0);
    m.head_out
        .bias
        .as_mut()
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|x| *x = 0.0);
    let l = m.classify(&random_batch(3, 8, 4)).unwrap();
    assert!(l.data().iter().all(|&v| v == 0.0));
}

#[test]
fn eval_is_repeatable() {
    let mut m = Model::new(small_config()).unwrap();
    m.eval();
    let x = random_batch(6, 16, 5);
    assert_eq!(m.infer(&x).unwrap(), m.infer(&x).unwrap());
}

#[test]
fn train_mode_constant_batch_stays_finite() {
    let m = Model::new(small_config()).unwrap();
    let x = Tensor::filled(vec![4, 16], 0.7);
    let l = m.classify(&m.embed(&x).unwrap()).unwrap();
    assert!(l.all_finite());
}

#[test]
fn classify_errors() {
    let mut m = Model::new(small_config()).unwrap();
    assert!(matches!(
        m.classify(&Tensor::zeros(vec![3, 5])),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        m.classify(&random_batch(1, 8, 1)),
        Err(Error::BatchSize(1))
    ));
    m.eval();
    assert!(matches!(
        m.classify(&Tensor::zeros(vec![0, 8])),
        Err(Error::Domain(_))
    ));
    assert!(m.classify(&random_batch(1, 8, 1)).is_ok());
    assert!(matches!(
        m.embed(&Tensor::zeros(vec![2, 15])),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn softmax_examples() {
    let p = softmax(&Tensor::zeros(vec![1, 7])).unwrap();
    assert!(p.data().iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));
    let p = softmax(&Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap()).unwrap();
    assert!((p.data()[0] - 0.25).abs() < 1e-15 && (p.data()[1] - 0.75).abs() < 1e-15);
    let p = softmax(&Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap()).unwrap();
    assert!(p.all_finite() && (p.data()[0] - 1.0).abs() < 1e-15);
}

#[test]
fn label_mapping_and_argmax() {
    assert_eq!(argmax_label(&[0.7, 0.1, 0.1, 0.1]), -1);
    assert_eq!(argmax_label(&[0.1, 0.1, 0.1, 0.7]), 2);
    assert_eq!(argmax_label(&[0.4, 0.4, 0.2]), -1);
    for c in [2usize, 6, 20] {
        let labels: Vec<i64> = (0..=c).map(index_to_label).collect();
        assert_eq!(labels.first(), Some(&-1));
        assert_eq!(labels.last(), Some(&(c as i64 - 1)));
        for (i, &l) in labels.iter().enumerate() {
            assert_eq!(label_to_index(l), i);
        }
    }
}

#[test]
fn eval_outputs_ignore_batch_mates_train_outputs_do_not() {
    let mut m = Model::new(small_config()).unwrap();
    let a = random_batch(4, 16, 10);
    let b = random_batch(4, 16, 11);
    let mut rows = vec![a.row(0).to_vec()];
    rows.extend((1..4).map(|r| b.row(r).to_vec()));
    let mixed = Tensor::from_rows(&rows).unwrap();

    let (_, pa) = m.infer(&a).unwrap();
    let (_, pm) = m.infer(&mixed).unwrap();
    assert_ne!(pa.row(0), pm.row(0));

    m.eval();
    let (_, pa) = m.infer(&a).unwrap();
    let (_, pm) = m.infer(&mixed).unwrap();
    assert_eq!(pa.row(0), pm.row(0));
}

#[test]
fn running_stats_update() {
    let mut bn = BatchNormLayer::new(2, 0.1, 1e-5);
    bn.update_running(&BatchStats {
        mean: vec![1.0, -1.0],
        var: vec![2.0, 0.0],
        count: 4,
    });
    assert!((bn.running_mean[0] - 0.1).abs() < 1e-15);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 2.0 * 4.0 / 3.0)).abs() < 1e-15);
    assert!(bn.running_var.iter().all(|&v| v > 0.0));
}

#[test]
fn classify_embed_gradient_check() {
    let mut m = Model::new(small_config()).unwrap();
    let x = random_batch(8, 16, 21);
    let err = finite_diff_check(&mut m, 1e-5, |model, g| {
        let f = model.forward_on(g, &x)?;
        let probs = g.softmax_rows(f.logits)?;
        let picked = g.pick(probs, &[0, 1, 2, 3, 4, 5, 0, 1])?;
        let logp = g.focal(picked, 0.0)?;
        let emb_sq = g.mul(f.embeddings, f.embeddings)?;
        let reg = g.mean(emb_sq)?;
        let ce = g.mean(logp)?;
        let loss = g.add(ce, reg)?;
        Ok((loss, f.params))
    })
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn checkpoint_round_trip() {
    let mut m = Model::new(small_config()).unwrap();
    m.batch_norm_mut().running_mean[0] = 0.25;
    let mut buf = Vec::new();
    m.save(&mut buf).unwrap();
    assert_eq!(&buf[..4], b"QNM1");
    let loaded = Model::load(buf.as_slice()).unwrap();
    assert_eq!(loaded.mode(), Mode::Eval);
    m.eval();
    assert_eq!(loaded, m);
}

#[test]
fn checkpoint_rejects_bad_magic_and_version() {
    let m = Model::new(small_config()).unwrap();
    let mut buf = Vec::new();
    m.save(&mut buf).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(Model::load(bad.as_slice()), Err(Error::Format(_))));
    let mut bad = buf.clone();
    bad[4] = 9;
    assert!(matches!(Model::load(bad.as_slice()), Err(Error::Format(_))));
    assert!(Model::load(&buf[..buf.len() - 3]).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0..50.0f64, 21)) {
        let p = softmax(&Tensor::new(vec![3, 7], v).unwrap()).unwrap();
        for r in 0..3 {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}
