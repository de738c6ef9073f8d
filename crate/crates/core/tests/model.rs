use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maosr::model::{
    cross_entropy, extract_activations, multi_head_loss, select_best_epoch, train, BackboneKind, BackboneSpec,
    Checkpoint, ImageSet, ModelSpec, MultiHeadModel, Tensor, TrainConfig, Variant,
};
use maosr::Error;

fn tiny_spec(variant: Variant) -> ModelSpec {
    let mut backbone = BackboneSpec::new(BackboneKind::LeNetLike);
    backbone.feature_dim = 6;
    let mut spec = ModelSpec::new(backbone, &[3, 2], variant, [3, 16, 16]);
    for h in &mut spec.heads {
        h.hidden_units = 5;
    }
    spec
}

fn random_input(b: usize, shape: [usize; 3], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = b * shape.iter().product::<usize>();
    Tensor::new(vec![b, shape[0], shape[1], shape[2]], (0..n).map(|_| rng.random::<f64>()).collect())
}

fn ln(x: f64) -> f64 {
    x.ln()
}

#[test]
fn loss_matches_hand_computed_fixture() {
    // head 1: uniform logits on class 0, then [ln 3, 0] on class 1
    let h1 = Tensor::new(vec![2, 2], vec![0.0, 0.0, 3f64.ln(), 0.0]);
    // head 2: [1, 0] and [0, 0], both class 0
    let h2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]);
    let labels = vec![vec![0, 0], vec![1, 0]];
    let (total, per_head, grads) = multi_head_loss(&[h1, h2], &labels).unwrap();

    let head1 = (ln(2.0) + ln(4.0)) / 2.0;
    let head2 = (ln(1.0 + (-1f64).exp()) + ln(2.0)) / 2.0;
    assert!((per_head[0] - head1).abs() < 1e-15 && (per_head[1] - head2).abs() < 1e-15, "{per_head:?}");
    assert!((total - (head1 + head2)).abs() < 1e-15);
    // mean over samples of the per-sample sum gives the same value
    let per_sample = [ln(2.0) + ln(1.0 + (-1f64).exp()), ln(4.0) + ln(2.0)];
    assert!((total - (per_sample[0] + per_sample[1]) / 2.0).abs() < 1e-15);

    // d/dlogit = (softmax - onehot) / B
    let g = &grads[0].data;
    let expected = [(0.5 - 1.0) / 2.0, 0.5 / 2.0, 0.75 / 2.0, (0.25 - 1.0) / 2.0];
    for (a, b) in g.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15, "{g:?}");
    }
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let l = Tensor::new(vec![1, 2], vec![0.0f64, 1.0]);
    assert!(matches!(cross_entropy(&l, &[2]), Err(Error::Input(_))));
    assert!(matches!(cross_entropy(&l, &[0, 1]), Err(Error::Input(_))));
}

fn total_loss(model: &mut MultiHeadModel<f64>, x: &Tensor<f64>, labels: &[Vec<usize>]) -> f64 {
    let logits = model.forward(x, true).unwrap();
    multi_head_loss(&logits, labels).unwrap().0
}

fn gradient_check(variant: Variant) {
    let spec = tiny_spec(variant);
    let mut model = MultiHeadModel::<f64>::new(spec, 7).unwrap();
    let x = random_input(4, [3, 16, 16], 1);
    let labels = vec![vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 0]];

    model.zero_grad();
    let logits = model.forward(&x, true).unwrap();
    let (_, _, grads) = multi_head_loss(&logits, &labels).unwrap();
    model.backward(grads);
    let analytic: Vec<Vec<f64>> = model.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-6;
    let mut checked = 0;
    for (pi, g) in analytic.iter().enumerate() {
        for _ in 0..4 {
            let j = rng.random_range(0..g.len());
            let orig = model.params_mut()[pi].value[j];
            model.params_mut()[pi].value[j] = orig + eps;
            let up = total_loss(&mut model, &x, &labels);
            model.params_mut()[pi].value[j] = orig - eps;
            let down = total_loss(&mut model, &x, &labels);
            model.params_mut()[pi].value[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = numeric.abs().max(g[j].abs());
            if scale < 1e-7 {
                continue;
            }
            let rel = (numeric - g[j]).abs() / scale;
            assert!(rel < 1e-3, "param {pi}[{j}]: analytic {} numeric {numeric} rel {rel}", g[j]);
            checked += 1;
        }
    }
    assert!(checked > 20, "only {checked} gradients were large enough to compare");
}

#[test]
fn finite_difference_gradients_shared() {
    gradient_check(Variant::Shared);
}

#[test]
fn finite_difference_gradients_duplicated() {
    gradient_check(Variant::Duplicated);
}

#[test]
fn duplicated_variant_isolates_attribute_gradients() {
    let mut model = MultiHeadModel::<f64>::new(tiny_spec(Variant::Duplicated), 2).unwrap();
    let x = random_input(3, [3, 16, 16], 5);
    model.zero_grad();
    let logits = model.forward(&x, true).unwrap();
    let (_, g0) = cross_entropy(&logits[0], &[0, 1, 2]).unwrap();
    let g1 = Tensor::zeros(logits[1].shape.clone());
    model.backward(vec![g0, g1]);
    assert!(model.params_of_pair_mut(1).iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    assert!(model.params_of_pair_mut(0).iter().any(|p| p.grad.iter().any(|&g| g != 0.0)));
}

#[test]
fn shared_variant_backbone_receives_both_heads() {
    let mut model = MultiHeadModel::<f64>::new(tiny_spec(Variant::Shared), 2).unwrap();
    let head_params: usize = (0..2).map(|m| model.params_of_pair_mut(m).len()).sum();
    assert!(model.params_mut().len() > head_params);
    let mut dup = MultiHeadModel::<f64>::new(tiny_spec(Variant::Duplicated), 2).unwrap();
    let pairs: usize = (0..2).map(|m| dup.params_of_pair_mut(m).len()).sum();
    assert_eq!(dup.params_mut().len(), pairs);
    assert!(dup.num_parameters() > model.num_parameters());
}

#[test]
fn color_mnist_shapes() {
    let spec = ModelSpec::new(BackboneSpec::new(BackboneKind::LeNetLike), &[5, 5], Variant::Shared, [3, 32, 32]);
    let mut model = MultiHeadModel::<f32>::new(spec, 0).unwrap();
    let x = Tensor::new(vec![7, 3, 32, 32], vec![0.5f32; 7 * 3 * 32 * 32]);
    let out = model.forward(&x, false).unwrap();
    assert_eq!(out.len(), 2);
    for o in &out {
        assert_eq!(o.shape, vec![7, 5]);
    }
    let bad = Tensor::new(vec![1, 3, 28, 28], vec![0.0f32; 3 * 28 * 28]);
    assert!(matches!(model.forward(&bad, false), Err(Error::Input(_))));
}

#[test]
fn resnet_backbone_shapes() {
    let mut backbone = BackboneSpec::new(BackboneKind::ResNet18Like);
    backbone.feature_dim = 16;
    let spec = ModelSpec::new(backbone, &[6, 6], Variant::Shared, [3, 32, 32]);
    let mut model = MultiHeadModel::<f32>::new(spec, 0).unwrap();
    let x = Tensor::new(vec![2, 3, 32, 32], vec![0.1f32; 2 * 3 * 32 * 32]);
    let out = model.forward(&x, false).unwrap();
    assert!(out.iter().all(|o| o.shape == vec![2, 6]));
}

#[test]
fn inference_is_deterministic() {
    let spec = tiny_spec(Variant::Shared);
    let x = random_input(3, [3, 16, 16], 9);
    let mut a = MultiHeadModel::<f64>::new(spec.clone(), 11).unwrap();
    let mut b = MultiHeadModel::<f64>::new(spec, 11).unwrap();
    let first = a.forward(&x, false).unwrap();
    assert_eq!(first, a.forward(&x, false).unwrap());
    assert_eq!(first, b.forward(&x, false).unwrap());
}

#[test]
fn best_epoch_is_the_earliest_minimum() {
    assert_eq!(select_best_epoch(&[2.0, 1.0, 1.5]), Some(2));
    assert_eq!(select_best_epoch(&[3.0, 1.0, 1.0]), Some(2));
    assert_eq!(select_best_epoch(&[]), None);
}

/// Two-attribute toy set: attribute 0 is the brightest channel, attribute 1
/// whether the top half is brighter than the bottom half.
fn toy_set(n: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [3, 16, 16];
    let mut set = ImageSet::new(shape);
    for _ in 0..n {
        let a = rng.random_range(0..3usize);
        let b = rng.random_range(0..2usize);
        let mut px = vec![0u8; 3 * 16 * 16];
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let base = if c == a { 180 } else { 40 };
                    let lift = if (y < 8) == (b == 0) { 60 } else { 0 };
                    px[(c * 16 + y) * 16 + x] = base + lift - rng.random_range(0..20u8);
                }
            }
        }
        set.push(&px, vec![a, b]).unwrap();
    }
    set
}

#[test]
fn single_epoch_selects_epoch_one() {
    let mut cfg = TrainConfig::new(1e-3, 0);
    cfg.max_epochs = 1;
    cfg.batch_size = 16;
    let (_, log) = train(&tiny_spec(Variant::Shared), &toy_set(40, 1), &toy_set(10, 2), &cfg, |_| {}).unwrap();
    assert_eq!(log.selected_epoch, 1);
    assert_eq!(log.epochs.len(), 1);
}

#[test]
fn training_learns_the_toy_task_and_is_reproducible() {
    let mut cfg = TrainConfig::new(3e-3, 4);
    cfg.max_epochs = 12;
    cfg.batch_size = 16;
    let spec = tiny_spec(Variant::Shared);
    let (tr, va) = (toy_set(96, 1), toy_set(32, 2));
    let mut seen = Vec::new();
    let (mut model, log) = train(&spec, &tr, &va, &cfg, |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, (1..=12).collect::<Vec<_>>());
    let first = &log.epochs[0];
    let best = &log.epochs[log.selected_epoch - 1];
    assert!(best.val_total() < first.val_total());
    assert!(log.epochs.iter().all(|e| e.val_total() >= best.val_total()));
    assert!(best.train_accuracy.iter().all(|&a| a > 0.8), "{:?}", best.train_accuracy);

    let (mut again, log2) = train(&spec, &tr, &va, &cfg, |_| {}).unwrap();
    assert_eq!(log.epochs, log2.epochs);
    let x = va.batch::<f32>(&[0, 1, 2]);
    assert_eq!(model.forward(&x, false).unwrap(), again.forward(&x, false).unwrap());

    let dir = tempfile::tempdir().unwrap();
    log.write_csv(&dir.path().join("log.csv")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss_1,train_loss_2,val_loss_1,val_loss_2"), "{csv}");
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn empty_partitions_are_a_training_error() {
    let cfg = TrainConfig::new(1e-3, 0);
    let empty = ImageSet::new([3, 16, 16]);
    match train(&tiny_spec(Variant::Shared), &toy_set(8, 1), &empty, &cfg, |_| {}) {
        Err(Error::Training(_)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training on an empty validation set succeeded"),
    }
}

#[test]
fn invalid_train_config_is_rejected() {
    let mut cfg = TrainConfig::new(0.0, 0);
    assert!(cfg.validate().is_err());
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 0;
    assert!(cfg.validate().is_err());
    assert_eq!(TrainConfig::new(1e-3, 0).max_epochs, 400);
    assert_eq!(TrainConfig::new(1e-3, 0).batch_size, 128);
}

#[test]
fn activations_have_one_row_per_sample_and_repeat() {
    let mut model = MultiHeadModel::<f32>::new(tiny_spec(Variant::Duplicated), 1).unwrap();
    let set = toy_set(13, 3);
    let a = extract_activations(&mut model, &set, 5).unwrap();
    assert_eq!(a.len(), 13);
    assert!(a.iter().all(|r| r.len() == 2 && r[0].len() == 3 && r[1].len() == 2));
    assert_eq!(a, extract_activations(&mut model, &set, 4).unwrap());
    let empty = extract_activations(&mut model, &ImageSet::new([3, 16, 16]), 5).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let mut cfg = TrainConfig::new(1e-3, 0);
    cfg.max_epochs = 2;
    cfg.batch_size = 16;
    let (mut model, log) = train(&tiny_spec(Variant::Shared), &toy_set(32, 1), &toy_set(8, 2), &cfg, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::from_model(&mut model, cfg.clone(), log.selected_epoch).save(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.selected_epoch, log.selected_epoch);
    assert_eq!(ckpt.train_config, cfg);
    let mut restored = ckpt.into_model().unwrap();
    let set = toy_set(6, 9);
    assert_eq!(
        extract_activations(&mut model, &set, 4).unwrap(),
        extract_activations(&mut restored, &set, 4).unwrap()
    );
}
