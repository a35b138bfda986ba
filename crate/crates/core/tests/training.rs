use proptest::prelude::*;
use qpmseg::arch::{FusionOp, Model, ModelConfig};
use qpmseg::data::{fit_norm_stats, synth, Sample, SynthConfig};
use qpmseg::train::*;
use qpmseg::{DType, Error, Tape, Tensor};

fn tiny_model(op: FusionOp) -> ModelConfig {
    ModelConfig {
        n_stages: 3,
        widths: vec![4, 8, 8],
        blocks_per_stage: 1,
        mha_heads: 2,
        ..ModelConfig::default()
    }
    .with_fusion(op, 1)
}

fn normalized_set(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let raw = synth::generate(&SynthConfig {
        n,
        height: size,
        width: size,
        phase_snr: 2.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let st = fit_norm_stats(&raw).unwrap();
    raw.iter().map(|s| st.normalize(s).unwrap()).collect()
}

fn quick(epochs: usize, dtype: DType) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        patch_size: 16,
        dtype,
        ..TrainConfig::default()
    }
}

#[test]
fn deep_supervision_weights() {
    let w = ds_weights(&[0, 1, 2, 3]);
    let expect = [8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0];
    for (a, b) in w.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert_eq!(ds_weights(&[0]), vec![1.0]);
}

#[test]
fn target_downsampling_is_nearest_and_binary() {
    let t = Tensor::<f64>::from_fn(&[1, 4, 4], |i| ((i / 4 + i % 4) % 2) as f64);
    let d = downsample_target(&t, 1);
    assert_eq!(d.shape(), &[1, 2, 2]);
    assert_eq!(d.data(), &[0.0, 0.0, 0.0, 0.0]);
    let d = downsample_target(&Tensor::<f64>::from_fn(&[1, 4, 4], |i| (i % 4) as f64), 2);
    assert_eq!(d.data(), &[0.0]);
    assert_eq!(downsample_target(&t, 0), t);
}

fn logits(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-3.0..3.0))
}

fn target(shape: &[usize], seed: u64) -> Tensor<f64> {
    logits(shape, seed).map(|v| if v > 0.5 { 1.0 } else { 0.0 })
}

#[test]
fn single_head_is_dice_plus_ce() {
    let t = target(&[2, 8, 8], 1);
    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(logits(&[2, 2, 8, 8], 2), true);
    let parts = deep_sup_loss(&mut tape, &[(0, l)], &t, 1e-5).unwrap();
    let d = tape.dice_loss(l, &t, 1e-5).unwrap();
    let c = tape.cross_entropy(l, &t).unwrap();
    let expect = tape.value(d).item() + tape.value(c).item();
    assert_eq!(tape.value(parts.total).item(), expect);
    assert_eq!(parts.dice, tape.value(d).item());
    assert!(deep_sup_loss(&mut tape, &[], &t, 1e-5).is_err());
}

#[test]
fn removing_lowest_weight_head_is_bounded_by_its_term() {
    let t = target(&[1, 16, 16], 3);
    let mut tape = Tape::<f64>::new();
    let heads: Vec<(usize, _)> = (0..4)
        .map(|s| (s, tape.leaf(logits(&[1, 2, 16 >> s, 16 >> s], 10 + s as u64), false)))
        .collect();
    let full = deep_sup_loss(&mut tape, &heads, &t, 1e-5).unwrap();
    let full = tape.value(full.total).item();

    // Recompute each head's term by hand.
    let w = ds_weights(&[0, 1, 2, 3]);
    let mut terms = Vec::new();
    for &(s, l) in &heads {
        let ts = downsample_target(&t, s);
        let d = tape.dice_loss(l, &ts, 1e-5).unwrap();
        let c = tape.cross_entropy(l, &ts).unwrap();
        terms.push(tape.value(d).item() + tape.value(c).item());
    }
    let kept: f64 = (0..3).map(|i| w[i] * terms[i]).sum();
    assert!((full - kept - w[3] * terms[3]).abs() < 1e-12);
    assert!((full - kept).abs() <= w[3] * terms[3] + 1e-12);

    // With the remaining weights renormalized the change is w₃·(l₃ − L').
    let rest = deep_sup_loss(&mut tape, &heads[..3], &t, 1e-5).unwrap();
    let rest = tape.value(rest.total).item();
    assert!((full - rest - w[3] * (terms[3] - rest)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn loss_ranges(seed in 0u64..10_000) {
        let t = target(&[2, 4, 4], seed);
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(logits(&[2, 2, 4, 4], seed + 1), false);
        let d = tape.dice_loss(l, &t, 1e-5).unwrap();
        let c = tape.cross_entropy(l, &t).unwrap();
        let d = tape.value(d).item();
        prop_assert!((0.0..=1.0 + 1e-5).contains(&d));
        prop_assert!(tape.value(c).item() >= 0.0);
    }
}

#[test]
fn poly_schedule() {
    assert_eq!(poly_lr(0, 50, 0.01, 0.9), 0.01);
    assert_eq!(poly_lr(50, 50, 0.01, 0.9), 0.0);
    let mid = 0.01 * f64::exp(0.9 * f64::ln(0.5));
    assert!((poly_lr(25, 50, 0.01, 0.9) - mid).abs() < 1e-17);
    assert!(poly_lr(10, 50, 0.01, 0.9) > poly_lr(11, 50, 0.01, 0.9));
}

#[test]
fn nesterov_matches_hand_recursion_on_quadratic() {
    // f(p) = p², g = 2p, lr 0.1, μ 0.9, p₀ = 1:
    // v₁ = 2,    p₁ = 1 − 0.1·(2 + 1.8) = 0.62
    // v₂ = 3.04, p₂ = 0.62 − 0.1·(1.24 + 2.736) = 0.2224
    let mut p = vec![Tensor::<f64>::scalar(1.0)];
    let mut v = vec![Tensor::<f64>::scalar(0.0)];
    for expect in [0.62, 0.2224] {
        let g = vec![Tensor::scalar(2.0 * p[0].item())];
        sgd_nesterov_step(&mut p, &g, &mut v, 0.1, 0.9);
        assert!((p[0].item() - expect).abs() < 1e-15);
    }
    assert!((v[0].item() - 3.04).abs() < 1e-15);
}

#[test]
fn nesterov_degenerate_cases() {
    let p0 = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
    let g = Tensor::<f64>::from_f64(&[3], &[0.3, 0.1, -0.2]).unwrap();
    let mut p = vec![p0.clone()];
    let mut v = vec![Tensor::zeros(&[3])];
    sgd_nesterov_step(&mut p, &[Tensor::zeros(&[3])], &mut v, 0.1, 0.9);
    assert_eq!(p[0], p0);
    for _ in 0..3 {
        sgd_nesterov_step(&mut p, std::slice::from_ref(&g), &mut v, 0.1, 0.0);
    }
    for i in 0..3 {
        let vanilla = p0.data()[i] - 0.1 * g.data()[i] - 0.1 * g.data()[i] - 0.1 * g.data()[i];
        assert!((p[0].data()[i] - vanilla).abs() < 1e-15);
    }
}

#[test]
fn clipping_rescales_to_max_norm() {
    let mut g = vec![Tensor::<f64>::from_f64(&[2], &[30.0, 40.0]).unwrap(), Tensor::scalar(0.0)];
    assert_eq!(clip_grad_norm(&mut g, 12.0), 50.0);
    assert!((grad_norm(&g) - 12.0).abs() < 1e-6);
    let mut small = vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()];
    clip_grad_norm(&mut small, 12.0);
    assert_eq!(small[0].data(), &[3.0, 4.0]);
}

#[test]
fn train_config_contract() {
    let c = TrainConfig::default();
    assert_eq!((c.lr0, c.momentum, c.poly_exponent, c.epochs), (0.01, 0.99, 0.9, 50));
    let back = TrainConfig::from_kv(&c.to_kv()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    assert_ne!(TrainConfig { seed: 1, ..c.clone() }.hash(), c.hash());
    assert!(TrainConfig { epochs: 0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { lr0: -1.0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { patch_size: 24, ..c.clone() }.validate_for(16).is_err());
    let mut kv = c.to_kv();
    kv.insert("warmup", 3);
    assert!(TrainConfig::from_kv(&kv).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = normalized_set(4, 16, 0);
    let mut m = Model::<f64>::build(&tiny_model(FusionOp::Mha)).unwrap();
    let before: Vec<Tensor<f64>> = m.params().iter().map(|(_, t)| t.clone()).collect();
    train(&mut m, &data, &TrainConfig { lr0: 0.0, ..quick(1, DType::F64) }, None).unwrap();
    for ((name, t), b) in m.params().iter().zip(&before) {
        assert_eq!(t, b, "{name}");
    }
}

#[test]
fn loss_decreases_over_first_ten_epochs() {
    let data = normalized_set(8, 32, 1);
    let mut m = Model::<f32>::build(&tiny_model(FusionOp::Mha)).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 4,
        patch_size: 32,
        augment: false,
        ..TrainConfig::default()
    };
    let out = train(&mut m, &data, &cfg, None).unwrap();
    let loss: Vec<f64> = out.history.iter().map(|r| r.loss_total).collect();
    let smooth: Vec<f64> = loss.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] < w[0], "{loss:?}");
    }
}

#[test]
fn f64_history_is_bitwise_reproducible_and_written() {
    let data = normalized_set(4, 16, 2);
    let cfg = quick(3, DType::F64);
    let run = |dir: &std::path::Path| {
        let mut m = Model::<f64>::build(&tiny_model(FusionOp::CrossGate)).unwrap();
        train(&mut m, &data, &cfg, Some(dir)).unwrap()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a, b) = (run(d1.path()), run(d2.path()));
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), 3);
    let csv = std::fs::read_to_string(d1.path().join(HISTORY)).unwrap();
    assert_eq!(csv, std::fs::read_to_string(d2.path().join(HISTORY)).unwrap());
    assert_eq!(csv.lines().next().unwrap(), HISTORY_HEADER);
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv, history_csv(&a.history));
    for sub in ["best", "final"] {
        assert!(d1.path().join(sub).join(qpmseg::arch::MANIFEST).is_file());
    }
    let (_, meta) = qpmseg::arch::load_checkpoint::<f64>(&d1.path().join("best")).unwrap();
    assert_eq!(meta.get("epoch").unwrap(), a.best_epoch.to_string());
    assert_eq!(meta.get("train_config_hash").unwrap(), cfg.hash());
    let best = a.history.iter().map(|r| r.train_dice).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_train_dice, best);
}

#[test]
fn non_finite_input_aborts_with_divergence() {
    let mut data = normalized_set(2, 16, 3);
    data[0].phase.data_mut()[5] = f32::NAN;
    let mut m = Model::<f32>::build(&tiny_model(FusionOp::Mha)).unwrap();
    let err = train(&mut m, &data, &TrainConfig { augment: false, ..quick(1, DType::F32) }, None).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn rejects_bad_training_inputs() {
    let data = normalized_set(2, 16, 4);
    let mut m = Model::<f32>::build(&tiny_model(FusionOp::Mha)).unwrap();
    assert!(train(&mut m, &[], &quick(1, DType::F32), None).is_err());
    assert!(train(&mut m, &data, &TrainConfig { patch_size: 32, ..quick(1, DType::F32) }, None).is_err());
    assert!(train(&mut m, &data, &TrainConfig { patch_size: 6, ..quick(1, DType::F32) }, None).is_err());
}
