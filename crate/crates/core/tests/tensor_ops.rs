use proptest::prelude::*;
use qpmseg::tensor::gradcheck::{grad_check, random_tensor};
use qpmseg::{Tape, Tensor, TensorError};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

#[test]
fn conv2d_of_ones_sums_window() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::ones(&[1, 1, 3, 3]), false);
    let w = tape.leaf(Tensor::ones(&[1, 1, 2, 2]), false);
    let b = tape.leaf(Tensor::zeros(&[1]), false);
    let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
    assert!(tape.value(y).data().iter().all(|&v| v == 4.0));
}

#[test]
fn conv2d_identity_kernel_is_bitwise_identity() {
    let x = random_tensor(&[2, 1, 5, 7], 3, 10.0, 0.0);
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), false);
    let w = tape.leaf(Tensor::ones(&[1, 1, 1, 1]), false);
    let y = tape.conv2d(xv, w, None, 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv2d_shape_and_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 2, 5, 5]), false);
    let w = tape.leaf(Tensor::zeros(&[3, 2, 3, 3]), false);
    let y = tape.conv2d(x, w, None, 2, 1).unwrap();
    // floor((5 + 2 - 3)/2) + 1 = 3
    assert_eq!(tape.shape(y), &[1, 3, 3, 3]);
    let bad = tape.leaf(Tensor::zeros(&[3, 4, 3, 3]), false);
    assert!(matches!(tape.conv2d(x, bad, None, 1, 1), Err(TensorError::ChannelMismatch { .. })));
    let big = tape.leaf(Tensor::zeros(&[3, 2, 3, 3]), false);
    let tiny = tape.leaf(Tensor::zeros(&[1, 2, 2, 2]), false);
    assert!(tape.conv2d(tiny, big, None, 1, 0).is_err());
}

#[test]
fn conv_transpose_broadcasts_single_pixel_and_doubles() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1, 1, 1, 1], &[2.5]), false);
    let w = tape.leaf(Tensor::ones(&[1, 1, 2, 2]), false);
    let y = tape.conv_transpose2d(x, w, None).unwrap();
    assert_eq!(tape.value(y).data(), &[2.5; 4]);

    let x = tape.leaf(Tensor::zeros(&[1, 8, 16, 16]), false);
    let w = tape.leaf(Tensor::zeros(&[8, 5, 2, 2]), false);
    let y = tape.conv_transpose2d(x, w, None).unwrap();
    assert_eq!(tape.shape(y), &[1, 5, 32, 32]);
    let wrong = tape.leaf(Tensor::zeros(&[4, 5, 2, 2]), false);
    assert!(tape.conv_transpose2d(x, wrong, None).is_err());
}

#[test]
fn downsample_halves_with_floor() {
    let mut tape = Tape::<f64>::new();
    let w = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]), false);
    for (n, want) in [(64, 32), (63, 31), (2, 1)] {
        let x = tape.leaf(Tensor::zeros(&[1, 1, n, n]), false);
        let y = tape.downsample_stride2(x, w, None).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, want, want]);
    }
    let x = tape.leaf(Tensor::zeros(&[1, 1, 1, 4]), false);
    assert!(tape.downsample_stride2(x, w, None).is_err());
}

#[test]
fn leaky_relu_values_and_negative_slope_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[5.0, -2.0]), false);
    let out = tape.leaky_relu(x, 0.01).unwrap();
    assert_eq!(tape.value(out).data(), &[5.0, -0.02]);

    // Finite differences on the negative side recover the slope.
    let x0 = t(&[1], &[-0.7]);
    let r = grad_check("leaky", &[x0.clone()], 1e-9, None, |t, v| {
        let y = t.leaky_relu(v[0], 0.01)?;
        t.sum(y)
    })
    .unwrap();
    assert!(r.passed());
    let g = qpmseg::tensor::gradcheck::numeric_gradient(
        &[x0],
        &|t: &mut Tape<f64>, v: &[qpmseg::Var]| {
            let y = t.leaky_relu(v[0], 0.01)?;
            t.sum(y)
        },
        None,
    )
    .unwrap();
    assert!((g[0].item() - 0.01).abs() < 1e-9);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[3], &[0.0, 0.0, 0.0]), false);
    let y = tape.softmax(x).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.leaf(t(&[2], &[2f64.ln(), 0.0]), false);
    let y = tape.softmax(x).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 3.0).abs() < 1e-15);
    // Large logits stay finite.
    let x = tape.leaf(t(&[2], &[1000.0, 999.0]), false);
    let y = tape.softmax(x).unwrap();
    assert!(tape.value(y).is_finite());
}

#[test]
fn composition_primitives_algebra_and_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(random_tensor(&[2, 3], 1, 1.0, 0.0), false);
    let z = tape.leaf(Tensor::zeros(&[2, 3]), false);
    let one = tape.leaf(Tensor::ones(&[2, 3]), false);
    let eye = tape.leaf(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]), false);
    let s = tape.add(a, z).unwrap();
    assert_eq!(tape.value(s), tape.value(a));
    let m = tape.mul(a, one).unwrap();
    assert_eq!(tape.value(m), tape.value(a));
    let sc = tape.scale(a, 1.0).unwrap();
    assert_eq!(tape.value(sc), tape.value(a));
    let mm = tape.matmul(a, eye).unwrap();
    assert_eq!(tape.value(mm), tape.value(a));
    let c = tape.concat(&[a, z], 0).unwrap();
    assert_eq!(tape.shape(c), &[4, 3]);
    let c1 = tape.concat(&[a, z], 1).unwrap();
    assert_eq!(tape.shape(c1), &[2, 6]);
    let sg = tape.sigmoid(z).unwrap();
    assert!(tape.value(sg).data().iter().all(|&v| v == 0.5));
    let b = tape.leaf(Tensor::zeros(&[3, 2]), false);
    assert!(matches!(tape.add(a, b), Err(TensorError::ShapeMismatch { .. })));
    assert!(tape.matmul(a, a).is_err());
}

#[test]
fn backward_examples_and_errors() {
    let x0 = random_tensor(&[2, 3], 4, 2.0, 0.0);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0.clone(), true);
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(matches!(tape.backward(s), Err(TensorError::BackwardTwice)));
    tape.reset_grads();
    tape.backward(s).unwrap();

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0.clone(), true);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    let half = tape.scale(s, 0.5).unwrap();
    assert!(matches!(tape.backward(sq), Err(TensorError::NotScalar(_))));
    tape.backward(half).unwrap();
    let g = tape.grad(x).unwrap();
    for (a, b) in g.data().iter().zip(x0.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn non_finite_values_are_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1], &[f64::MAX]), false);
    assert!(matches!(tape.scale(x, 10.0), Err(TensorError::NonFinite { .. })));
}

#[test]
fn gradcheck_flags_corrupted_gradient() {
    // The graph's value uses x³ but the recorded derivative is that of x²:
    // built from a detached copy so the tape never sees the true dependency.
    let x0 = t(&[3], &[0.5, -1.2, 2.0]);
    let graph = |t: &mut Tape<f64>, v: &[qpmseg::Var]| {
        let sq = t.mul(v[0], v[0])?;
        let copy = t.value(v[0]).clone();
        let detached = t.constant(copy);
        let cube = t.mul(sq, detached)?;
        t.sum(cube)
    };
    let r = grad_check("corrupted", &[x0], 1e-6, None, graph).unwrap();
    assert!(!r.passed(), "{r:?}");
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_are_positive(seed in 0u64..1000, rows in 1usize..5, k in 1usize..9, scale in 0.1f64..30.0) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(random_tensor(&[rows, k], seed, scale, 0.0), false);
        let y = tape.softmax(x).unwrap();
        for r in tape.value(y).data().chunks(k) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(r.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn norms_standardize_lanes(seed in 0u64..1000, c in 1usize..4, h in 2usize..6, w in 2usize..6, shift in -5.0f64..5.0) {
        let x0 = random_tensor(&[2, c, h, w], seed, 3.0, 0.0).map(|v| v + shift);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone(), false);
        let g = tape.leaf(Tensor::ones(&[c]), false);
        let b = tape.leaf(Tensor::zeros(&[c]), false);
        let y = tape.instance_norm(x, g, b, 1e-5).unwrap();
        // Output variance is exactly σ²/(σ²+ε) of the input lane.
        for (lane, src) in tape.value(y).data().chunks(h * w).zip(x0.data().chunks(h * w)) {
            let (mean, var) = moments(lane);
            let (_, v_in) = moments(src);
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var - v_in / (v_in + 1e-5)).abs() <= 1e-9);
        }
        let r0 = random_tensor(&[5, 6], seed + 1, 3.0, 0.0);
        let rows = tape.leaf(r0.clone(), false);
        let g = tape.leaf(Tensor::ones(&[6]), false);
        let b = tape.leaf(Tensor::zeros(&[6]), false);
        let z = tape.layer_norm(rows, g, b, 1e-5).unwrap();
        for (row, src) in tape.value(z).data().chunks(6).zip(r0.data().chunks(6)) {
            let (mean, var) = moments(row);
            let (_, v_in) = moments(src);
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var - v_in / (v_in + 1e-5)).abs() <= 1e-9);
        }
    }

    #[test]
    fn serial_execution_is_bit_reproducible(seed in 0u64..200) {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(random_tensor(&[1, 2, 6, 6], seed, 1.0, 0.0).cast(), true);
            let w = tape.leaf(random_tensor(&[3, 2, 3, 3], seed + 1, 1.0, 0.0).cast(), true);
            let y = tape.conv2d(x, w, None, 1, 1).unwrap();
            let y = tape.leaky_relu(y, 0.01).unwrap();
            let s = tape.mean(y).unwrap();
            tape.backward(s).unwrap();
            (tape.value(y).clone(), tape.grad(w).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }
}
