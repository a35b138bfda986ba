//! Central finite-difference verification of tape gradients (f64 only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError, Var};

/// Relative step: `h = STEP * max(1, |x|)`.
pub const STEP: f64 = 1e-5;

/// Relative errors are taken against `max(|analytic|, |numeric|, FLOOR)` so
/// vanishing gradient entries are compared in absolute terms.
pub const FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Graph builder: maps leaf handles (one per input, in order) to a scalar.
pub trait Graph: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError> {}
impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>> Graph for F {}

fn eval(inputs: &[Tensor<f64>], f: &impl Graph) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(TensorError::NotScalar(tape.shape(out).to_vec()));
    }
    Ok(tape.value(out).item())
}

/// Gradients from the reverse pass; inputs that do not reach the output get zeros.
pub fn analytic_gradient(inputs: &[Tensor<f64>], f: &impl Graph) -> Result<Vec<Tensor<f64>>, TensorError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Coordinates of each input that get perturbed. `limit` caps the count per
/// input with an evenly strided subset.
fn coords(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Central differences at the selected coordinates; unselected entries are NaN.
pub fn numeric_gradient(
    inputs: &[Tensor<f64>],
    f: &impl Graph,
    limit: Option<usize>,
) -> Result<Vec<Tensor<f64>>, TensorError> {
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::full(inputs[k].shape(), f64::NAN);
        for i in coords(inputs[k].len(), limit) {
            let x0 = inputs[k].data()[i];
            let h = STEP * x0.abs().max(1.0);
            work[k].data_mut()[i] = x0 + h;
            let fp = eval(&work, f)?;
            work[k].data_mut()[i] = x0 - h;
            let fm = eval(&work, f)?;
            work[k].data_mut()[i] = x0;
            g.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest entrywise relative error over the coordinates where `numeric` is set.
pub fn max_relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            if nv.is_nan() {
                continue;
            }
            count += 1;
            let err = (av - nv).abs() / av.abs().max(nv.abs()).max(FLOOR);
            worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        }
    }
    (worst, count)
}

pub fn grad_check(
    name: &str,
    inputs: &[Tensor<f64>],
    tol: f64,
    limit: Option<usize>,
    f: impl Graph,
) -> Result<GradCheckReport, TensorError> {
    let analytic = analytic_gradient(inputs, &f)?;
    let numeric = numeric_gradient(inputs, &f, limit)?;
    let (max_rel_err, checked) = max_relative_error(&analytic, &numeric);
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_err,
        tol,
        checked,
    })
}

/// Uniform values in `[-scale, scale]`, nudged away from zero by `gap` so
/// kinks at the origin are never straddled by a finite-difference step.
pub fn random_tensor(shape: &[usize], seed: u64, scale: f64, gap: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(-scale..scale);
        if v.abs() < gap {
            v.signum() * gap + v
        } else {
            v
        }
    })
}

/// Reduces any output to a scalar via a fixed random weighting, so every
/// Jacobian row contributes to the checked gradient.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let w = random_tensor(tape.shape(y), seed ^ 0x9e37_79b9, 1.0, 0.0);
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

/// Finite-difference checks of every differentiable primitive on random f64
/// inputs.
pub fn primitive_suite(tol: f64) -> Result<Vec<GradCheckReport>, TensorError> {
    let r = random_tensor;
    let mut out = Vec::new();
    out.push(grad_check(
        "conv2d 3x3 pad1",
        &[r(&[1, 2, 5, 5], 1, 1.0, 0.0), r(&[3, 2, 3, 3], 2, 1.0, 0.0), r(&[3], 3, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            project(t, y, 10)
        },
    )?);
    out.push(grad_check(
        "conv2d 1x1",
        &[r(&[2, 3, 4, 4], 4, 1.0, 0.0), r(&[2, 3, 1, 1], 5, 1.0, 0.0), r(&[2], 6, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
            project(t, y, 11)
        },
    )?);
    out.push(grad_check(
        "downsample_stride2",
        &[r(&[1, 2, 7, 6], 7, 1.0, 0.0), r(&[3, 2, 3, 3], 8, 1.0, 0.0), r(&[3], 9, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.downsample_stride2(v[0], v[1], Some(v[2]))?;
            project(t, y, 12)
        },
    )?);
    out.push(grad_check(
        "conv_transpose2d",
        &[r(&[2, 3, 3, 2], 13, 1.0, 0.0), r(&[3, 2, 2, 2], 14, 1.0, 0.0), r(&[2], 15, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], Some(v[2]))?;
            project(t, y, 16)
        },
    )?);
    out.push(grad_check(
        "instance_norm",
        &[r(&[1, 2, 4, 4], 17, 2.0, 0.0), r(&[2], 18, 1.5, 0.0), r(&[2], 19, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.instance_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, y, 20)
        },
    )?);
    out.push(grad_check(
        "layer_norm",
        &[r(&[5, 6], 21, 2.0, 0.0), r(&[6], 22, 1.5, 0.0), r(&[6], 23, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, y, 24)
        },
    )?);
    out.push(grad_check(
        "channel_layer_norm",
        &[r(&[2, 4, 2, 3], 25, 2.0, 0.0), r(&[4], 26, 1.5, 0.0), r(&[4], 27, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.channel_layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, y, 28)
        },
    )?);
    out.push(grad_check("leaky_relu", &[r(&[3, 7], 29, 1.0, 0.05)], tol, None, |t, v| {
        let y = t.leaky_relu(v[0], 0.01)?;
        project(t, y, 30)
    })?);
    out.push(grad_check("sigmoid", &[r(&[3, 7], 31, 3.0, 0.0)], tol, None, |t, v| {
        let y = t.sigmoid(v[0])?;
        project(t, y, 32)
    })?);
    out.push(grad_check("softmax", &[r(&[4, 5], 33, 2.0, 0.0)], tol, None, |t, v| {
        let y = t.softmax(v[0])?;
        project(t, y, 34)
    })?);
    out.push(grad_check(
        "matmul batched",
        &[r(&[2, 3, 4], 35, 1.0, 0.0), r(&[2, 4, 5], 36, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 37)
        },
    )?);
    out.push(grad_check("transpose", &[r(&[2, 3, 4], 38, 1.0, 0.0)], tol, None, |t, v| {
        let y = t.transpose(v[0])?;
        project(t, y, 39)
    })?);
    out.push(grad_check(
        "concat",
        &[r(&[2, 1, 2, 3], 40, 1.0, 0.0), r(&[2, 3, 2, 3], 41, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            project(t, y, 42)
        },
    )?);
    out.push(grad_check(
        "add/mul/scale",
        &[r(&[3, 4], 43, 1.0, 0.0), r(&[3, 4], 44, 1.0, 0.0)],
        tol,
        None,
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let m = t.mul(s, v[0])?;
            let y = t.scale(m, -1.7)?;
            project(t, y, 45)
        },
    )?);
    out.push(grad_check("mean", &[r(&[3, 4], 46, 1.0, 0.0)], tol, None, |t, v| {
        let sq = t.mul(v[0], v[0])?;
        t.mean(sq)
    })?);
    out.push(grad_check("heads", &[r(&[2, 6, 2, 2], 47, 1.0, 0.0)], tol, None, |t, v| {
        let h = t.to_heads(v[0], 3)?;
        let h2 = t.mul(h, h)?;
        let y = t.from_heads(h2, 3, 2, 2)?;
        project(t, y, 48)
    })?);
    let target = Tensor::from_fn(&[2, 3, 4], |i| ((i * 7 + 3) % 5 < 2) as u8 as f64);
    let tgt = target.clone();
    out.push(grad_check("dice_loss", &[r(&[2, 2, 3, 4], 49, 2.0, 0.0)], tol, None, move |t, v| {
        t.dice_loss(v[0], &tgt, 1e-5)
    })?);
    out.push(grad_check("cross_entropy", &[r(&[2, 2, 3, 4], 50, 2.0, 0.0)], tol, None, move |t, v| {
        t.cross_entropy(v[0], &target)
    })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_graph_is_exact_to_rounding() {
        let x = random_tensor(&[4, 3], 1, 1.0, 0.0);
        let rep = grad_check("linear", &[x], 1e-9, None, |t, v| {
            let y = t.scale(v[0], 3.0)?;
            t.sum(y)
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-9, "{rep:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let x = random_tensor(&[3, 3], 2, 1.0, 0.0);
        let f = |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        };
        let inputs = [x];
        let mut analytic = analytic_gradient(&inputs, &f).unwrap();
        let numeric = numeric_gradient(&inputs, &f, None).unwrap();
        assert!(max_relative_error(&analytic, &numeric).0 < 1e-6);
        analytic[0].data_mut()[4] += 0.1;
        assert!(max_relative_error(&analytic, &numeric).0 > 1e-3);
    }

    #[test]
    fn coordinate_subset_is_spread() {
        assert_eq!(coords(10, Some(3)), vec![0, 3, 6]);
        assert_eq!(coords(2, Some(3)), vec![0, 1]);
    }

    #[test]
    fn every_primitive_passes() {
        for rep in primitive_suite(1e-6).unwrap() {
            assert!(rep.passed(), "{rep:?}");
        }
    }
}
