use crate::tensor::{Element, Tensor};

/// `lr0 · (1 − epoch/epochs)^exponent`.
pub fn poly_lr(epoch: usize, epochs: usize, lr0: f64, exponent: f64) -> f64 {
    let frac = (epoch as f64 / epochs as f64).min(1.0);
    lr0 * (1.0 - frac).powf(exponent)
}

/// Nesterov SGD in the common framework form:
/// `v ← μv + g`, `p ← p − lr·(g + μv)`.
pub fn sgd_nesterov_step<E: Element>(
    params: &mut [Tensor<E>],
    grads: &[Tensor<E>],
    velocity: &mut [Tensor<E>],
    lr: f64,
    momentum: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), velocity.len());
    let (lr, mu) = (E::from_f64(lr), E::from_f64(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = mu * *v + g;
            *p = *p - lr * (g + mu * *v);
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<E: Element>(grads: &[Tensor<E>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter().map(|&v| v.to_f64() * v.to_f64()))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<E: Element>(grads: &mut [Tensor<E>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = E::from_f64(max_norm / (norm + 1e-6));
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_bounds_norm() {
        let mut g = vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        clip_grad_norm(&mut g, 1.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-6);
    }
}
