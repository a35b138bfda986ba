//! Benchmark fixtures; the benches live in `benches/`.

use qpmseg::arch::ModelConfig;
use qpmseg::Tensor;

/// Deterministic pseudo-random inputs without an RNG dependency.
pub fn ramp(shape: &[usize], salt: usize) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| (((i * 7919 + salt * 104_729) % 1000) as f32 / 500.0) - 1.0)
}

/// Angle and phase batches shaped for `cfg`.
pub fn model_inputs(cfg: &ModelConfig, n: usize, side: usize) -> (Tensor<f32>, Tensor<f32>) {
    (
        ramp(&[n, cfg.angle_channels(), side, side], 1),
        ramp(&[n, 1, side, side], 2),
    )
}
