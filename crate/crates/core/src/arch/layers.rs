//! Parameterized building blocks. Each layer holds [`ParamId`]s into the
//! model's store and runs on a tape the store was bound to.

use crate::tensor::{Element, Tape, Tensor, TensorError, Var};

use super::params::{Init, ParamId, ParamStore};

/// Activation slope and normalization epsilon shared by every block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub slope: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            slope: 0.01,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            init.he_normal(&[cout, cin, kernel, kernel], cin * kernel * kernel),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b, kernel, stride }
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, x: Var) -> Result<Var, TensorError> {
        let (w, b) = (self.w.var(), Some(self.b.var()));
        if self.stride == 2 {
            tape.downsample_stride2(x, w, b)
        } else {
            tape.conv2d(x, w, b, self.stride, (self.kernel - 1) / 2)
        }
    }
}

/// 2×2 stride-2 transposed convolution.
#[derive(Debug, Clone)]
pub struct UpConv {
    pub w: ParamId,
    pub b: ParamId,
}

impl UpConv {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init.he_normal(&[cin, cout, 2, 2], cin));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b }
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, x: Var) -> Result<Var, TensorError> {
        tape.conv_transpose2d(x, self.w.var(), Some(self.b.var()))
    }
}

/// Affine parameters of a normalization layer (γ initialized to 1, β to 0).
#[derive(Debug, Clone)]
pub struct Affine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Affine {
    pub fn new<E: Element>(store: &mut ParamStore<E>, name: &str, c: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[c]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[c]));
        Self { gamma, beta }
    }

    pub fn instance_norm<E: Element>(&self, tape: &mut Tape<E>, x: Var, eps: f64) -> Result<Var, TensorError> {
        tape.instance_norm(x, self.gamma.var(), self.beta.var(), eps)
    }

    pub fn channel_layer_norm<E: Element>(
        &self,
        tape: &mut Tape<E>,
        x: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        tape.channel_layer_norm(x, self.gamma.var(), self.beta.var(), eps)
    }
}

/// Conv → InstanceNorm → LeakyReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Affine,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let conv = Conv::new(store, init, &format!("{name}.conv"), cin, cout, kernel, stride);
        let norm = Affine::new(store, &format!("{name}.norm"), cout);
        Self { conv, norm }
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, hy: Hyper, x: Var) -> Result<Var, TensorError> {
        let y = self.conv.forward(tape, x)?;
        let y = self.norm.instance_norm(tape, y, hy.eps)?;
        tape.leaky_relu(y, hy.slope)
    }
}

/// `n` 3×3 conv blocks; the first one maps `cin → cout` and carries the
/// stage's stride.
#[derive(Debug, Clone)]
pub struct Stage {
    pub blocks: Vec<ConvBlock>,
}

impl Stage {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        n_blocks: usize,
        stride: usize,
    ) -> Self {
        let blocks = (0..n_blocks)
            .map(|i| {
                let (ci, s) = if i == 0 { (cin, stride) } else { (cout, 1) };
                ConvBlock::new(store, init, &format!("{name}.b{i}"), ci, cout, 3, s)
            })
            .collect();
        Self { blocks }
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, hy: Hyper, mut x: Var) -> Result<Var, TensorError> {
        for b in &self.blocks {
            x = b.forward(tape, hy, x)?;
        }
        Ok(x)
    }
}
