//! Instance norm and layer norm as lane-wise standardization plus affine.

use super::tape::{GradSink, Op};
use super::{Element, Tape, Tensor, TensorError, Var};

/// How a tensor splits into standardization lanes.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Lanes {
    /// `[N,C,H,W]`, one lane per `(n,c)` over `H*W`; affine indexed by channel.
    Instance { c: usize, hw: usize },
    /// `[N,C,H,W]`, one lane per `(n,h,w)` over `C`; affine indexed by channel.
    Channel { c: usize, hw: usize },
    /// `[..., C]`, one lane per row over the last axis.
    Last { c: usize },
}

impl Lanes {
    fn lane_len(&self) -> usize {
        match *self {
            Lanes::Instance { hw, .. } => hw,
            Lanes::Channel { c, .. } | Lanes::Last { c } => c,
        }
    }

    #[inline]
    fn index(&self, lane: usize, i: usize) -> usize {
        match *self {
            Lanes::Instance { hw, .. } => lane * hw + i,
            Lanes::Channel { c, hw } => (lane / hw) * c * hw + i * hw + lane % hw,
            Lanes::Last { c } => lane * c + i,
        }
    }

    #[inline]
    fn affine(&self, lane: usize, i: usize) -> usize {
        match *self {
            Lanes::Instance { c, .. } => lane % c,
            Lanes::Channel { .. } | Lanes::Last { .. } => i,
        }
    }

    fn affine_len(&self) -> usize {
        match *self {
            Lanes::Instance { c, .. } | Lanes::Channel { c, .. } | Lanes::Last { c } => c,
        }
    }
}

pub(crate) struct NormCache<E> {
    xhat: Vec<E>,
    inv_std: Vec<E>,
}

impl<E: Element> Tape<E> {
    /// Per-`(n,c)` standardization over the spatial plane, then `γ_c·x̂ + β_c`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(TensorError::Rank {
                op: "instance_norm",
                expected: 4,
                shape: s.to_vec(),
            });
        }
        let lanes = Lanes::Instance { c: s[1], hw: s[2] * s[3] };
        self.standardize("instance_norm", x, gamma, beta, eps, lanes)
    }

    /// Standardization over the last axis, then per-feature affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.shape(x);
        let Some(&c) = s.last() else {
            return Err(TensorError::Rank {
                op: "layer_norm",
                expected: 1,
                shape: vec![],
            });
        };
        self.standardize("layer_norm", x, gamma, beta, eps, Lanes::Last { c })
    }

    /// Layer norm over the channel axis of an `[N,C,H,W]` map, i.e. per
    /// spatial token. Equal to `layer_norm` on the `[N*H*W, C]` token matrix.
    pub fn channel_layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(TensorError::Rank {
                op: "channel_layer_norm",
                expected: 4,
                shape: s.to_vec(),
            });
        }
        let lanes = Lanes::Channel { c: s[1], hw: s[2] * s[3] };
        self.standardize("channel_layer_norm", x, gamma, beta, eps, lanes)
    }

    fn standardize(
        &mut self,
        op: &'static str,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        lanes: Lanes,
    ) -> Result<Var, TensorError> {
        self.check(gamma)?;
        self.check(beta)?;
        let c = lanes.affine_len();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: vec![c],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let len = lanes.lane_len();
        if len == 0 {
            return Err(TensorError::InvalidArgument {
                op,
                reason: "empty normalization lane".into(),
            });
        }
        let xv = self.value(x);
        let n_lanes = xv.len() / len;
        let xd = xv.data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let eps = E::from_f64(eps);
        let inv_len = E::one() / E::from_f64(len as f64);
        let mut xhat = vec![E::zero(); xv.len()];
        let mut out = vec![E::zero(); xv.len()];
        let mut inv_std = vec![E::zero(); n_lanes];
        for lane in 0..n_lanes {
            let mut mean = E::zero();
            for i in 0..len {
                mean = mean + xd[lanes.index(lane, i)];
            }
            mean = mean * inv_len;
            let mut var = E::zero();
            for i in 0..len {
                let d = xd[lanes.index(lane, i)] - mean;
                var = var + d * d;
            }
            var = var * inv_len;
            let is = E::one() / (var + eps).sqrt();
            inv_std[lane] = is;
            for i in 0..len {
                let idx = lanes.index(lane, i);
                let a = lanes.affine(lane, i);
                let xh = (xd[idx] - mean) * is;
                xhat[idx] = xh;
                out[idx] = gd[a] * xh + bd[a];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            op,
            value,
            Op::Norm {
                x,
                gamma,
                beta,
                layout: lanes,
                cache: NormCache { xhat, inv_std },
            },
            &[x, gamma, beta],
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_backward<E: Element>(
    x: Var,
    gamma: Var,
    gamma_v: &Tensor<E>,
    beta: Var,
    lanes: &Lanes,
    cache: &NormCache<E>,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let gd = g.data();
    let xhat = &cache.xhat;
    if let Some(dg) = sink.buf(gamma) {
        for (lane, _) in cache.inv_std.iter().enumerate() {
            for i in 0..lanes.lane_len() {
                let idx = lanes.index(lane, i);
                let a = lanes.affine(lane, i);
                dg[a] = dg[a] + gd[idx] * xhat[idx];
            }
        }
    }
    if let Some(db) = sink.buf(beta) {
        for lane in 0..cache.inv_std.len() {
            for i in 0..lanes.lane_len() {
                let idx = lanes.index(lane, i);
                let a = lanes.affine(lane, i);
                db[a] = db[a] + gd[idx];
            }
        }
    }
    let Some(dx) = sink.buf(x) else {
        return;
    };
    let gam = gamma_v.data();
    let len = lanes.lane_len();
    let inv_len = E::one() / E::from_f64(len as f64);
    let mut dxhat = vec![E::zero(); len];
    for (lane, &is) in cache.inv_std.iter().enumerate() {
        let mut m1 = E::zero();
        let mut m2 = E::zero();
        for (i, d) in dxhat.iter_mut().enumerate() {
            let idx = lanes.index(lane, i);
            *d = gd[idx] * gam[lanes.affine(lane, i)];
            m1 = m1 + *d;
            m2 = m2 + *d * xhat[idx];
        }
        m1 = m1 * inv_len;
        m2 = m2 * inv_len;
        for (i, &d) in dxhat.iter().enumerate() {
            let idx = lanes.index(lane, i);
            dx[idx] = dx[idx] + is * (d - m1 - xhat[idx] * m2);
        }
    }
}
