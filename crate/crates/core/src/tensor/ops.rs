//! Elementwise, reduction, layout and linear-algebra ops.
//!
//! Shapes must match exactly; there is no implicit broadcasting.

use super::tape::{GradSink, Op};
use super::{Element, Tape, Tensor, TensorError, Var};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), TensorError> {
    if a == b {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// `(batch, m, n)` view of a rank-2 or rank-3 tensor.
fn mat_dims(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize), TensorError> {
    match *s {
        [m, n] => Ok((1, m, n)),
        [b, m, n] => Ok((b, m, n)),
        _ => Err(TensorError::Rank {
            op,
            expected: 3,
            shape: s.to_vec(),
        }),
    }
}

pub(crate) fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

impl<E: Element> Tape<E> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        same_shape("add", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        same_shape("mul", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul { a, b }, &[a, b])
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.check(x)?;
        let c = E::from_f64(c);
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale { x, c }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                reason: "empty tensor".into(),
            });
        }
        let value = Tensor::scalar(xv.sum() / E::from_f64(xv.len() as f64));
        self.push("mean", value, Op::Mean { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.check(x)?;
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape { x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        self.check(x)?;
        let slope = E::from_f64(slope);
        let value = self
            .value(x)
            .map(|v| if v >= E::zero() { v } else { v * slope });
        self.push("leaky_relu", value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let value = self.value(x).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid { x }, &[x])
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let xv = self.value(x);
        let Some(&k) = xv.shape().last() else {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: 1,
                shape: vec![],
            });
        };
        let mut out = xv.data().to_vec();
        if k > 0 {
            for row in out.chunks_mut(k) {
                let m = row.iter().copied().fold(E::neg_infinity(), E::max);
                let mut s = E::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s = s + *v;
                }
                row.iter_mut().for_each(|v| *v = *v / s);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax { x }, &[x])
    }

    /// `[M,K]×[K,N]` or batched `[B,M,K]×[B,K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        const OP: &str = "matmul";
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (ba, m, k) = mat_dims(OP, sa)?;
        let (bb, k2, n) = mat_dims(OP, sb)?;
        if ba != bb || k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![E::zero(); ba * m * n];
        for i in 0..ba {
            E::gemm(
                false,
                false,
                m,
                n,
                k,
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                E::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let value = Tensor::new(shape, out)?;
        self.push(OP, value, Op::Matmul { a, b }, &[a, b])
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let xv = self.value(x);
        let (bt, m, n) = mat_dims("transpose", xv.shape())?;
        let out = transpose_data(xv.data(), bt, m, n);
        let mut shape = xv.shape().to_vec();
        let r = shape.len();
        shape.swap(r - 1, r - 2);
        let value = Tensor::new(shape, out)?;
        self.push("transpose", value, Op::Transpose { x }, &[x])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        const OP: &str = "concat";
        let Some(&first) = xs.first() else {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: "no inputs".into(),
            });
        };
        for &v in xs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("axis {axis} out of range for {base:?}"),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push(
            OP,
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        )
    }

    /// `[N,C,H,W]` → `[N*heads, H*W, C/heads]`; channel `c = head*d + j`.
    pub fn to_heads(&mut self, x: Var, heads: usize) -> Result<Var, TensorError> {
        const OP: &str = "to_heads";
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::Rank {
                op: OP,
                expected: 4,
                shape: s,
            });
        }
        if heads == 0 || s[1] % heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("{} channels not divisible by {heads} heads", s[1]),
            });
        }
        let (n, c, t) = (s[0], s[1], s[2] * s[3]);
        let d = c / heads;
        let xd = self.value(x).data();
        let mut out = vec![E::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let (h, j) = (ch / d, ch % d);
                let src = &xd[(b * c + ch) * t..(b * c + ch + 1) * t];
                let base = (b * heads + h) * t * d;
                for (p, &v) in src.iter().enumerate() {
                    out[base + p * d + j] = v;
                }
            }
        }
        let value = Tensor::new(vec![n * heads, t, d], out)?;
        self.push(OP, value, Op::ToHeads { x, heads }, &[x])
    }

    /// Inverse of [`Tape::to_heads`] for a spatial grid of `h×w` tokens.
    pub fn from_heads(&mut self, x: Var, heads: usize, h: usize, w: usize) -> Result<Var, TensorError> {
        const OP: &str = "from_heads";
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 || s[1] != h * w {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("cannot fold {s:?} into {heads} heads over {h}x{w}"),
            });
        }
        let (n, t, d) = (s[0] / heads, s[1], s[2]);
        let c = heads * d;
        let xd = self.value(x).data();
        let mut out = vec![E::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let (hd, j) = (ch / d, ch % d);
                let base = (b * heads + hd) * t * d;
                let dst = &mut out[(b * c + ch) * t..(b * c + ch + 1) * t];
                for (p, o) in dst.iter_mut().enumerate() {
                    *o = xd[base + p * d + j];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(OP, value, Op::FromHeads { x, heads }, &[x])
    }
}

fn transpose_data<E: Element>(x: &[E], bt: usize, m: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for b in 0..bt {
        let src = &x[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}

pub(crate) fn leaky_relu_backward<E: Element>(
    xv: &Tensor<E>,
    x: Var,
    slope: E,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    if let Some(dx) = sink.buf(x) {
        for ((d, &xi), &gi) in dx.iter_mut().zip(xv.data()).zip(g.data()) {
            *d = *d + if xi >= E::zero() { gi } else { gi * slope };
        }
    }
}

pub(crate) fn sigmoid_backward<E: Element>(y: &Tensor<E>, x: Var, g: &Tensor<E>, sink: &mut GradSink<'_, E>) {
    if let Some(dx) = sink.buf(x) {
        for ((d, &yi), &gi) in dx.iter_mut().zip(y.data()).zip(g.data()) {
            *d = *d + gi * yi * (E::one() - yi);
        }
    }
}

pub(crate) fn softmax_backward<E: Element>(y: &Tensor<E>, x: Var, g: &Tensor<E>, sink: &mut GradSink<'_, E>) {
    let k = *y.shape().last().unwrap();
    if k == 0 {
        return;
    }
    if let Some(dx) = sink.buf(x) {
        for ((drow, yrow), grow) in dx.chunks_mut(k).zip(y.data().chunks(k)).zip(g.data().chunks(k)) {
            let dot: E = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
            for ((d, &yi), &gi) in drow.iter_mut().zip(yrow).zip(grow) {
                *d = *d + yi * (gi - dot);
            }
        }
    }
}

pub(crate) fn matmul_backward<E: Element>(
    av: &Tensor<E>,
    bv: &Tensor<E>,
    a: Var,
    b: Var,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let (bt, m, k) = mat_dims("matmul", av.shape()).unwrap();
    let n = *bv.shape().last().unwrap();
    let gd = g.data();
    if let Some(da) = sink.buf(a) {
        for i in 0..bt {
            E::gemm(
                false,
                true,
                m,
                k,
                n,
                &gd[i * m * n..(i + 1) * m * n],
                &bv.data()[i * k * n..(i + 1) * k * n],
                E::one(),
                &mut da[i * m * k..(i + 1) * m * k],
            );
        }
    }
    if let Some(db) = sink.buf(b) {
        for i in 0..bt {
            E::gemm(
                true,
                false,
                k,
                n,
                m,
                &av.data()[i * m * k..(i + 1) * m * k],
                &gd[i * m * n..(i + 1) * m * n],
                E::one(),
                &mut db[i * k * n..(i + 1) * k * n],
            );
        }
    }
}

pub(crate) fn transpose_backward<E: Element>(x: Var, g: &Tensor<E>, sink: &mut GradSink<'_, E>) {
    if !sink.wants(x) {
        return;
    }
    let (bt, m, n) = mat_dims("transpose", g.shape()).unwrap();
    let back = transpose_data(g.data(), bt, m, n);
    sink.add(x, &back);
}

pub(crate) fn concat_backward<E: Element>(
    xs: &[Var],
    shapes: &[&[usize]],
    axis: usize,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let gs = g.shape();
    let outer: usize = gs[..axis].iter().product();
    let inner: usize = gs[axis + 1..].iter().product();
    let total = gs[axis] * inner;
    let mut offset = 0;
    for (&v, s) in xs.iter().zip(shapes) {
        let chunk = s[axis] * inner;
        if let Some(dx) = sink.buf(v) {
            for o in 0..outer {
                let src = &g.data()[o * total + offset..o * total + offset + chunk];
                for (d, &gv) in dx[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                    *d = *d + gv;
                }
            }
        }
        offset += chunk;
    }
}

pub(crate) fn mul_backward<E: Element>(
    av: &Tensor<E>,
    bv: &Tensor<E>,
    a: Var,
    b: Var,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    if let Some(da) = sink.buf(a) {
        for ((d, &y), &gi) in da.iter_mut().zip(bv.data()).zip(g.data()) {
            *d = *d + gi * y;
        }
    }
    if let Some(db) = sink.buf(b) {
        for ((d, &x), &gi) in db.iter_mut().zip(av.data()).zip(g.data()) {
            *d = *d + gi * x;
        }
    }
}

pub(crate) fn to_heads_backward<E: Element>(
    in_shape: &[usize],
    x: Var,
    heads: usize,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let Some(dx) = sink.buf(x) else { return };
    let (n, c, t) = (in_shape[0], in_shape[1], in_shape[2] * in_shape[3]);
    let d = c / heads;
    let gd = g.data();
    for b in 0..n {
        for ch in 0..c {
            let (h, j) = (ch / d, ch % d);
            let base = (b * heads + h) * t * d;
            let dst = &mut dx[(b * c + ch) * t..(b * c + ch + 1) * t];
            for (p, o) in dst.iter_mut().enumerate() {
                *o = *o + gd[base + p * d + j];
            }
        }
    }
}

pub(crate) fn from_heads_backward<E: Element>(x: Var, heads: usize, g: &Tensor<E>, sink: &mut GradSink<'_, E>) {
    let Some(dx) = sink.buf(x) else { return };
    let gs = g.shape();
    let (n, c, t) = (gs[0], gs[1], gs[2] * gs[3]);
    let d = c / heads;
    let gd = g.data();
    for b in 0..n {
        for ch in 0..c {
            let (h, j) = (ch / d, ch % d);
            let base = (b * heads + h) * t * d;
            let src = &gd[(b * c + ch) * t..(b * c + ch + 1) * t];
            for (p, &v) in src.iter().enumerate() {
                dx[base + p * d + j] = dx[base + p * d + j] + v;
            }
        }
    }
}
