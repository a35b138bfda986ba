//! 2-D convolution and 2×2 stride-2 transposed convolution via im2col + GEMM.

use super::tape::{GradSink, Op};
use super::{Element, Tape, Tensor, TensorError, Var};

/// Zero padding on the leading (top/left) and trailing (bottom/right) edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pad {
    pub lo: usize,
    pub hi: usize,
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: Pad,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad.lo == 0 && self.pad.hi == 0
    }

    fn cols_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols_len(&self) -> usize {
        self.cols_rows() * self.oh * self.ow
    }
}

fn out_extent(n: usize, k: usize, stride: usize, pad: Pad) -> Option<usize> {
    let padded = n + pad.lo + pad.hi;
    if padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

fn im2col<E: Element>(x: &[E], g: &Geom, cols: &mut [E]) {
    let plane = g.oh * g.ow;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad.lo as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(E::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad.lo as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            E::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<E: Element>(cols: &[E], g: &Geom, dx: &mut [E]) {
    let plane = g.oh * g.ow;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad.lo as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad.lo as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(
    op: &'static str,
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: Pad,
) -> Result<Geom, TensorError> {
    if xs.len() != 4 {
        return Err(TensorError::Rank {
            op,
            expected: 4,
            shape: xs.to_vec(),
        });
    }
    if ws.len() != 4 {
        return Err(TensorError::Rank {
            op,
            expected: 4,
            shape: ws.to_vec(),
        });
    }
    if xs[1] != ws[1] {
        return Err(TensorError::ChannelMismatch {
            op,
            expected: ws[1],
            actual: xs[1],
        });
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            reason: "stride must be positive".into(),
        });
    }
    let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
    let oh = out_extent(h, kh, stride, pad).ok_or(TensorError::NonPositiveExtent { op })?;
    let ow = out_extent(w, kw, stride, pad).ok_or(TensorError::NonPositiveExtent { op })?;
    Ok(Geom {
        cin: xs[1],
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
    })
}

impl<E: Element> Tape<E> {
    /// Cross-correlation of `x: [N,Cin,H,W]` with `w: [Cout,Cin,kH,kW]` plus an
    /// optional per-channel bias, symmetric zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        self.conv2d_padded(x, w, b, stride, Pad { lo: padding, hi: padding })
    }

    /// Stride-2 3×3 convolution that maps an extent `n` to `floor(n/2)`.
    ///
    /// One row/column of zero padding sits on the leading edge only, which
    /// gives `64→32` and `63→31`.
    pub fn downsample_stride2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        const OP: &str = "downsample_stride2";
        self.check(x)?;
        self.check(w)?;
        let xs = self.shape(x);
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("spatial extent must be at least 2, got {xs:?}"),
            });
        }
        let ws = self.shape(w);
        if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("expects a 3x3 kernel, got {ws:?}"),
            });
        }
        self.conv2d_padded(x, w, b, 2, Pad { lo: 1, hi: 0 })
    }

    pub(crate) fn conv2d_padded(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: Pad,
    ) -> Result<Var, TensorError> {
        const OP: &str = "conv2d";
        self.check(x)?;
        self.check(w)?;
        let xv = self.value(x);
        let wv = self.value(w);
        let g = conv_geom(OP, xv.shape(), wv.shape(), stride, pad)?;
        let n = xv.shape()[0];
        let cout = wv.shape()[0];
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: vec![cout],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let plane = g.oh * g.ow;
        let k = g.cols_rows();
        let mut out = vec![E::zero(); n * cout * plane];
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![E::zero(); g.cols_len()]
        };
        let bias = b.map(|b| self.value(b).data());
        let in_len = g.cin * g.h * g.w;
        for s in 0..n {
            let xs = &xv.data()[s * in_len..(s + 1) * in_len];
            let cols_ref: &[E] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut cols);
                &cols
            };
            let os = &mut out[s * cout * plane..(s + 1) * cout * plane];
            E::gemm(false, false, cout, plane, k, wv.data(), cols_ref, E::zero(), os);
            if let Some(bias) = bias {
                for (co, row) in os.chunks_mut(plane).enumerate() {
                    let bv = bias[co];
                    row.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        let value = Tensor::new(vec![n, cout, g.oh, g.ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            OP,
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            &inputs,
        )
    }

    /// Transposed convolution with a `[Cin,Cout,2,2]` kernel and stride 2:
    /// exact spatial doubling.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        const OP: &str = "conv_transpose2d";
        self.check(x)?;
        self.check(w)?;
        let xv = self.value(x);
        let wv = self.value(w);
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 {
            return Err(TensorError::Rank {
                op: OP,
                expected: 4,
                shape: xs.to_vec(),
            });
        }
        if ws.len() != 4 || ws[2] != 2 || ws[3] != 2 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("expects a [Cin,Cout,2,2] kernel, got {ws:?}"),
            });
        }
        if xs[1] != ws[0] {
            return Err(TensorError::ChannelMismatch {
                op: OP,
                expected: ws[0],
                actual: xs[1],
            });
        }
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[1];
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: vec![cout],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let hw = h * wd;
        let (oh, ow) = (2 * h, 2 * wd);
        let mut out = vec![E::zero(); n * cout * oh * ow];
        let mut scratch = vec![E::zero(); cout * 4 * hw];
        let bias = b.map(|b| self.value(b).data());
        for s in 0..n {
            let xs = &xv.data()[s * cin * hw..(s + 1) * cin * hw];
            E::gemm(true, false, cout * 4, hw, cin, wv.data(), xs, E::zero(), &mut scratch);
            let os = &mut out[s * cout * oh * ow..(s + 1) * cout * oh * ow];
            for co in 0..cout {
                let bv = bias.map_or(E::zero(), |b| b[co]);
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &scratch[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                        for i in 0..h {
                            for j in 0..wd {
                                os[(co * oh + 2 * i + a) * ow + 2 * j + bb] = row[i * wd + j] + bv;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, cout, oh, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(OP, value, Op::ConvTranspose2d { x, w, b }, &inputs)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<E: Element>(
    xv: &Tensor<E>,
    wv: &Tensor<E>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: Pad,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let geom = conv_geom("conv2d", xv.shape(), wv.shape(), stride, pad).expect("validated in forward");
    let n = xv.shape()[0];
    let cout = wv.shape()[0];
    let plane = geom.oh * geom.ow;
    let k = geom.cols_rows();
    let in_len = geom.cin * geom.h * geom.w;

    if let Some(b) = b {
        if let Some(db) = sink.buf(b) {
            for s in 0..n {
                for co in 0..cout {
                    let row = &g.data()[(s * cout + co) * plane..(s * cout + co + 1) * plane];
                    db[co] = db[co] + row.iter().copied().sum();
                }
            }
        }
    }

    let want_w = sink.wants(w);
    let want_x = sink.wants(x);
    let mut cols = if geom.is_pointwise() || !want_w {
        Vec::new()
    } else {
        vec![E::zero(); geom.cols_len()]
    };
    if want_w {
        let dw = sink.buf(w).expect("wants w");
        for s in 0..n {
            let xs = &xv.data()[s * in_len..(s + 1) * in_len];
            let gs = &g.data()[s * cout * plane..(s + 1) * cout * plane];
            let cols_ref: &[E] = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, &geom, &mut cols);
                &cols
            };
            E::gemm(false, true, cout, k, plane, gs, cols_ref, E::one(), dw);
        }
    }
    if want_x {
        let mut dcols = vec![E::zero(); geom.cols_len()];
        let dx = sink.buf(x).expect("wants x");
        for s in 0..n {
            let gs = &g.data()[s * cout * plane..(s + 1) * cout * plane];
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            if geom.is_pointwise() {
                E::gemm(true, false, k, plane, cout, wv.data(), gs, E::one(), dxs);
            } else {
                E::gemm(true, false, k, plane, cout, wv.data(), gs, E::zero(), &mut dcols);
                col2im_add(&dcols, &geom, dxs);
            }
        }
    }
}

pub(crate) fn conv_transpose2d_backward<E: Element>(
    xv: &Tensor<E>,
    wv: &Tensor<E>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let (n, cin, h, wd) = {
        let s = xv.shape();
        (s[0], s[1], s[2], s[3])
    };
    let cout = wv.shape()[1];
    let hw = h * wd;
    let (oh, ow) = (2 * h, 2 * wd);
    let out_len = cout * oh * ow;

    if let Some(b) = b {
        if let Some(db) = sink.buf(b) {
            for s in 0..n {
                for co in 0..cout {
                    let plane = &g.data()[s * out_len + co * oh * ow..s * out_len + (co + 1) * oh * ow];
                    db[co] = db[co] + plane.iter().copied().sum();
                }
            }
        }
    }
    let want_w = sink.wants(w);
    let want_x = sink.wants(x);
    if !want_w && !want_x {
        return;
    }
    // Gather the upstream gradient back into [Cout*4, HW] layout per sample.
    let mut gathered = vec![E::zero(); cout * 4 * hw];
    for s in 0..n {
        let gs = &g.data()[s * out_len..(s + 1) * out_len];
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut gathered[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..h {
                        for j in 0..wd {
                            row[i * wd + j] = gs[(co * oh + 2 * i + a) * ow + 2 * j + bb];
                        }
                    }
                }
            }
        }
        let xs = &xv.data()[s * cin * hw..(s + 1) * cin * hw];
        if want_w {
            let dw = sink.buf(w).expect("wants w");
            E::gemm(false, true, cin, cout * 4, hw, xs, &gathered, E::one(), dw);
        }
        if want_x {
            let dx = sink.buf(x).expect("wants x");
            let dxs = &mut dx[s * cin * hw..(s + 1) * cin * hw];
            E::gemm(false, false, cin, hw, cout * 4, wv.data(), &gathered, E::one(), dxs);
        }
    }
}
