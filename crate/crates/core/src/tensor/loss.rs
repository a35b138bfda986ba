//! Segmentation losses over `[N,K,H,W]` logits and `[N,H,W]` class targets.

use super::tape::{GradSink, Op};
use super::{Element, Tape, Tensor, TensorError, Var};

fn check_target<E: Element>(op: &'static str, logits: &[usize], target: &Tensor<E>) -> Result<(), TensorError> {
    if logits.len() != 4 {
        return Err(TensorError::Rank {
            op,
            expected: 4,
            shape: logits.to_vec(),
        });
    }
    let ts = target.shape();
    if ts.len() != 3 || ts[0] != logits[0] || ts[1] != logits[2] || ts[2] != logits[3] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: logits.to_vec(),
            rhs: ts.to_vec(),
        });
    }
    let k = E::from_f64(logits[1] as f64);
    if target
        .data()
        .iter()
        .any(|&t| t < E::zero() || t >= k || t.fract() != E::zero())
    {
        return Err(TensorError::InvalidArgument {
            op,
            reason: "target holds values that are not class indices".into(),
        });
    }
    Ok(())
}

/// Class probabilities per pixel in `[N,K,HW]` layout.
fn channel_softmax<E: Element>(logits: &Tensor<E>) -> Vec<E> {
    let s = logits.shape();
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    let l = logits.data();
    let mut p = vec![E::zero(); l.len()];
    for b in 0..n {
        let base = b * k * hw;
        for i in 0..hw {
            let mut m = E::neg_infinity();
            for c in 0..k {
                m = m.max(l[base + c * hw + i]);
            }
            let mut z = E::zero();
            for c in 0..k {
                let e = (l[base + c * hw + i] - m).exp();
                p[base + c * hw + i] = e;
                z = z + e;
            }
            for c in 0..k {
                p[base + c * hw + i] = p[base + c * hw + i] / z;
            }
        }
    }
    p
}

struct DiceTerms<E> {
    probs: Vec<E>,
    intersection: E,
    denom: E,
}

fn dice_terms<E: Element>(logits: &Tensor<E>, target: &Tensor<E>, eps: E) -> DiceTerms<E> {
    let s = logits.shape();
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    let probs = channel_softmax(logits);
    let t = target.data();
    let mut inter = E::zero();
    let mut psum = E::zero();
    let mut gsum = E::zero();
    for b in 0..n {
        for i in 0..hw {
            let p = probs[b * k * hw + hw + i];
            let g = t[b * hw + i];
            inter = inter + p * g;
            psum = psum + p;
            gsum = gsum + g;
        }
    }
    DiceTerms {
        probs,
        intersection: inter,
        denom: psum + gsum + eps,
    }
}

impl<E: Element> Tape<E> {
    /// Soft Dice loss on the class-1 (foreground) probability:
    /// `1 − (2Σpg + ε)/(Σp + Σg + ε)`, pooled over the whole batch.
    pub fn dice_loss(&mut self, logits: Var, target: &Tensor<E>, eps: f64) -> Result<Var, TensorError> {
        const OP: &str = "dice_loss";
        self.check(logits)?;
        let lv = self.value(logits);
        check_target(OP, lv.shape(), target)?;
        if lv.shape()[1] < 2 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: "needs at least two classes".into(),
            });
        }
        let eps = E::from_f64(eps);
        let terms = dice_terms(lv, target, eps);
        let two = E::from_f64(2.0);
        let loss = E::one() - (two * terms.intersection + eps) / terms.denom;
        self.push(
            OP,
            Tensor::scalar(loss),
            Op::Dice {
                logits,
                target: target.clone(),
                eps,
            },
            &[logits],
        )
    }

    /// Mean per-pixel cross-entropy of the channel softmax.
    pub fn cross_entropy(&mut self, logits: Var, target: &Tensor<E>) -> Result<Var, TensorError> {
        const OP: &str = "cross_entropy";
        self.check(logits)?;
        let lv = self.value(logits);
        check_target(OP, lv.shape(), target)?;
        let s = lv.shape();
        let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
        let l = lv.data();
        let t = target.data();
        let mut total = E::zero();
        for b in 0..n {
            let base = b * k * hw;
            for i in 0..hw {
                let mut m = E::neg_infinity();
                for c in 0..k {
                    m = m.max(l[base + c * hw + i]);
                }
                let mut z = E::zero();
                for c in 0..k {
                    z = z + (l[base + c * hw + i] - m).exp();
                }
                let cls = t[b * hw + i].to_f64() as usize;
                total = total + (m + z.ln() - l[base + cls * hw + i]);
            }
        }
        let loss = total / E::from_f64((n * hw) as f64);
        self.push(
            OP,
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target: target.clone(),
            },
            &[logits],
        )
    }
}

pub(crate) fn dice_backward<E: Element>(
    lv: &Tensor<E>,
    logits: Var,
    target: &Tensor<E>,
    eps: E,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let Some(dl) = sink.buf(logits) else { return };
    let s = lv.shape();
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    let terms = dice_terms(lv, target, eps);
    let two = E::from_f64(2.0);
    let num = two * terms.intersection + eps;
    let den2 = terms.denom * terms.denom;
    let up = g.item();
    let t = target.data();
    let p = &terms.probs;
    for b in 0..n {
        let base = b * k * hw;
        for i in 0..hw {
            // dL/dp_fg, then through the softmax: dp_fg/dl_c = p_fg(δ_c1 − p_c).
            let dldp = -(two * t[b * hw + i] * terms.denom - num) / den2 * up;
            let pf = p[base + hw + i];
            for c in 0..k {
                let pc = p[base + c * hw + i];
                let delta = if c == 1 { E::one() } else { E::zero() };
                let idx = base + c * hw + i;
                dl[idx] = dl[idx] + dldp * pf * (delta - pc);
            }
        }
    }
}

pub(crate) fn cross_entropy_backward<E: Element>(
    lv: &Tensor<E>,
    logits: Var,
    target: &Tensor<E>,
    g: &Tensor<E>,
    sink: &mut GradSink<'_, E>,
) {
    let Some(dl) = sink.buf(logits) else { return };
    let s = lv.shape();
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    let p = channel_softmax(lv);
    let scale = g.item() / E::from_f64((n * hw) as f64);
    let t = target.data();
    for b in 0..n {
        let base = b * k * hw;
        for i in 0..hw {
            let cls = t[b * hw + i].to_f64() as usize;
            for c in 0..k {
                let idx = base + c * hw + i;
                let onehot = if c == cls { E::one() } else { E::zero() };
                dl[idx] = dl[idx] + scale * (p[idx] - onehot);
            }
        }
    }
}
