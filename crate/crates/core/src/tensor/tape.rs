use super::{check_finite, conv, loss, norm, ops, Element, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<E> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: conv::Pad,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        layout: norm::Lanes,
        cache: norm::NormCache<E>,
    },
    LeakyRelu {
        x: Var,
        slope: E,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: E,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    ToHeads {
        x: Var,
        heads: usize,
    },
    FromHeads {
        x: Var,
        heads: usize,
    },
    Dice {
        logits: Var,
        target: Tensor<E>,
        eps: E,
    },
    CrossEntropy {
        logits: Var,
        target: Tensor<E>,
    },
}

pub(crate) struct Node<E> {
    pub(crate) value: Tensor<E>,
    pub(crate) op: Op<E>,
    pub(crate) requires_grad: bool,
}

/// Linear record of executed ops. Node order is a topological order, so the
/// reverse pass walks it backwards once.
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
    backward_done: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Where backward rules deposit input gradients.
pub(crate) struct GradSink<'a, E> {
    nodes: &'a [Node<E>],
    grads: &'a mut [Option<Tensor<E>>],
}

impl<E: Element> GradSink<'_, E> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulation buffer for `v`, or `None` when `v` needs no gradient.
    pub(crate) fn buf(&mut self, v: Var) -> Option<&mut [E]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let slot = &mut self.grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    pub(crate) fn add(&mut self, v: Var, contrib: &[E]) {
        if let Some(buf) = self.buf(v) {
            for (b, &c) in buf.iter_mut().zip(contrib) {
                *b = *b + c;
            }
        }
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass's loss w.r.t. `v`. `None` means no
    /// path from `v` reached the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    pub(crate) fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Tensor<E>,
        op: Op<E>,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        check_finite(&value, name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`. Every reachable node that requires
    /// grad ends up holding dloss/dnode.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check(loss)?;
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let loss_shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(loss_shape.to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::ones(loss_shape));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: &mut self.grads,
            };
            backward_node(&self.nodes[i], &g, &mut sink);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn backward_node<E: Element>(node: &Node<E>, g: &Tensor<E>, sink: &mut GradSink<'_, E>) {
    let nodes = sink.nodes;
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => conv::conv2d_backward(val(*x), val(*w), *x, *w, *b, *stride, *pad, g, sink),
        Op::ConvTranspose2d { x, w, b } => {
            conv::conv_transpose2d_backward(val(*x), val(*w), *x, *w, *b, g, sink)
        }
        Op::Norm {
            x,
            gamma,
            beta,
            layout,
            cache,
        } => norm::norm_backward(*x, *gamma, val(*gamma), *beta, layout, cache, g, sink),
        Op::LeakyRelu { x, slope } => ops::leaky_relu_backward(val(*x), *x, *slope, g, sink),
        Op::Sigmoid { x } => ops::sigmoid_backward(&node.value, *x, g, sink),
        Op::Softmax { x } => ops::softmax_backward(&node.value, *x, g, sink),
        Op::Matmul { a, b } => ops::matmul_backward(val(*a), val(*b), *a, *b, g, sink),
        Op::Transpose { x } => ops::transpose_backward(*x, g, sink),
        Op::Concat { xs, axis } => {
            let shapes: Vec<&[usize]> = xs.iter().map(|v| nodes[v.0].value.shape()).collect();
            ops::concat_backward(xs, &shapes, *axis, g, sink)
        }
        Op::Add { a, b } => {
            sink.add(*a, g.data());
            sink.add(*b, g.data());
        }
        Op::Mul { a, b } => ops::mul_backward(val(*a), val(*b), *a, *b, g, sink),
        Op::Scale { x, c } => {
            if let Some(buf) = sink.buf(*x) {
                for (d, &gv) in buf.iter_mut().zip(g.data()) {
                    *d = *d + *c * gv;
                }
            }
        }
        Op::Sum { x } => {
            let gv = g.item();
            if let Some(buf) = sink.buf(*x) {
                buf.iter_mut().for_each(|d| *d = *d + gv);
            }
        }
        Op::Mean { x } => {
            let n = E::from_f64(val(*x).len() as f64);
            let gv = g.item() / n;
            if let Some(buf) = sink.buf(*x) {
                buf.iter_mut().for_each(|d| *d = *d + gv);
            }
        }
        Op::Reshape { x } => sink.add(*x, g.data()),
        Op::ToHeads { x, heads } => ops::to_heads_backward(val(*x).shape(), *x, *heads, g, sink),
        Op::FromHeads { x, heads } => ops::from_heads_backward(*x, *heads, g, sink),
        Op::Dice {
            logits,
            target,
            eps,
        } => loss::dice_backward(val(*logits), *logits, target, *eps, g, sink),
        Op::CrossEntropy { logits, target } => {
            loss::cross_entropy_backward(val(*logits), *logits, target, g, sink)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true);
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn half_sum_of_squares_gives_identity_gradient() {
        let mut tape = Tape::<f64>::new();
        let xs = Tensor::from_fn(&[4], |i| i as f64 - 1.5);
        let x = tape.leaf(xs.clone(), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let l = tape.scale(s, 0.5).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &xs);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert_eq!(tape.backward(x), Err(TensorError::NotScalar(vec![2])));
    }

    #[test]
    fn double_backward_requires_reset() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[3]), true);
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.backward(l), Err(TensorError::BackwardTwice));
        tape.reset_grads();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[3]), true);
        let c = tape.constant(Tensor::ones(&[3]));
        let y = tape.mul(x, c).unwrap();
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(x).is_some());
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0]);
    }
}
