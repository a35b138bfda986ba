//! Operators that merge the angle and phase streams, and the dual-source
//! skip aggregator used by the decoder below the fusion stage.

use crate::tensor::{Element, Tape, TensorError, Var};

use super::layers::{Affine, Conv, Hyper};
use super::params::{Init, ParamStore};

fn aligned<E: Element>(op: &'static str, tape: &Tape<E>, a: Var, p: Var) -> Result<(), TensorError> {
    let (sa, sp) = (tape.shape(a), tape.shape(p));
    if sa.len() != 4 || sa != sp {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sp.to_vec(),
        });
    }
    Ok(())
}

/// Directed multi-head attention fusion: projected angle features query the
/// projected phase features, followed by a residual + MLP post-fusion block.
///
/// ```text
/// Ã = 1×1(A), P̃ = 1×1(P)
/// Z = LN(Ã + W_o · MHA(Q=Ã W_q, K=P̃ W_k, V=P̃ W_v))
/// F = LN(Z + MLP(Z)),  MLP = 1×1(C→4C) → LeakyReLU → 1×1(4C→C)
/// ```
///
/// LN normalizes channels per spatial token. No positional encoding is used.
#[derive(Debug, Clone)]
pub struct MhaFusion {
    pub align_a: Conv,
    pub align_p: Conv,
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub out: Conv,
    pub ln_attn: Affine,
    pub mlp_up: Conv,
    pub mlp_down: Conv,
    pub ln_mlp: Affine,
    pub heads: usize,
}

impl MhaFusion {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        init: &mut Init,
        name: &str,
        c: usize,
        heads: usize,
    ) -> Self {
        let mut pw = |suffix: &str, cin: usize, cout: usize| {
            Conv::new(store, init, &format!("{name}.{suffix}"), cin, cout, 1, 1)
        };
        let align_a = pw("align_a", c, c);
        let align_p = pw("align_p", c, c);
        let query = pw("q", c, c);
        let key = pw("k", c, c);
        let value = pw("v", c, c);
        let out = pw("o", c, c);
        let mlp_up = pw("mlp_up", c, 4 * c);
        let mlp_down = pw("mlp_down", 4 * c, c);
        let ln_attn = Affine::new(store, &format!("{name}.ln_attn"), c);
        let ln_mlp = Affine::new(store, &format!("{name}.ln_mlp"), c);
        Self {
            align_a,
            align_p,
            query,
            key,
            value,
            out,
            ln_attn,
            mlp_up,
            mlp_down,
            ln_mlp,
            heads,
        }
    }

    /// `softmax(QKᵀ/√d)·V` per head, heads merged back to `[N,C,h,w]`,
    /// before the output projection.
    pub fn attend<E: Element>(&self, tape: &mut Tape<E>, a_tilde: Var, p_tilde: Var) -> Result<Var, TensorError> {
        aligned("mha_fuse", tape, a_tilde, p_tilde)?;
        let s = tape.shape(a_tilde).to_vec();
        let (c, h, w) = (s[1], s[2], s[3]);
        if self.heads == 0 || c % self.heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: "mha_fuse",
                reason: format!("{c} channels not divisible by {} heads", self.heads),
            });
        }
        let head_dim = c / self.heads;
        let q = self.query.forward(tape, a_tilde)?;
        let k = self.key.forward(tape, p_tilde)?;
        let v = self.value.forward(tape, p_tilde)?;
        let q = tape.to_heads(q, self.heads)?;
        let k = tape.to_heads(k, self.heads)?;
        let v = tape.to_heads(v, self.heads)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
        let weights = tape.softmax(scores)?;
        let mixed = tape.matmul(weights, v)?;
        tape.from_heads(mixed, self.heads, h, w)
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, hy: Hyper, a2: Var, p2: Var) -> Result<Var, TensorError> {
        aligned("mha_fuse", tape, a2, p2)?;
        let a_tilde = self.align_a.forward(tape, a2)?;
        let p_tilde = self.align_p.forward(tape, p2)?;
        let attn = self.attend(tape, a_tilde, p_tilde)?;
        let attn = self.out.forward(tape, attn)?;
        let z = tape.add(a_tilde, attn)?;
        let z = self.ln_attn.channel_layer_norm(tape, z, hy.eps)?;
        let m = self.mlp_up.forward(tape, z)?;
        let m = tape.leaky_relu(m, hy.slope)?;
        let m = self.mlp_down.forward(tape, m)?;
        let f = tape.add(z, m)?;
        self.ln_mlp.channel_layer_norm(tape, f, hy.eps)
    }
}

/// Channel concat of two aligned maps → 1×1 (2C→C) → InstanceNorm → LeakyReLU.
///
/// Serves both as the concat fusion operator and as the decoder's dual-source
/// skip aggregator.
#[derive(Debug, Clone)]
pub struct ConcatProject {
    pub proj: Conv,
    pub norm: Affine,
}

pub type SkipAggregator = ConcatProject;

impl ConcatProject {
    pub fn new<E: Element>(store: &mut ParamStore<E>, init: &mut Init, name: &str, c: usize) -> Self {
        Self {
            proj: Conv::new(store, init, &format!("{name}.proj"), 2 * c, c, 1, 1),
            norm: Affine::new(store, &format!("{name}.norm"), c),
        }
    }

    /// The 1×1 projection of the concatenated pair, before norm/activation.
    pub fn project<E: Element>(&self, tape: &mut Tape<E>, a: Var, p: Var) -> Result<Var, TensorError> {
        aligned("concat_project", tape, a, p)?;
        let cat = tape.concat(&[a, p], 1)?;
        self.proj.forward(tape, cat)
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, hy: Hyper, a: Var, p: Var) -> Result<Var, TensorError> {
        let y = self.project(tape, a, p)?;
        let y = self.norm.instance_norm(tape, y, hy.eps)?;
        tape.leaky_relu(y, hy.slope)
    }
}

/// Each stream is gated by a sigmoid of a 1×1 map of the other stream, then
/// merged like [`ConcatProject`]:
/// `concat(A ⊙ σ(1×1(P)), P ⊙ σ(1×1(A))) → 1×1 → Norm → Act`.
#[derive(Debug, Clone)]
pub struct CrossGateFusion {
    /// Gate applied to the angle stream, computed from phase.
    pub gate_from_phase: Conv,
    /// Gate applied to the phase stream, computed from angles.
    pub gate_from_angles: Conv,
    pub merge: ConcatProject,
}

impl CrossGateFusion {
    pub fn new<E: Element>(store: &mut ParamStore<E>, init: &mut Init, name: &str, c: usize) -> Self {
        Self {
            gate_from_phase: Conv::new(store, init, &format!("{name}.gate_p"), c, c, 1, 1),
            gate_from_angles: Conv::new(store, init, &format!("{name}.gate_a"), c, c, 1, 1),
            merge: ConcatProject::new(store, init, name, c),
        }
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, hy: Hyper, a2: Var, p2: Var) -> Result<Var, TensorError> {
        aligned("crossgate_fuse", tape, a2, p2)?;
        let ga = self.gate_from_phase.forward(tape, p2)?;
        let ga = tape.sigmoid(ga)?;
        let gp = self.gate_from_angles.forward(tape, a2)?;
        let gp = tape.sigmoid(gp)?;
        let a = tape.mul(a2, ga)?;
        let p = tape.mul(p2, gp)?;
        self.merge.forward(tape, hy, a, p)
    }
}

/// The operator used at the fusion stage of a dual-encoder model.
#[derive(Debug, Clone)]
pub enum Fusion {
    Mha(MhaFusion),
    Concat(ConcatProject),
    CrossGate(CrossGateFusion),
}

impl Fusion {
    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, hy: Hyper, a: Var, p: Var) -> Result<Var, TensorError> {
        match self {
            Fusion::Mha(f) => f.forward(tape, hy, a, p),
            Fusion::Concat(f) => f.forward(tape, hy, a, p),
            Fusion::CrossGate(f) => f.forward(tape, hy, a, p),
        }
    }
}
