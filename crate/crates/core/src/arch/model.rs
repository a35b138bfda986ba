//! Model assembly: encoders, fusion, shared tail, bottleneck, decoder and
//! deep-supervision heads for every variant in the registry.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

use super::config::{FusionOp, ModelConfig};
use super::fusion::{ConcatProject, CrossGateFusion, Fusion, MhaFusion, SkipAggregator};
use super::layers::{Conv, Hyper, Stage, UpConv};
use super::params::{Init, ParamStore};

/// Number of output classes (background, cell).
pub const CLASSES: usize = 2;

#[derive(Debug, Clone)]
enum Encoder {
    /// Two streams up to and including the fusion stage, then one shared tail.
    Dual {
        angles: Vec<Stage>,
        phase: Vec<Stage>,
        skip_agg: Vec<SkipAggregator>,
        fusion: Fusion,
        shared: Vec<Stage>,
    },
    Single { stages: Vec<Stage> },
}

#[derive(Debug, Clone)]
struct DecoderStage {
    /// Absent at the lowest-resolution stage, which sits at the bottleneck scale.
    up: Option<UpConv>,
    blocks: Stage,
    head: Option<Conv>,
}

/// A built architecture variant with its parameters.
#[derive(Debug, Clone)]
pub struct Model<E> {
    cfg: ModelConfig,
    hyper: Hyper,
    store: ParamStore<E>,
    encoder: Encoder,
    bottleneck: Stage,
    decoder: Vec<DecoderStage>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `(decoder stage, logits)`, finest scale first.
    pub heads: Vec<(usize, Var)>,
    /// Skip tensor per encoder stage as consumed by the decoder.
    pub skips: Vec<Var>,
    /// Output of the fusion operator, for dual-encoder variants.
    pub fused: Option<Var>,
}

impl ForwardVars {
    pub fn outputs<E: Element>(&self, tape: &Tape<E>) -> DeepSupOutputs<E> {
        DeepSupOutputs {
            logits: self
                .heads
                .iter()
                .map(|&(s, v)| (s, tape.value(v).clone()))
                .collect(),
        }
    }

    /// Full-resolution logits.
    pub fn full(&self) -> Var {
        self.heads[0].1
    }
}

/// Per-scale logits `[N,2,H/2^s,W/2^s]`, finest scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSupOutputs<E> {
    pub logits: Vec<(usize, Tensor<E>)>,
}

impl<E: Element> DeepSupOutputs<E> {
    pub fn full(&self) -> &Tensor<E> {
        &self.logits[0].1
    }
}

impl<E: Element> Model<E> {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(cfg.seed);
        let w = &cfg.widths;
        let n = cfg.n_stages;
        let nb = cfg.blocks_per_stage;
        let stride = |s: usize| if s == 0 { 1 } else { 2 };
        let stages = |store: &mut ParamStore<E>, init: &mut Init, prefix: &str, range: std::ops::Range<usize>, cin0: usize| {
            range
                .map(|s| {
                    let cin = if s == 0 { cin0 } else { w[s - 1] };
                    Stage::new(store, init, &format!("{prefix}.s{s}"), cin, w[s], nb, stride(s))
                })
                .collect::<Vec<_>>()
        };

        let encoder = if cfg.fusion_op.is_dual() {
            let f = cfg.fusion_stage;
            let angles = stages(&mut store, &mut init, "enc_a", 0..f + 1, cfg.angle_channels());
            let phase = stages(&mut store, &mut init, "enc_p", 0..f + 1, 1);
            let skip_agg = (0..f)
                .map(|s| ConcatProject::new(&mut store, &mut init, &format!("skip{s}"), w[s]))
                .collect();
            let fusion = match cfg.fusion_op {
                FusionOp::Mha => Fusion::Mha(MhaFusion::new(&mut store, &mut init, "fusion", w[f], cfg.mha_heads)),
                FusionOp::Concat1x1 => Fusion::Concat(ConcatProject::new(&mut store, &mut init, "fusion", w[f])),
                FusionOp::CrossGate => Fusion::CrossGate(CrossGateFusion::new(&mut store, &mut init, "fusion", w[f])),
                _ => unreachable!("single-encoder variant"),
            };
            let shared = stages(&mut store, &mut init, "enc", f + 1..n, 0);
            Encoder::Dual {
                angles,
                phase,
                skip_agg,
                fusion,
                shared,
            }
        } else {
            Encoder::Single {
                stages: stages(&mut store, &mut init, "enc", 0..n, cfg.input_channels()),
            }
        };

        let bottleneck = Stage::new(&mut store, &mut init, "bottleneck", w[n - 1], w[n - 1], nb, 1);
        let decoder = (0..n)
            .rev()
            .map(|s| {
                let up = (s + 1 < n).then(|| UpConv::new(&mut store, &mut init, &format!("dec.s{s}.up"), w[s + 1], w[s]));
                let blocks = Stage::new(&mut store, &mut init, &format!("dec.s{s}"), 2 * w[s], w[s], nb, 1);
                let supervised = s == 0 || (cfg.deep_supervision && s + 1 < n);
                let head = supervised.then(|| Conv::new(&mut store, &mut init, &format!("head.s{s}"), w[s], CLASSES, 1, 1));
                DecoderStage { up, blocks, head }
            })
            .collect();

        Ok(Self {
            cfg: cfg.clone(),
            hyper: Hyper {
                slope: cfg.leaky_slope,
                eps: cfg.norm_eps,
            },
            store,
            encoder,
            bottleneck,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.store
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Decoder stages that carry a supervision head, finest first.
    pub fn supervised_stages(&self) -> Vec<usize> {
        let n = self.decoder.len();
        let mut v: Vec<usize> = (0..n).filter(|&s| self.decoder[n - 1 - s].head.is_some()).collect();
        v.sort_unstable();
        v
    }

    /// Fresh tape with this model's parameters bound as its first leaves.
    pub fn bind(&self) -> Tape<E> {
        self.store.bind()
    }

    fn check_inputs(&self, angles: &[usize], phase: &[usize]) -> Result<()> {
        let k = self.cfg.angle_channels();
        if angles.len() != 4 || phase.len() != 4 {
            return Err(Error::data(format!("inputs must be NCHW, got {angles:?} and {phase:?}")));
        }
        if self.cfg.fusion_op.uses_angles() && angles[1] != k {
            return Err(Error::data(format!("expected {k} angle channels, got {}", angles[1])));
        }
        if phase[1] != 1 {
            return Err(Error::data(format!("expected 1 phase channel, got {}", phase[1])));
        }
        if angles[0] != phase[0] || angles[2..] != phase[2..] {
            return Err(Error::data(format!(
                "angles {angles:?} and phase {phase:?} are not pixel-aligned"
            )));
        }
        let d = self.cfg.size_divisor();
        if angles[2] == 0 || angles[3] == 0 || angles[2] % d != 0 || angles[3] % d != 0 {
            return Err(Error::data(format!(
                "spatial extent {}x{} is not a positive multiple of {d}",
                angles[2], angles[3]
            )));
        }
        Ok(())
    }

    /// Forward pass on a tape obtained from [`Model::bind`].
    ///
    /// `angles` holds only the enabled angle channels; `phase` is `[N,1,H,W]`.
    /// Inputs a variant does not use are left untouched on the tape.
    pub fn forward(&self, tape: &mut Tape<E>, angles: Var, phase: Var) -> Result<ForwardVars> {
        self.check_inputs(tape.shape(angles), tape.shape(phase))?;
        let hy = self.hyper;
        let mut fused = None;
        let mut skips = Vec::with_capacity(self.cfg.n_stages);
        let mut x = match &self.encoder {
            Encoder::Dual {
                angles: ea,
                phase: ep,
                skip_agg,
                fusion,
                shared,
            } => {
                let (mut a, mut p) = (angles, phase);
                for (s, (sa, sp)) in ea.iter().zip(ep).enumerate() {
                    a = sa.forward(tape, hy, a)?;
                    p = sp.forward(tape, hy, p)?;
                    if let Some(agg) = skip_agg.get(s) {
                        skips.push(agg.forward(tape, hy, a, p)?);
                    }
                }
                let mut x = fusion.forward(tape, hy, a, p)?;
                fused = Some(x);
                skips.push(x);
                for st in shared {
                    x = st.forward(tape, hy, x)?;
                    skips.push(x);
                }
                x
            }
            Encoder::Single { stages } => {
                let mut x = match self.cfg.fusion_op {
                    FusionOp::EarlyFusion => tape.concat(&[angles, phase], 1)?,
                    FusionOp::PhaseOnly => phase,
                    _ => angles,
                };
                for st in stages {
                    x = st.forward(tape, hy, x)?;
                    skips.push(x);
                }
                x
            }
        };

        x = self.bottleneck.forward(tape, hy, x)?;
        let n = self.cfg.n_stages;
        let mut heads = Vec::new();
        for (i, dec) in self.decoder.iter().enumerate() {
            let s = n - 1 - i;
            if let Some(up) = &dec.up {
                x = up.forward(tape, x)?;
            }
            let cat = tape.concat(&[x, skips[s]], 1)?;
            x = dec.blocks.forward(tape, hy, cat)?;
            if let Some(head) = &dec.head {
                heads.push((s, head.forward(tape, x)?));
            }
        }
        heads.reverse();
        Ok(ForwardVars { heads, skips, fused })
    }

    /// Inference without gradient bookkeeping beyond the throwaway tape.
    pub fn predict(&self, angles: &Tensor<E>, phase: &Tensor<E>) -> Result<DeepSupOutputs<E>> {
        let mut tape = self.bind();
        let a = tape.constant(angles.clone());
        let p = tape.constant(phase.clone());
        let fv = self.forward(&mut tape, a, p)?;
        Ok(fv.outputs(&tape))
    }
}
