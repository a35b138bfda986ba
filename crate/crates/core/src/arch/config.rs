use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{join, KvMap};

/// How (and whether) the angle and phase streams are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionOp {
    /// Directed multi-head attention: angles query, phase supplies keys/values.
    Mha,
    /// Channel concat followed by a 1×1 projection.
    Concat1x1,
    /// Sigmoid cross-gating of each stream by the other, then a 1×1 projection.
    CrossGate,
    /// Single encoder over the 5-channel input stack.
    EarlyFusion,
    AnglesOnly,
    PhaseOnly,
}

impl FusionOp {
    pub const ALL: [FusionOp; 6] = [
        FusionOp::Mha,
        FusionOp::Concat1x1,
        FusionOp::CrossGate,
        FusionOp::EarlyFusion,
        FusionOp::AnglesOnly,
        FusionOp::PhaseOnly,
    ];

    /// Dual-encoder variants fuse two streams mid-encoder.
    pub fn is_dual(self) -> bool {
        matches!(self, FusionOp::Mha | FusionOp::Concat1x1 | FusionOp::CrossGate)
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionOp::Mha => "mha",
            FusionOp::Concat1x1 => "concat1x1",
            FusionOp::CrossGate => "crossgate",
            FusionOp::EarlyFusion => "early_fusion",
            FusionOp::AnglesOnly => "angles_only",
            FusionOp::PhaseOnly => "phase_only",
        }
    }

    pub fn uses_angles(self) -> bool {
        self != FusionOp::PhaseOnly
    }

    pub fn uses_phase(self) -> bool {
        self != FusionOp::AnglesOnly
    }
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::config(format!("unknown fusion_op `{s}`")))
    }
}

/// Declarative description of one architecture variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_stages: usize,
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub fusion_stage: usize,
    pub fusion_op: FusionOp,
    pub mha_heads: usize,
    /// Enabled angle channels in 0°, 45°, 90°, 135° order.
    pub angle_channel_mask: [bool; 4],
    pub deep_supervision: bool,
    pub seed: u64,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_stages: 5,
            widths: vec![8, 16, 32, 64, 128],
            blocks_per_stage: 2,
            fusion_stage: 2,
            fusion_op: FusionOp::Mha,
            mha_heads: 4,
            angle_channel_mask: [true; 4],
            deep_supervision: true,
            seed: 0,
            leaky_slope: 0.01,
            norm_eps: 1e-5,
        }
    }
}

const KEYS: &[&str] = &[
    "n_stages",
    "widths",
    "blocks_per_stage",
    "fusion_stage",
    "fusion_op",
    "mha_heads",
    "angle_channel_mask",
    "deep_supervision",
    "seed",
    "leaky_slope",
    "norm_eps",
];

impl ModelConfig {
    pub fn with_fusion(mut self, op: FusionOp, stage: usize) -> Self {
        self.fusion_op = op;
        self.fusion_stage = stage;
        self
    }

    /// Number of angle channels fed to the network.
    pub fn angle_channels(&self) -> usize {
        self.angle_channel_mask.iter().filter(|&&on| on).count()
    }

    /// Total input channels of the first encoder (angles stem for dual variants).
    pub fn input_channels(&self) -> usize {
        match self.fusion_op {
            FusionOp::EarlyFusion => self.angle_channels() + 1,
            FusionOp::PhaseOnly => 1,
            _ => self.angle_channels(),
        }
    }

    /// Input extents must be divisible by this.
    pub fn size_divisor(&self) -> usize {
        1 << (self.n_stages - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages < 2 {
            return Err(Error::config("n_stages must be at least 2"));
        }
        if self.widths.len() != self.n_stages {
            return Err(Error::config(format!(
                "widths has {} entries, n_stages is {}",
                self.widths.len(),
                self.n_stages
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::config("widths must be positive"));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::config("blocks_per_stage must be at least 1"));
        }
        if self.fusion_op.is_dual() && self.fusion_stage >= self.n_stages {
            return Err(Error::config(format!(
                "fusion_stage {} outside 0..{}",
                self.fusion_stage, self.n_stages
            )));
        }
        if self.fusion_op == FusionOp::Mha {
            if self.mha_heads == 0 {
                return Err(Error::config("mha_heads must be positive"));
            }
            if let Some(w) = self.widths.iter().find(|&&w| w % self.mha_heads != 0) {
                return Err(Error::config(format!(
                    "width {w} is not divisible by {} heads",
                    self.mha_heads
                )));
            }
        }
        if self.fusion_op.uses_angles() && self.angle_channels() == 0 {
            return Err(Error::config("at least one angle channel must be enabled"));
        }
        if !(self.leaky_slope.is_finite() && self.norm_eps > 0.0) {
            return Err(Error::config("leaky_slope must be finite and norm_eps positive"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("n_stages", self.n_stages);
        kv.insert("widths", join(&self.widths));
        kv.insert("blocks_per_stage", self.blocks_per_stage);
        kv.insert("fusion_stage", self.fusion_stage);
        kv.insert("fusion_op", self.fusion_op);
        kv.insert("mha_heads", self.mha_heads);
        let mask: Vec<u8> = self.angle_channel_mask.iter().map(|&b| b as u8).collect();
        kv.insert("angle_channel_mask", join(&mask));
        kv.insert("deep_supervision", self.deep_supervision);
        kv.insert("seed", self.seed);
        kv.insert("leaky_slope", self.leaky_slope);
        kv.insert("norm_eps", self.norm_eps);
        kv
    }

    /// Defaults overlaid with `kv`; unknown keys are rejected.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(KEYS)?;
        let mut cfg = Self::default();
        if let Some(v) = kv.parse_value("n_stages")? {
            cfg.n_stages = v;
        }
        if let Some(v) = kv.parse_list("widths")? {
            cfg.widths = v;
        }
        if let Some(v) = kv.parse_value("blocks_per_stage")? {
            cfg.blocks_per_stage = v;
        }
        if let Some(v) = kv.parse_value("fusion_stage")? {
            cfg.fusion_stage = v;
        }
        if let Some(v) = kv.get("fusion_op") {
            cfg.fusion_op = v.parse()?;
        }
        if let Some(v) = kv.parse_value("mha_heads")? {
            cfg.mha_heads = v;
        }
        if let Some(v) = kv.parse_list::<u8>("angle_channel_mask")? {
            if v.len() != 4 || v.iter().any(|&b| b > 1) {
                return Err(Error::config("angle_channel_mask needs four 0/1 entries"));
            }
            for (slot, b) in cfg.angle_channel_mask.iter_mut().zip(v) {
                *slot = b == 1;
            }
        }
        if let Some(v) = kv.parse_value("deep_supervision")? {
            cfg.deep_supervision = v;
        }
        if let Some(v) = kv.parse_value("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = kv.parse_value("leaky_slope")? {
            cfg.leaky_slope = v;
        }
        if let Some(v) = kv.parse_value("norm_eps")? {
            cfg.norm_eps = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
