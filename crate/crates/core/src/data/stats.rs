//! Per-modality normalization: per-channel standardization of the angle
//! images and quantile clipping + rescaling of the phase map.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::Tensor;

use super::sample::Sample;

pub const PHASE_Q_LO: f64 = 0.005;
pub const PHASE_Q_HI: f64 = 0.995;
pub const FILE: &str = "norm_stats.txt";

/// Training-set statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub angle_mean: [f64; 4],
    /// Population standard deviation.
    pub angle_std: [f64; 4],
    pub phase_q_lo: f64,
    pub phase_q_hi: f64,
}

/// Nearest-rank quantile of ascending `sorted`: the value at 1-based rank
/// `ceil(q·N)`, clamped to `[1, N]`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Pools every training pixel per channel.
pub fn fit_norm_stats(train: &[Sample]) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::data("cannot fit normalization on an empty training set"));
    }
    let mut angle_mean = [0.0; 4];
    let mut angle_std = [0.0; 4];
    for c in 0..4 {
        let pixels = || {
            train.iter().flat_map(move |s| {
                let hw = s.height() * s.width();
                s.angles.data()[c * hw..(c + 1) * hw].iter().map(|&v| v as f64)
            })
        };
        let count = pixels().count() as f64;
        let mean = pixels().sum::<f64>() / count;
        let var = pixels().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        if var <= 0.0 {
            return Err(Error::data(format!("angle channel {c} is constant over the training set")));
        }
        angle_mean[c] = mean;
        angle_std[c] = var.sqrt();
    }
    let mut phase: Vec<f64> = train
        .iter()
        .flat_map(|s| s.phase.data().iter().map(|&v| v as f64))
        .collect();
    phase.sort_by(f64::total_cmp);
    let stats = NormStats {
        angle_mean,
        angle_std,
        phase_q_lo: nearest_rank(&phase, PHASE_Q_LO),
        phase_q_hi: nearest_rank(&phase, PHASE_Q_HI),
    };
    stats.validate()?;
    Ok(stats)
}

impl NormStats {
    /// Statistics under which angle normalization is the identity.
    pub fn identity() -> Self {
        Self {
            angle_mean: [0.0; 4],
            angle_std: [1.0; 4],
            phase_q_lo: 0.0,
            phase_q_hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angle_std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::data("angle std must be positive"));
        }
        if !(self.phase_q_lo < self.phase_q_hi) {
            return Err(Error::data(format!(
                "phase quantiles {} and {} do not span a range",
                self.phase_q_lo, self.phase_q_hi
            )));
        }
        Ok(())
    }

    /// `(x − μ_c)/σ_c` per channel of a `[4,H,W]` stack.
    pub fn normalize_angles(&self, angles: &Tensor<f32>) -> Tensor<f32> {
        let hw = angles.len() / 4;
        let mut out = angles.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i / hw;
            *v = ((*v as f64 - self.angle_mean[c]) / self.angle_std[c]) as f32;
        }
        out
    }

    /// Clip to `[q_lo, q_hi]`, then map `q_lo → 0` and `q_hi → 1`.
    pub fn normalize_phase(&self, phase: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.validate()?;
        let (lo, hi) = (self.phase_q_lo, self.phase_q_hi);
        Ok(phase.map(|v| (((v as f64).clamp(lo, hi) - lo) / (hi - lo)) as f32))
    }

    pub fn normalize(&self, s: &Sample) -> Result<Sample> {
        Ok(Sample {
            id: s.id.clone(),
            angles: self.normalize_angles(&s.angles),
            phase: self.normalize_phase(&s.phase)?,
            mask: s.mask.clone(),
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        for c in 0..4 {
            kv.insert(format!("angle_mean.{c}"), self.angle_mean[c]);
            kv.insert(format!("angle_std.{c}"), self.angle_std[c]);
        }
        kv.insert("phase_q_lo", self.phase_q_lo);
        kv.insert("phase_q_hi", self.phase_q_hi);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let get = |k: &str| -> Result<f64> {
            kv.parse_value(k)?
                .ok_or_else(|| Error::data(format!("normalization stats lack `{k}`")))
        };
        let mut s = Self::identity();
        for c in 0..4 {
            s.angle_mean[c] = get(&format!("angle_mean.{c}"))?;
            s.angle_std[c] = get(&format!("angle_std.{c}"))?;
        }
        s.phase_q_lo = get("phase_q_lo")?;
        s.phase_q_hi = get("phase_q_hi")?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_kv().to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&KvMap::parse(&text)?)
    }
}
