use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Angle channels in acquisition order.
pub const ANGLES_DEG: [u32; 4] = [0, 45, 90, 135];

/// One record: four polarized intensity images, the phase map and the mask,
/// all pixel-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[4,H,W]` intensities for 0°, 45°, 90°, 135°.
    pub angles: Tensor<f32>,
    /// `[1,H,W]` phase in radians.
    pub phase: Tensor<f32>,
    /// `[H,W]` binary mask.
    pub mask: Tensor<u8>,
}

impl Sample {
    pub fn new(id: impl Into<String>, angles: Tensor<f32>, phase: Tensor<f32>, mask: Tensor<u8>) -> Result<Self> {
        let s = Self {
            id: id.into(),
            angles,
            phase,
            mask,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mask.shape();
        if m.len() != 2 || m[0] == 0 || m[1] == 0 {
            return Err(Error::data(format!("{}: mask shape {m:?} is not [H,W]", self.id)));
        }
        if self.angles.shape() != [4, m[0], m[1]] || self.phase.shape() != [1, m[0], m[1]] {
            return Err(Error::data(format!(
                "{}: angles {:?} / phase {:?} not aligned with mask {m:?}",
                self.id,
                self.angles.shape(),
                self.phase.shape()
            )));
        }
        if self.mask.data().iter().any(|&v| v > 1) {
            return Err(Error::data(format!("{}: mask is not binary", self.id)));
        }
        if !self.angles.is_finite() || !self.phase.is_finite() {
            return Err(Error::data(format!("{}: non-finite pixel values", self.id)));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn foreground(&self) -> usize {
        self.mask.data().iter().map(|&v| v as usize).sum()
    }
}

/// Network inputs and targets for a set of equally sized samples.
#[derive(Debug, Clone)]
pub struct Batch<E> {
    /// `[N,k,H,W]`, only the enabled angle channels.
    pub angles: Tensor<E>,
    /// `[N,1,H,W]`.
    pub phase: Tensor<E>,
    /// `[N,H,W]` class indices.
    pub target: Tensor<E>,
}

impl<E: Element> Batch<E> {
    pub fn from_samples(samples: &[&Sample], angle_mask: &[bool; 4]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::data("empty batch"));
        };
        let (h, w) = (first.height(), first.width());
        if let Some(s) = samples.iter().find(|s| s.height() != h || s.width() != w) {
            return Err(Error::data(format!("{}: batch mixes extents", s.id)));
        }
        let chans: Vec<usize> = (0..4).filter(|&c| angle_mask[c]).collect();
        let hw = h * w;
        let n = samples.len();
        let mut angles = Vec::with_capacity(n * chans.len() * hw);
        let mut phase = Vec::with_capacity(n * hw);
        let mut target = Vec::with_capacity(n * hw);
        for s in samples {
            let a = s.angles.data();
            for &c in &chans {
                angles.extend(a[c * hw..(c + 1) * hw].iter().map(|&v| E::from_f64(v as f64)));
            }
            phase.extend(s.phase.data().iter().map(|&v| E::from_f64(v as f64)));
            target.extend(s.mask.data().iter().map(|&v| E::from_f64(v as f64)));
        }
        Ok(Self {
            angles: Tensor::new(vec![n, chans.len(), h, w], angles)?,
            phase: Tensor::new(vec![n, 1, h, w], phase)?,
            target: Tensor::new(vec![n, h, w], target)?,
        })
    }
}
