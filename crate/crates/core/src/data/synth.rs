//! Synthetic multi-illumination phase microscopy records.
//!
//! Cells are soft elliptical domes of optical path on a tilted background.
//! Four interferograms `I_k = a·(1 + V·cos(φ + δ_k))`, `δ_k = kπ/2`, stand in
//! for the 0°/45°/90°/135° analyzer images (an analyzer at θ shifts by 2θ).
//! The amplitude `a` dims near cell boundaries, so the intensities carry edge
//! cues the phase does not. The phase channel is the four-step reconstruction
//! of the noise-free interferograms plus spatially correlated noise at the
//! requested SNR; intensity noise is drawn independently.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::sample::Sample;

const MIN_EXTENT: usize = 16;
const MAX_CELLS: usize = 400;
const VISIBILITY: f64 = 0.8;
const EDGE_CONTRAST: f64 = 0.35;
const EDGE_WIDTH: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Confluence {
    Low,
    Med,
    High,
}

impl Confluence {
    /// Foreground fraction the generator fills up to.
    pub fn target_fraction(self) -> f64 {
        match self {
            Confluence::Low => 0.10,
            Confluence::Med => 0.25,
            Confluence::High => 0.45,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Confluence::Low => "low",
            Confluence::Med => "med",
            Confluence::High => "high",
        }
    }
}

impl fmt::Display for Confluence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Confluence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Confluence::Low),
            "med" => Ok(Confluence::Med),
            "high" => Ok(Confluence::High),
            _ => Err(Error::config(format!("unknown confluence `{s}` (low, med, high)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub confluence: Confluence,
    /// `std(φ)/std(noise)` of the phase channel; infinite disables phase noise.
    pub phase_snr: f64,
    /// Correlation length (pixels) of the phase noise; 0 gives white noise.
    pub phase_noise_corr: f64,
    /// Std of additive Gaussian noise on each interferogram.
    pub intensity_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 8,
            height: 64,
            width: 64,
            confluence: Confluence::Med,
            phase_snr: f64::INFINITY,
            phase_noise_corr: 2.0,
            intensity_noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// No intensity noise and no phase noise.
    pub fn noiseless(mut self) -> Self {
        self.phase_snr = f64::INFINITY;
        self.intensity_noise = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config("n, height and width must be positive"));
        }
        if self.height.min(self.width) < MIN_EXTENT {
            return Err(Error::config(format!(
                "{}x{} is too small to place cells (minimum extent {MIN_EXTENT})",
                self.height, self.width
            )));
        }
        if !(self.phase_snr > 0.0) {
            return Err(Error::config("phase_snr must be positive"));
        }
        if !(self.intensity_noise >= 0.0 && self.intensity_noise.is_finite()) {
            return Err(Error::config("intensity_noise must be finite and non-negative"));
        }
        if !(self.phase_noise_corr >= 0.0 && self.phase_noise_corr.is_finite()) {
            return Err(Error::config("phase_noise_corr must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A generated sample together with the optical path it was rendered from.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub sample: Sample,
    /// `[H,W]` true phase.
    pub phase_true: Tensor<f64>,
}

/// Wraps to `(−π, π]`.
pub fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Four-step phase-shifting reconstruction of a `[4,H,W]` stack ordered by
/// shifts `0, π/2, π, 3π/2`: `atan2(I₃ − I₁, I₀ − I₂)`.
pub fn four_step_phase(angles: &Tensor<f32>) -> Tensor<f64> {
    let s = angles.shape();
    let (h, w) = (s[1], s[2]);
    let hw = h * w;
    let d = angles.data();
    Tensor::from_fn(&[h, w], |i| {
        let ch = |k: usize| d[k * hw + i] as f64;
        (ch(3) - ch(1)).atan2(ch(0) - ch(2))
    })
}

struct Cell {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    height: f64,
}

impl Cell {
    /// Squared normalized radius of pixel `(x, y)`.
    fn r2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Separable Gaussian blur with clamped borders.
fn blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let o = j as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                    };
                    acc += k * src[sy * w + sx];
                }
                dst[y * w + x] = acc / norm;
            }
        }
        dst
    };
    pass(&pass(field, true), false)
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Renders sample `index` of the set described by `cfg`. Each index has its
/// own random stream, so samples do not depend on each other or on `cfg.n`.
pub fn render(cfg: &SynthConfig, index: usize) -> Result<Rendered> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let hw = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let extent = h.min(w) as f64;
    let target = (cfg.confluence.target_fraction() * hw as f64).ceil() as usize;
    let mut mask = vec![0u8; hw];
    let mut covered = 0usize;
    let mut cells = Vec::new();
    while covered < target {
        if cells.len() == MAX_CELLS {
            return Err(Error::config(format!(
                "cannot reach {} confluence on {h}x{w}",
                cfg.confluence
            )));
        }
        let r0 = extent * rng.random_range(0.07..0.13);
        let theta = rng.random_range(0.0..PI);
        let cell = Cell {
            cx: rng.random_range(0.0..w as f64),
            cy: rng.random_range(0.0..h as f64),
            a: r0,
            b: r0 * rng.random_range(0.6..1.0),
            cos: theta.cos(),
            sin: theta.sin(),
            height: rng.random_range(0.8..1.6),
        };
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if mask[i] == 0 && cell.r2(x as f64, y as f64) < 1.0 {
                    mask[i] = 1;
                    covered += 1;
                }
            }
        }
        cells.push(cell);
    }

    let offset = rng.random_range(-1.3..-0.9);
    let (gx, gy) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let a0 = rng.random_range(0.9..1.1);
    let (ix, iy) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let mut phi = vec![0.0; hw];
    let mut amp = vec![0.0; hw];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64 - 0.5, y as f64 / h as f64 - 0.5);
            let mut dome = 0.0f64;
            let mut edge = 0.0f64;
            for c in &cells {
                let r2 = c.r2(x as f64, y as f64);
                if r2 < 1.0 {
                    dome = dome.max(c.height * (1.0 - r2).sqrt());
                }
                let d = r2.sqrt() - 1.0;
                edge = edge.max((-d * d / (2.0 * EDGE_WIDTH * EDGE_WIDTH)).exp());
            }
            let i = y * w + x;
            phi[i] = offset + gx * fx + gy * fy + dome;
            amp[i] = a0 * (1.0 + ix * fx + iy * fy) * (1.0 - EDGE_CONTRAST * edge);
        }
    }

    let mut clean = vec![0f32; 4 * hw];
    for k in 0..4 {
        let delta = k as f64 * FRAC_PI_2;
        for i in 0..hw {
            clean[k * hw + i] = (amp[i] * (1.0 + VISIBILITY * (phi[i] + delta).cos())) as f32;
        }
    }
    let clean = Tensor::new(vec![4, h, w], clean)?;
    let mut phase = four_step_phase(&clean).into_data();
    let mut angles = clean;
    if cfg.intensity_noise > 0.0 {
        for v in angles.data_mut() {
            *v = (*v as f64 + cfg.intensity_noise * gauss(&mut rng)) as f32;
        }
    }
    if cfg.phase_snr.is_finite() {
        let field: Vec<f64> = (0..hw).map(|_| gauss(&mut rng)).collect();
        let field = blur(&field, h, w, cfg.phase_noise_corr);
        let unit = population_std(&field);
        let sigma = population_std(&phi) / cfg.phase_snr;
        for (p, n) in phase.iter_mut().zip(&field) {
            *p += sigma * n / unit;
        }
    }
    let phase = Tensor::new(vec![1, h, w], phase.into_iter().map(|v| v as f32).collect())?;
    let sample = Sample::new(
        format!("{index:04}"),
        angles,
        phase,
        Tensor::new(vec![h, w], mask)?,
    )?;
    Ok(Rendered {
        sample,
        phase_true: Tensor::new(vec![h, w], phi)?,
    })
}

/// Samples `0..cfg.n`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.n).map(|i| render(cfg, i).map(|r| r.sample)).collect()
}
