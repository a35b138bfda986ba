//! Geometric and intensity augmentation plus patch sampling. Geometry applies
//! to all three arrays in lockstep; intensity changes touch the angles only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Storable, Tensor};

use super::sample::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Probability of a random non-zero number of quarter turns (square inputs only).
    pub rot_prob: f64,
    pub noise_prob: f64,
    /// Upper bound of the additive noise std, drawn uniformly from `[0, max]`.
    pub noise_std_max: f64,
    pub scale_prob: f64,
    /// Multiplicative factor drawn from `[1 − r, 1 + r]`.
    pub scale_range: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rot_prob: 0.5,
            noise_prob: 0.15,
            noise_std_max: 0.1,
            scale_prob: 0.15,
            scale_range: 0.25,
        }
    }
}

/// One concrete augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns.
    pub rot90: u8,
    pub noise_std: f64,
    pub noise_seed: u64,
    pub scale: f64,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rot90: 0,
            noise_std: 0.0,
            noise_seed: 0,
            scale: 1.0,
        }
    }

    pub fn draw(cfg: &AugmentConfig, square: bool, rng: &mut impl Rng) -> Self {
        let hflip = rng.random_bool(cfg.flip_prob);
        let vflip = rng.random_bool(cfg.flip_prob);
        let rot90 = if square && rng.random_bool(cfg.rot_prob) {
            rng.random_range(1..4)
        } else {
            0
        };
        let noise_std = if rng.random_bool(cfg.noise_prob) {
            rng.random_range(0.0..=cfg.noise_std_max)
        } else {
            0.0
        };
        let noise_seed = rng.random();
        let scale = if rng.random_bool(cfg.scale_prob) {
            rng.random_range(1.0 - cfg.scale_range..=1.0 + cfg.scale_range)
        } else {
            1.0
        };
        Self {
            hflip,
            vflip,
            rot90,
            noise_std,
            noise_seed,
            scale,
        }
    }

    /// Applies the draw. Quarter turns on a non-square sample are skipped.
    pub fn apply(&self, s: &Sample) -> Sample {
        let mut angles = s.angles.clone();
        let mut phase = s.phase.clone();
        let mut mask = s.mask.clone().reshape(vec![1, s.height(), s.width()]).expect("same length");
        let turns = if s.height() == s.width() { self.rot90 % 4 } else { 0 };
        for t in [&mut angles, &mut phase] {
            *t = self.geometry(t, turns);
        }
        mask = self.geometry(&mask, turns);
        if self.scale != 1.0 || self.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
            for v in angles.data_mut() {
                let mut x = *v as f64 * self.scale;
                if self.noise_std > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    x += self.noise_std * z;
                }
                *v = x as f32;
            }
        }
        let (h, w) = (mask.shape()[1], mask.shape()[2]);
        Sample {
            id: s.id.clone(),
            angles,
            phase,
            mask: mask.reshape(vec![h, w]).expect("same length"),
        }
    }

    fn geometry<T: Storable>(&self, t: &Tensor<T>, turns: u8) -> Tensor<T> {
        let mut out = t.clone();
        if self.hflip {
            out = flip(&out, true);
        }
        if self.vflip {
            out = flip(&out, false);
        }
        for _ in 0..turns {
            out = rot90(&out);
        }
        out
    }
}

pub fn augment(s: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    AugmentDraw::draw(cfg, s.height() == s.width(), rng).apply(s)
}

/// Mirror of each `[C,H,W]` plane, along width when `horizontal`.
pub fn flip<T: Storable>(t: &Tensor<T>, horizontal: bool) -> Tensor<T> {
    let s = t.shape();
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    Tensor::from_fn(s, |i| {
        let (c, y, x) = (i / (h * w), i / w % h, i % w);
        let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
        d[c * h * w + sy * w + sx]
    })
}

/// Counter-clockwise quarter turn of each square `[C,N,N]` plane.
pub fn rot90<T: Storable>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let n = s[1];
    debug_assert_eq!(s[1], s[2]);
    let d = t.data();
    Tensor::from_fn(s, |i| {
        let (c, y, x) = (i / (n * n), i / n % n, i % n);
        d[c * n * n + x * n + (n - 1 - y)]
    })
}

/// Crop of `(ph, pw)` at offset `(oy, ox)` from every array.
pub fn crop(s: &Sample, oy: usize, ox: usize, ph: usize, pw: usize) -> Sample {
    fn planes<T: Storable>(t: &Tensor<T>, c: usize, h: usize, w: usize, oy: usize, ox: usize, ph: usize, pw: usize) -> Vec<T> {
        let d = t.data();
        let mut out = Vec::with_capacity(c * ph * pw);
        for ch in 0..c {
            for y in oy..oy + ph {
                let row = ch * h * w + y * w;
                out.extend_from_slice(&d[row + ox..row + ox + pw]);
            }
        }
        out
    }
    let (h, w) = (s.height(), s.width());
    Sample {
        id: s.id.clone(),
        angles: Tensor::new(vec![4, ph, pw], planes(&s.angles, 4, h, w, oy, ox, ph, pw)).expect("crop"),
        phase: Tensor::new(vec![1, ph, pw], planes(&s.phase, 1, h, w, oy, ox, ph, pw)).expect("crop"),
        mask: Tensor::new(vec![ph, pw], planes(&s.mask, 1, h, w, oy, ox, ph, pw)).expect("crop"),
    }
}

/// Aligned random crop. With probability 1/3, and when the sample has any
/// foreground, the crop is forced to contain a random foreground pixel.
///
/// # Panics
/// If the patch is larger than the sample.
pub fn random_patch(s: &Sample, ph: usize, pw: usize, rng: &mut impl Rng) -> Sample {
    let (h, w) = (s.height(), s.width());
    assert!(ph <= h && pw <= w, "patch {ph}x{pw} exceeds sample {h}x{w}");
    if (ph, pw) == (h, w) {
        return s.clone();
    }
    let force = rng.random_bool(1.0 / 3.0);
    let fg: Vec<usize> = if force {
        s.mask.data().iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect()
    } else {
        Vec::new()
    };
    let (oy, ox) = if fg.is_empty() {
        (rng.random_range(0..=h - ph), rng.random_range(0..=w - pw))
    } else {
        let p = fg[rng.random_range(0..fg.len())];
        let (py, px) = (p / w, p % w);
        (
            rng.random_range(py.saturating_sub(ph - 1)..=py.min(h - ph)),
            rng.random_range(px.saturating_sub(pw - 1)..=px.min(w - pw)),
        )
    };
    crop(s, oy, ox, ph, pw)
}
