//! Samples, normalization, synthetic generation, augmentation and storage.

pub mod augment;
pub mod io;
mod sample;
pub mod stats;
pub mod synth;

pub use augment::{augment, random_patch, AugmentConfig, AugmentDraw};
pub use io::{load_sample, load_split, save_sample, save_split, Dataset};
pub use sample::{Batch, Sample, ANGLES_DEG};
pub use stats::{fit_norm_stats, NormStats};
pub use synth::{Confluence, SynthConfig};
