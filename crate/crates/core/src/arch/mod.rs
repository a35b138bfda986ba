//! Model family: dual-encoder late-fusion U-Net and its baselines.

mod checkpoint;
mod config;
mod fusion;
mod layers;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, MANIFEST};
pub use config::{FusionOp, ModelConfig};
pub use fusion::{ConcatProject, CrossGateFusion, Fusion, MhaFusion, SkipAggregator};
pub use layers::{Affine, Conv, ConvBlock, Hyper, Stage, UpConv};
pub use model::{DeepSupOutputs, ForwardVars, Model, CLASSES};
pub use params::{Init, ParamId, ParamStore};

