//! Dual-encoder, attention-fused U-Net segmentation for multi-illumination
//! quantitative phase microscopy, on top of a small reverse-mode tensor engine.

pub mod arch;
pub mod data;
pub mod error;
pub mod eval;
pub mod kv;
pub mod qts;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use kv::KvMap;
pub use tensor::{DType, Element, Tape, Tensor, TensorError, Var};

/// Engine version, shared by every crate of the workspace.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
