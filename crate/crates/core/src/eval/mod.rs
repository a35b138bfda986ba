//! Metrics, evaluation reports, ablation matrices and overlays.

pub mod ablation;
pub mod metrics;
pub mod overlay;
pub mod predict;
mod report;

pub use ablation::{
    run_fusion_matrix, run_leave_one_out, run_matrix, run_model_matrix, variants, AblationMatrix, MatrixMode,
    MatrixRow, Variant, MATRIX_HEADER,
};
pub use metrics::{dice, iou, mean_std, Confusion};
pub use overlay::{annotation, color_counts, overlay, RgbImage};
pub use predict::{argmax_masks, evaluate, evaluate_masks, evaluate_normalized, predict_mask, predict_normalized};
pub use report::{EvalReport, SampleScore, AGGREGATE, AGGREGATE_STD};
