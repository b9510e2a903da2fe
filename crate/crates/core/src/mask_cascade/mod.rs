//! Distractor mask prediction for a query view.
//!
//! Masks use 1 = static / keep and 0 = distractor / exclude throughout.

mod combine;
mod config;
mod predict;
mod robust;
mod warp;

pub use combine::{disparity_mask, entity_fill, fuse_query_mask, refine_mask};
pub use config::{DisparityRule, MaskCascadeConfig};
pub use predict::{
    dump_trace, predict_query_mask, predict_query_mask_detailed, CascadeTrace, CascadeView, DetailedCascade,
};
pub use robust::{reference_static_mask, residual_threshold, robust_mask};
pub use warp::{warp_image, warp_mask, WarpStats};
