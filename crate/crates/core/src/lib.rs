//! Distractor-aware multi-view gaussian splatting.
//!
//! Scenes are reconstructed from a handful of reference images into
//! pixel-aligned gaussians, re-rendered, and checked against each other to
//! predict which pixels of a view belong to transient distractors. The crate
//! also provides two-stage reference selection with distractor pruning, a
//! mask-guided refinement loop, metrics, and a deterministic synthetic scene
//! generator used as the verification substrate.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the pipeline scalar to `f64`.

pub mod error;
pub mod evaluation;
pub mod inference;
pub mod mask_cascade;
pub mod rasterizer;
pub mod real;
pub mod reconstruction;
pub mod refinement;
pub mod scene_model;
pub mod segmentation;
pub mod synthetic;

pub use error::{Error, Result};
pub use real::Real;

/// Scalar used by the pipeline and the CLI.
pub type Scalar = f64;

pub type Camera = scene_model::Camera<Scalar>;
pub type Image = scene_model::ImageBuffer<Scalar>;
pub type Depth = scene_model::DepthMap<Scalar>;
pub type Dataset = scene_model::SceneDataset<Scalar>;
pub type Gaussian = rasterizer::GaussianPrimitive<Scalar>;
pub type Scene = rasterizer::GaussianScene<Scalar>;
pub type Render = rasterizer::RenderOutput<Scalar>;

pub type Camera32 = scene_model::Camera<f32>;
pub type Image32 = scene_model::ImageBuffer<f32>;
pub type Scene32 = rasterizer::GaussianScene<f32>;
