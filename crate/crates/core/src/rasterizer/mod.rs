//! Gaussian splatting forward renderer with a brute-force reference path.

mod backward;
mod gaussian;
mod render;

pub use backward::{weighted_mse_grad, ColorOpacityGrad};
pub use gaussian::{
    project_gaussian, quaternion_mul, quaternion_to_matrix, screen_footprint, GaussianPrimitive, GaussianScene,
    Provenance, Splat, SplatProjection, ALPHA_CUTOFF, ALPHA_MAX, LOWPASS_DILATION, MAX_CONDITION,
};
pub use render::{
    render, render_bruteforce, render_bruteforce_with, render_dominant, render_with, DepthMode, RenderOptions,
    RenderOutput, RenderStats, DEFAULT_NEAR, TILE_SIZE, TRANSMITTANCE_MIN,
};
