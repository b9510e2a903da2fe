use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-reference coverage warps are merged into the disparity mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisparityRule {
    /// Covered wherever at least one reference reaches the pixel.
    #[default]
    CoverageUnion,
    /// Complement of the union of per-reference non-coverage: covered only
    /// where every reference reaches the pixel.
    InvertedUnion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskCascadeConfig {
    /// Inlier threshold is `rho1_scale * median(residual)` ...
    pub rho1_scale: f64,
    /// ... but never below this floor.
    pub rho1_floor: f64,
    /// Vote threshold on the smoothed inlier field.
    pub rho2: f64,
    pub box_kernel: usize,
    pub patch_kernel: usize,
    /// Reference re-render residual threshold.
    pub rho_ref: f64,
    /// Fraction of an entity's pixels that must be flagged before the whole
    /// entity is flagged.
    pub fill_fraction: f64,
    /// Relative depth tolerance of the warp occlusion test.
    pub z_tolerance: f64,
    /// When set, a reference only vouches for a query pixel if its warped
    /// color agrees with the query color to within this squared residual.
    pub vote_consistency: Option<f64>,
    pub disparity_rule: DisparityRule,
    /// Mean residual above which the robust mask logs a warning.
    pub residual_warning: f64,
}

impl Default for MaskCascadeConfig {
    fn default() -> Self {
        Self {
            rho1_scale: 1.5,
            rho1_floor: 1e-4,
            rho2: 0.5,
            box_kernel: 3,
            patch_kernel: 16,
            rho_ref: 0.001,
            fill_fraction: 0.5,
            z_tolerance: 0.01,
            vote_consistency: Some(0.01),
            disparity_rule: DisparityRule::CoverageUnion,
            residual_warning: 0.1,
        }
    }
}

impl MaskCascadeConfig {
    /// Same settings for images resampled by `scale`: kernel sizes shrink
    /// with the image so they span the same content.
    pub fn scaled(&self, scale: f64) -> Self {
        let k = |n: usize| ((n as f64 * scale).round() as usize).max(1);
        Self { box_kernel: k(self.box_kernel), patch_kernel: k(self.patch_kernel), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho1_scale", self.rho1_scale),
            ("rho2", self.rho2),
            ("rho_ref", self.rho_ref),
            ("z_tolerance", self.z_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho1_floor >= 0.0) {
            return Err(Error::Config("rho1_floor must be nonnegative".into()));
        }
        if !(self.fill_fraction > 0.0 && self.fill_fraction <= 1.0) {
            return Err(Error::Config(format!("fill_fraction must be in (0, 1], got {}", self.fill_fraction)));
        }
        if self.box_kernel == 0 || self.patch_kernel == 0 {
            return Err(Error::Config("kernel sizes must be nonzero".into()));
        }
        if let Some(v) = self.vote_consistency {
            if !(v > 0.0) {
                return Err(Error::Config("vote_consistency must be positive".into()));
            }
        }
        Ok(())
    }
}
