use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArcConfig {
    pub radius: f64,
    /// Camera height above the target (world y points down).
    pub height: f64,
    pub span_degrees: f64,
    pub target: [f64; 3],
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
}

impl Default for ArcConfig {
    fn default() -> Self {
        Self { radius: 4.0, height: 0.6, span_degrees: 48.0, target: [0.0; 3], focal_factor: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentConfig {
    pub cards: usize,
    pub blobs: usize,
    /// Distance of the backdrop plane behind the target.
    pub backdrop_distance: f64,
    /// Primitive spacing in backdrop pixels.
    pub spacing_px: f64,
    pub palette: Vec<[f64; 3]>,
    pub texture_amplitude: f64,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            cards: 3,
            blobs: 2,
            backdrop_distance: 2.0,
            spacing_px: 2.0,
            palette: vec![
                [0.62, 0.58, 0.52],
                [0.35, 0.45, 0.55],
                [0.55, 0.40, 0.30],
                [0.40, 0.52, 0.38],
                [0.70, 0.66, 0.45],
                [0.45, 0.38, 0.50],
            ],
            texture_amplitude: 0.18,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DistractorMode {
    /// Independent sprite placement in every view.
    #[default]
    Transient,
    /// The same placement is reused for runs of `persist` consecutive views.
    SemiStatic { persist: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractorConfig {
    /// Sprites per view when no coverage target is set.
    pub sprites_per_view: usize,
    /// Target fraction of each affected view covered by sprites.
    pub coverage: Option<f64>,
    /// Sprite radius range as a fraction of the shorter image side.
    pub size_range: [f64; 2],
    pub mode: DistractorMode,
    /// Views that receive sprites; `None` means all.
    pub views: Option<Vec<usize>>,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        Self {
            sprites_per_view: 0,
            coverage: None,
            size_range: [0.08, 0.2],
            mode: DistractorMode::Transient,
            views: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub arc: ArcConfig,
    pub content: ContentConfig,
    pub distractors: DistractorConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            views: 13,
            width: 256,
            height: 256,
            arc: ArcConfig::default(),
            content: ContentConfig::default(),
            distractors: DistractorConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views < 2 {
            return Err(Error::Config(format!("need at least 2 views, got {}", self.views)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config("image must be at least 8x8".into()));
        }
        if !(self.arc.span_degrees.abs() > 0.0) {
            return Err(Error::Config("camera arc span must be nonzero".into()));
        }
        if !(self.arc.radius > 0.0 && self.arc.focal_factor > 0.0) {
            return Err(Error::Config("arc radius and focal factor must be positive".into()));
        }
        if !(self.content.spacing_px > 0.0 && self.content.backdrop_distance > 0.0) {
            return Err(Error::Config("spacing and backdrop distance must be positive".into()));
        }
        if self.content.palette.is_empty() {
            return Err(Error::Config("palette must not be empty".into()));
        }
        let [lo, hi] = self.distractors.size_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::Config(format!("sprite size range [{lo}, {hi}] must lie in (0, 0.5]")));
        }
        if let Some(c) = self.distractors.coverage {
            if !(0.0..0.9).contains(&c) {
                return Err(Error::Config(format!("coverage target {c} outside [0, 0.9)")));
            }
        }
        if let DistractorMode::SemiStatic { persist: 0 } = self.distractors.mode {
            return Err(Error::Config("semi-static persistence must be at least 1".into()));
        }
        if let Some(v) = &self.distractors.views {
            if let Some(bad) = v.iter().find(|i| **i >= self.views) {
                return Err(Error::Config(format!("distractor view {bad} out of range")));
            }
        }
        Ok(())
    }
}
