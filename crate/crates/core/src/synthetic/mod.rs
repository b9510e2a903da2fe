//! Deterministic multi-view scenes with ground-truth depth, entities and
//! transient distractors.

mod config;
mod content;
mod sprites;
mod suite;

pub use config::{ArcConfig, ContentConfig, DistractorConfig, DistractorMode, GeneratorConfig};
pub use content::generate_scene;
pub use sprites::{composite_distractors, distractor_fraction};
pub use suite::{
    benchmark_scene, benchmark_scene_seeded, make_benchmark_suite, nearest_views, save_benchmark_scene, BenchmarkScene,
    ExpectedMetrics, SuiteEntry, SuiteManifest, SuiteScene, SUITE_POOL, SUITE_QUERIES,
};
