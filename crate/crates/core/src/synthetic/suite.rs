//! The locked benchmark scenes S1 to S5.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::content::{arc_cameras, gt_render_options};
use super::{composite_distractors, distractor_fraction, generate_scene, GeneratorConfig};
use crate::error::{Error, Result};
use crate::rasterizer::{render_with, GaussianScene};
use crate::scene_model::{save_dataset, save_mask_png, write_json, BinaryMask, Camera, EntityMap, SceneDataset};

/// Pool size and views per query used by every suite scene.
pub const SUITE_POOL: usize = 8;
pub const SUITE_QUERIES: [usize; 3] = [3, 6, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuiteScene {
    /// No distractors.
    S1,
    /// Distractors in the query views only.
    S2,
    /// Distractors in the pool views only.
    S3,
    /// 30% transient coverage in every view.
    S4,
    /// Half of each pool looks away from the scene.
    S5,
}

impl SuiteScene {
    pub const ALL: [SuiteScene; 5] = [Self::S1, Self::S2, Self::S3, Self::S4, Self::S5];

    pub fn name(self) -> &'static str {
        match self {
            Self::S1 => "S1",
            Self::S2 => "S2",
            Self::S3 => "S3",
            Self::S4 => "S4",
            Self::S5 => "S5",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::S1 => "clean",
            Self::S2 => "query-only distractors",
            Self::S3 => "reference-only distractors",
            Self::S4 => "30% transient distractors in every view",
            Self::S5 => "disjoint-frustum pool",
        }
    }

    pub fn seed(self) -> u64 {
        match self {
            Self::S1 => 1101,
            Self::S2 => 1202,
            Self::S3 => 1303,
            Self::S4 => 1404,
            Self::S5 => 1505,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown suite scene {name:?}")))
    }

    pub fn config(self, width: usize, height: usize) -> GeneratorConfig {
        let mut cfg = GeneratorConfig { seed: self.seed(), width, height, ..GeneratorConfig::default() };
        let d = &mut cfg.distractors;
        let non_query: Vec<usize> = (0..cfg.views).filter(|v| !SUITE_QUERIES.contains(v)).collect();
        match self {
            Self::S1 | Self::S5 => {}
            Self::S2 => {
                d.coverage = Some(0.2);
                d.views = Some(SUITE_QUERIES.to_vec());
            }
            Self::S3 => {
                d.coverage = Some(0.2);
                d.views = Some(non_query);
            }
            Self::S4 => d.coverage = Some(0.3),
        }
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedMetrics {
    pub baseline_psnr: Option<f64>,
    pub full_psnr: Option<f64>,
    pub mask_iou: Option<f64>,
    pub mask_recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub id: SuiteScene,
    pub description: String,
    pub config: GeneratorConfig,
    pub queries: Vec<usize>,
    /// Pool view indices for each query, nearest first.
    pub pools: Vec<Vec<usize>>,
    /// Distractor fraction of every view, from the ground-truth masks.
    pub distractor_fractions: Vec<f64>,
    pub mean_distractor_fraction: f64,
    pub expected: ExpectedMetrics,
}

#[derive(Clone, Debug)]
pub struct BenchmarkScene {
    pub entry: SuiteEntry,
    pub dataset: SceneDataset<f64>,
    pub ground_truth: GaussianScene<f64>,
}

/// Views other than `exclude`, nearest camera center to `query` first, ties
/// by index.
pub fn nearest_views(cameras: &[Camera<f64>], query: usize, exclude: &[usize], k: usize) -> Vec<usize> {
    let q = cameras[query].center();
    let mut order: Vec<(f64, usize)> = (0..cameras.len())
        .filter(|i| *i != query && !exclude.contains(i))
        .map(|i| ((cameras[i].center() - q).norm(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Appends cameras on the arc that look directly away from the target.
fn append_away_views(
    ds: &mut SceneDataset<f64>,
    gt: &GaussianScene<f64>,
    cfg: &GeneratorConfig,
    count: usize,
) -> Result<Vec<usize>> {
    let arc = arc_cameras(&GeneratorConfig { views: count, ..cfg.clone() })?;
    let target = nalgebra::Vector3::from(cfg.arc.target);
    let (w, h) = (cfg.width, cfg.height);
    let mut added = Vec::new();
    for cam in arc {
        let eye = cam.center();
        let away = eye + (eye - target);
        let f = cfg.arc.focal_factor * w as f64;
        let c = Camera::look_at(
            eye,
            away,
            nalgebra::Vector3::new(0.0, -1.0, 0.0),
            f,
            f,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
        )?;
        let r = render_with(gt, &c, &gt_render_options())?;
        added.push(ds.cameras.len());
        ds.cameras.push(c);
        ds.images.push(r.color.clone());
        if let Some(v) = ds.depths.as_mut() {
            v.push(r.depth);
        }
        if let Some(v) = ds.clean_images.as_mut() {
            v.push(r.color);
        }
        if let Some(v) = ds.distractor_masks.as_mut() {
            v.push(BinaryMask::ones(w, h));
        }
        if let Some(v) = ds.entities.as_mut() {
            v.push(EntityMap::new(w, h, vec![0; w * h])?);
        }
    }
    ds.validate()?;
    Ok(added)
}

pub fn benchmark_scene(id: SuiteScene, width: usize, height: usize) -> Result<BenchmarkScene> {
    benchmark_scene_seeded(id, width, height, id.seed())
}

/// Same layout as [`benchmark_scene`] with a different generator seed.
pub fn benchmark_scene_seeded(id: SuiteScene, width: usize, height: usize, seed: u64) -> Result<BenchmarkScene> {
    let cfg = GeneratorConfig { seed, ..id.config(width, height) };
    let (clean, gt) = generate_scene(&cfg)?;
    let mut dataset = composite_distractors(&clean, &cfg)?;
    dataset.name = id.name().to_string();
    let queries = SUITE_QUERIES.to_vec();
    let pools = if id == SuiteScene::S5 {
        let away = append_away_views(&mut dataset, &gt, &cfg, SUITE_POOL / 2)?;
        queries
            .iter()
            .map(|q| {
                let mut p = nearest_views(&dataset.cameras[..cfg.views], *q, &queries, SUITE_POOL / 2);
                p.extend(&away);
                p
            })
            .collect()
    } else {
        queries.iter().map(|q| nearest_views(&dataset.cameras, *q, &queries, SUITE_POOL)).collect()
    };
    let fractions: Vec<f64> =
        dataset.distractor_masks.as_ref().expect("generator records masks").iter().map(distractor_fraction).collect();
    let affected: Vec<f64> = fractions.iter().copied().filter(|f| *f > 0.0).collect();
    let mean = if affected.is_empty() { 0.0 } else { affected.iter().sum::<f64>() / affected.len() as f64 };
    let entry = SuiteEntry {
        id,
        description: id.description().to_string(),
        config: cfg,
        queries,
        pools,
        distractor_fractions: fractions,
        mean_distractor_fraction: mean,
        expected: ExpectedMetrics::default(),
    };
    Ok(BenchmarkScene { entry, dataset, ground_truth: gt })
}

/// Writes one suite scene directory: the dataset layout, a copy of the
/// ground-truth masks under `distractor_masks/`, and `manifest.json`.
pub fn save_benchmark_scene(scene: &BenchmarkScene, dir: &Path) -> Result<()> {
    save_dataset(&scene.dataset, dir)?;
    if let Some(masks) = &scene.dataset.distractor_masks {
        let sub = dir.join("distractor_masks");
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, m) in masks.iter().enumerate() {
            save_mask_png(&sub.join(format!("{i:04}.png")), m)?;
        }
    }
    write_json(&dir.join("manifest.json"), &scene.entry)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub width: usize,
    pub height: usize,
    pub scenes: Vec<SuiteEntry>,
}

/// Generates and writes S1 to S5 under `out_dir`.
pub fn make_benchmark_suite(out_dir: &Path, width: usize, height: usize) -> Result<SuiteManifest> {
    let mut scenes = Vec::new();
    for id in SuiteScene::ALL {
        let s = benchmark_scene(id, width, height)?;
        save_benchmark_scene(&s, &out_dir.join(id.name()))?;
        scenes.push(s.entry);
    }
    let manifest = SuiteManifest { width, height, scenes };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
