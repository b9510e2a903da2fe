//! Entity segmentation providers and an on-disk cache for their output.

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene_model::{
    frame_name, load_entities_png, read_json, save_entities_png, write_json, EntityMap, ImageBuffer, SceneDataset,
};

/// Produces an entity partition for one view of a dataset.
pub trait EntityProvider<T: Real>: Sync {
    fn name(&self) -> &str;
    /// Parameters that affect the output; part of the cache key.
    fn params(&self) -> serde_json::Value;
    fn segment(&self, dataset: &SceneDataset<T>, view: usize) -> Result<EntityMap>;
}

/// Returns the entity maps stored with the dataset.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthEntities;

pub fn segment_ground_truth<T: Real>(dataset: &SceneDataset<T>, view: usize) -> Result<EntityMap> {
    let maps = dataset
        .entities
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("{}: dataset has no entity maps", dataset.name)))?;
    maps.get(view)
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("view {view} out of range ({} views)", maps.len())))
}

impl<T: Real> EntityProvider<T> for GroundTruthEntities {
    fn name(&self) -> &str {
        "ground-truth"
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({})
    }

    fn segment(&self, dataset: &SceneDataset<T>, view: usize) -> Result<EntityMap> {
        segment_ground_truth(dataset, view)
    }
}

/// Color quantization followed by 4-connected components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorComponents {
    pub levels: u32,
    pub min_region: usize,
}

impl Default for ColorComponents {
    fn default() -> Self {
        Self { levels: 4, min_region: 16 }
    }
}

impl<T: Real> EntityProvider<T> for ColorComponents {
    fn name(&self) -> &str {
        "color-components"
    }

    fn params(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain struct serializes")
    }

    fn segment(&self, dataset: &SceneDataset<T>, view: usize) -> Result<EntityMap> {
        let img = dataset
            .images
            .get(view)
            .ok_or_else(|| Error::InvalidInput(format!("view {view} out of range ({} views)", dataset.len())))?;
        segment_color_components(img, self.levels, self.min_region)
    }
}

fn quantize<T: Real>(image: &ImageBuffer<T>, levels: u32) -> Vec<u32> {
    let q = levels as f64;
    (0..image.width() * image.height())
        .map(|i| {
            let p = image.pixel_at(i);
            p.iter().fold(0u32, |acc, c| {
                let bin = ((c.as_f64() * q).floor() as u32).min(levels - 1);
                acc * levels + bin
            })
        })
        .collect()
}

/// Labels 4-connected regions of equal quantized color with IDs in raster
/// order of their first pixel. Regions smaller than `min_region` are merged
/// into their largest neighbor, lowest ID first. Every pixel is labeled.
pub fn segment_color_components<T: Real>(image: &ImageBuffer<T>, levels: u32, min_region: usize) -> Result<EntityMap> {
    if levels < 2 {
        return Err(Error::InvalidInput(format!("quantization levels must be >= 2, got {levels}")));
    }
    let (w, h) = image.dims();
    let colors = quantize(image, levels);
    let mut labels = vec![u32::MAX; w * h];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if labels[j] == u32::MAX && colors[j] == colors[i] {
                    labels[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }
    if min_region > 1 {
        merge_small_regions(&mut labels, &mut sizes, w, h, min_region);
    }
    EntityMap::compacted(w, h, labels.into_iter().map(|l| l + 1).collect())
}

fn merge_small_regions(labels: &mut [u32], sizes: &mut [usize], w: usize, h: usize, min_region: usize) {
    let n = sizes.len();
    let mut adjacency: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for y in 0..h {
        for x in 0..w {
            let a = labels[y * w + x];
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < w && ny < h {
                    let b = labels[ny * w + nx];
                    if a != b {
                        adjacency[a as usize].insert(b);
                        adjacency[b as usize].insert(a);
                    }
                }
            }
        }
    }
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], mut i: u32) -> u32 {
        while parent[i as usize] != i {
            let p = parent[parent[i as usize] as usize];
            parent[i as usize] = p;
            i = p;
        }
        i
    }
    for r in 0..n as u32 {
        if find(&mut parent, r) != r || sizes[r as usize] >= min_region {
            continue;
        }
        let neighbors: BTreeSet<u32> =
            adjacency[r as usize].iter().map(|b| find(&mut parent, *b)).filter(|b| *b != r).collect();
        // Largest neighbor; BTreeSet order breaks ties toward the lowest ID.
        let Some(target) = neighbors.iter().copied().fold(None, |best: Option<u32>, b| match best {
            Some(a) if sizes[a as usize] >= sizes[b as usize] => Some(a),
            _ => Some(b),
        }) else {
            continue;
        };
        parent[r as usize] = target;
        sizes[target as usize] += sizes[r as usize];
        let moved = std::mem::take(&mut adjacency[r as usize]);
        adjacency[target as usize].extend(moved);
    }
    for l in labels.iter_mut() {
        *l = find(&mut parent, *l);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub provider: String,
    pub params: serde_json::Value,
    pub dataset_digest: String,
    pub views: usize,
    /// Number of runs served entirely from the cache.
    pub hits: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheOutcome {
    pub maps: Vec<EntityMap>,
    pub manifest: CacheManifest,
    /// Views segmented during this call; 0 on a cache hit.
    pub computed: usize,
    pub directory: PathBuf,
}

fn provider_key<T: Real>(provider: &dyn EntityProvider<T>) -> String {
    let mut h = Sha256::new();
    h.update(provider.name().as_bytes());
    h.update([0]);
    h.update(provider.params().to_string().as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Digest of the image content, so a cache is never served for other data.
fn dataset_digest<T: Real>(dataset: &SceneDataset<T>) -> String {
    let mut h = Sha256::new();
    for img in &dataset.images {
        h.update((img.width() as u64).to_le_bytes());
        h.update((img.height() as u64).to_le_bytes());
        for c in img.data() {
            h.update(c.as_f64().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn load_cached(dir: &Path, manifest: &CacheManifest) -> Option<Vec<EntityMap>> {
    (0..manifest.views).map(|i| load_entities_png(&frame_name(dir, i, "png")).ok()).collect()
}

/// Segments every view, reusing `cache_root/entities/<provider-key>/` when its
/// manifest matches the provider parameters and dataset content.
pub fn cache_segmentations<T: Real>(
    dataset: &SceneDataset<T>,
    provider: &dyn EntityProvider<T>,
    cache_root: &Path,
) -> Result<CacheOutcome> {
    let dir = cache_root.join("entities").join(provider_key(provider));
    let manifest_path = dir.join("manifest.json");
    let expected = CacheManifest {
        provider: provider.name().to_string(),
        params: provider.params(),
        dataset_digest: dataset_digest(dataset),
        views: dataset.len(),
        hits: 0,
    };
    if manifest_path.exists() {
        match read_json::<CacheManifest>(&manifest_path) {
            Ok(mut m) if CacheManifest { hits: 0, ..m.clone() } == expected => {
                let dims_ok =
                    |maps: &Vec<EntityMap>| maps.iter().zip(&dataset.cameras).all(|(e, c)| e.dims() == c.dims());
                match load_cached(&dir, &m) {
                    Some(maps) if dims_ok(&maps) => {
                        m.hits += 1;
                        write_json(&manifest_path, &m)?;
                        return Ok(CacheOutcome { maps, manifest: m, computed: 0, directory: dir });
                    }
                    _ => log::warn!("{}: cached entity maps unreadable; recomputing", dir.display()),
                }
            }
            Ok(_) => log::warn!("{}: cache manifest does not match; recomputing", dir.display()),
            Err(e) => log::warn!("{}: {e}; recomputing", manifest_path.display()),
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let maps = (0..dataset.len()).map(|i| provider.segment(dataset, i)).collect::<Result<Vec<_>>>()?;
    for (i, m) in maps.iter().enumerate() {
        save_entities_png(&frame_name(&dir, i, "png"), m)?;
    }
    write_json(&manifest_path, &expected)?;
    Ok(CacheOutcome { computed: maps.len(), maps, manifest: expected, directory: dir })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_and_half_gives_two_entities() {
        let img = ImageBuffer::from_fn(8, 4, |x, _| if x < 4 { [0.1; 3] } else { [0.9; 3] });
        let e = segment_color_components(&img, 4, 1).unwrap();
        assert_eq!(e.entity_count(), 2);
        assert_eq!(e.get(0, 0), 1);
        assert_eq!(e.get(7, 3), 2);
    }

    #[test]
    fn constant_image_is_one_entity() {
        let img = ImageBuffer::filled(5, 5, [0.3, 0.6, 0.2]);
        let e = segment_color_components(&img, 8, 4).unwrap();
        assert_eq!(e.entity_count(), 1);
        assert!(e.data().iter().all(|i| *i == 1));
    }

    #[test]
    fn small_region_merges_into_largest_neighbor() {
        // Left block 4 wide, right block 2 wide, one odd pixel on the boundary.
        let img = ImageBuffer::from_fn(6, 3, |x, y| {
            if x == 3 && y == 1 {
                [0.5, 0.1, 0.1]
            } else if x < 4 {
                [0.1; 3]
            } else {
                [0.9; 3]
            }
        });
        let e = segment_color_components(&img, 4, 2).unwrap();
        assert_eq!(e.entity_count(), 2);
        assert_eq!(e.get(3, 1), e.get(0, 0));
    }

    #[test]
    fn rejects_single_level() {
        assert!(segment_color_components(&ImageBuffer::<f64>::filled(2, 2, [0.0; 3]), 1, 1).is_err());
    }
}
