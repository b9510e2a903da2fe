mod common;

use dfgs::scene_model::{EntityMap, ImageBuffer};
use dfgs::segmentation::{cache_segmentations, segment_color_components, ColorComponents, GroundTruthEntities};
use dfgs::synthetic::{generate_scene, GeneratorConfig};
use proptest::prelude::*;
use rand::Rng;

/// Relabels a partition by raster order of first appearance.
fn canonical(ids: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    ids.iter()
        .map(|id| {
            let n = map.len() as u32;
            *map.entry(*id).or_insert(n)
        })
        .collect()
}

/// Union-find over 4-neighbors with equal bins.
fn components_oracle(bins: &[u32], w: usize) -> Vec<u32> {
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut p: Vec<usize> = (0..bins.len()).collect();
    for i in 0..bins.len() {
        let mut join = |j: usize| {
            if bins[i] == bins[j] {
                let (a, b) = (find(&mut p, i), find(&mut p, j));
                p[a.max(b)] = a.min(b);
            }
        };
        if i % w + 1 < w {
            join(i + 1);
        }
        if i + w < bins.len() {
            join(i + w);
        }
    }
    let roots: Vec<u32> = (0..bins.len()).map(|i| find(&mut p, i) as u32).collect();
    canonical(&roots)
}

fn bin_image(bins: &[u32], w: usize, h: usize, palette: &[[f64; 3]]) -> ImageBuffer<f64> {
    ImageBuffer::from_fn(w, h, |x, y| palette[bins[y * w + x] as usize])
}

#[test]
fn checkerboard_has_sixty_four_entities() {
    let img = ImageBuffer::from_fn(32, 32, |x, y| if (x / 4 + y / 4) % 2 == 0 { [0.1; 3] } else { [0.9; 3] });
    let e = segment_color_components(&img, 4, 1).unwrap();
    assert_eq!(e.entity_count(), 64);
    assert!(e.is_contiguous());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_union_find_and_ignores_recoloring(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (w, h) = (13, 9);
        let bins: Vec<u32> = (0..w * h).map(|_| r.gen_range(0..3)).collect();
        // Bin centers at 4 levels, so each color falls in a distinct bin.
        let pal_a = [[0.125, 0.125, 0.125], [0.625, 0.125, 0.375], [0.875, 0.875, 0.375]];
        let pal_b = [[0.375, 0.625, 0.875], [0.125, 0.875, 0.125], [0.625, 0.375, 0.625]];
        let a = segment_color_components(&bin_image(&bins, w, h, &pal_a), 4, 1).unwrap();
        let b = segment_color_components(&bin_image(&bins, w, h, &pal_b), 4, 1).unwrap();
        let oracle = components_oracle(&bins, w);
        prop_assert_eq!(canonical(a.data()), oracle.clone());
        prop_assert_eq!(a.data(), b.data());
        prop_assert_eq!(a.entity_count(), *oracle.iter().max().unwrap() as usize + 1);
    }

    #[test]
    fn min_region_leaves_no_small_entities(seed in 0u64..10_000, min in 2usize..6) {
        let mut r = common::rng(seed);
        let img = ImageBuffer::<f64>::from_fn(12, 12, |_, _| [r.gen(), r.gen(), r.gen()]);
        let e = segment_color_components(&img, 2, min).unwrap();
        let mut sizes = std::collections::BTreeMap::new();
        for id in e.data() {
            *sizes.entry(*id).or_insert(0usize) += 1;
        }
        prop_assert!(sizes.len() == 1 || sizes.values().all(|s| *s >= min));
    }
}

#[test]
fn cache_hits_misses_and_invalidates() {
    let cfg = GeneratorConfig { seed: 4, views: 3, width: 24, height: 20, ..GeneratorConfig::default() };
    let (mut ds, _) = generate_scene(&cfg).unwrap();
    let root = tempfile::tempdir().unwrap();
    let provider = ColorComponents { levels: 4, min_region: 4 };

    let first = cache_segmentations(&ds, &provider, root.path()).unwrap();
    assert_eq!(first.computed, 3);
    assert_eq!(first.manifest.hits, 0);
    let direct: Vec<EntityMap> = ds.images.iter().map(|i| segment_color_components(i, 4, 4).unwrap()).collect();
    assert_eq!(first.maps, direct);

    let second = cache_segmentations(&ds, &provider, root.path()).unwrap();
    assert_eq!(second.computed, 0);
    assert_eq!(second.manifest.hits, 1);
    assert_eq!(second.maps, first.maps);

    // Other parameters live under another key.
    let other = ColorComponents { levels: 3, min_region: 4 };
    let third = cache_segmentations(&ds, &other, root.path()).unwrap();
    assert_eq!(third.computed, 3);
    assert_ne!(third.directory, first.directory);

    // Changed image content invalidates the entry.
    ds.images[1] = ImageBuffer::filled(24, 20, [0.2, 0.3, 0.4]);
    let fourth = cache_segmentations(&ds, &provider, root.path()).unwrap();
    assert_eq!(fourth.computed, 3);
    assert_eq!(fourth.maps[1].entity_count(), 1);

    // A corrupt frame is recomputed rather than served.
    std::fs::write(fourth.directory.join("0000.png"), b"junk").unwrap();
    let fifth = cache_segmentations(&ds, &provider, root.path()).unwrap();
    assert_eq!(fifth.computed, 3);
    assert_eq!(fifth.maps, fourth.maps);
}

#[test]
fn ground_truth_provider_returns_stored_maps() {
    let cfg = GeneratorConfig { seed: 1, views: 2, width: 16, height: 16, ..GeneratorConfig::default() };
    let (ds, _) = generate_scene(&cfg).unwrap();
    let root = tempfile::tempdir().unwrap();
    let out = cache_segmentations(&ds, &GroundTruthEntities, root.path()).unwrap();
    assert_eq!(&out.maps, ds.entities.as_ref().unwrap());
}
