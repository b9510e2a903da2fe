//! Pointwise mask algebra: fusion, coverage, entity snapping and the final
//! recombination.

use super::warp::warp_mask;
use super::{DisparityRule, MaskCascadeConfig};
use crate::error::{check_dims, Error, Result};
use crate::real::Real;
use crate::scene_model::{BinaryMask, Camera, DepthMap, EntityMap};

/// `M_Q = (AND of warped masks) OR M_Rob`.
pub fn fuse_query_mask(warped: &[BinaryMask], robust: &BinaryMask) -> Result<BinaryMask> {
    let first =
        warped.first().ok_or_else(|| Error::InvalidInput("fuse_query_mask needs at least one warped mask".into()))?;
    let mut inter = first.clone();
    for m in &warped[1..] {
        inter = inter.and(m)?;
    }
    inter.or(robust)
}

/// Coverage of the query by the references: union of all-ones masks warped
/// from every reference. Under `InvertedUnion` the result is covered only
/// where every reference reaches.
pub fn disparity_mask<T: Real>(
    refs: &[(&Camera<T>, &DepthMap<T>)],
    query_cam: &Camera<T>,
    query_depth: &DepthMap<T>,
    z_tolerance: f64,
    rule: DisparityRule,
) -> Result<BinaryMask> {
    if refs.is_empty() {
        return Err(Error::InvalidInput("disparity_mask needs at least one reference".into()));
    }
    let (w, h) = query_cam.dims();
    let mut union = BinaryMask::zeros(w, h);
    let mut missing = BinaryMask::zeros(w, h);
    for (cam, depth) in refs {
        let ones = BinaryMask::ones(cam.width(), cam.height());
        let (c, _) = warp_mask(&ones, depth, cam, query_cam, query_depth, z_tolerance)?;
        union = union.or(&c)?;
        missing = missing.or(&c.not())?;
    }
    Ok(match rule {
        DisparityRule::CoverageUnion => union,
        DisparityRule::InvertedUnion => missing.not(),
    })
}

/// Snaps a mask to entity boundaries. An entity whose share of 0-bits exceeds
/// `fill_fraction` becomes all 0, otherwise all 1. ID 0 pixels pass through.
pub fn entity_fill(mask: &BinaryMask, entities: &EntityMap, fill_fraction: f64) -> Result<BinaryMask> {
    check_dims("entity fill", mask.dims(), entities.dims())?;
    let n = entities.max_id() as usize + 1;
    let mut zeros = vec![0usize; n];
    let mut total = vec![0usize; n];
    for (bit, id) in mask.data().iter().zip(entities.data()) {
        total[*id as usize] += 1;
        if !bit {
            zeros[*id as usize] += 1;
        }
    }
    let masked_out: Vec<bool> = (0..n).map(|e| zeros[e] as f64 > fill_fraction * total[e] as f64).collect();
    let (w, h) = mask.dims();
    let data = mask
        .data()
        .iter()
        .zip(entities.data())
        .map(|(bit, id)| if *id == 0 { *bit } else { !masked_out[*id as usize] })
        .collect();
    BinaryMask::new(w, h, data)
}

/// Final mask. Outside coverage the result is 0; inside, it is the
/// entity-filled `M_Q` where uncovered pixels do not count as candidates.
pub fn refine_mask(
    m_q: &BinaryMask,
    m_d: &BinaryMask,
    entities: &EntityMap,
    cfg: &MaskCascadeConfig,
) -> Result<BinaryMask> {
    check_dims("refine mask", m_q.dims(), m_d.dims())?;
    let candidates = m_q.or(&m_d.not())?;
    entity_fill(&candidates, entities, cfg.fill_fraction)?.and(m_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], w: usize) -> BinaryMask {
        BinaryMask::new(w, bits.len() / w, bits.iter().map(|b| *b == 1).collect()).unwrap()
    }

    #[test]
    fn fuse_identities() {
        let rob = mask(&[1, 0, 1, 0], 2);
        let ones = BinaryMask::ones(2, 2);
        let zeros = BinaryMask::zeros(2, 2);
        assert_eq!(fuse_query_mask(&[ones.clone(), ones], &rob).unwrap(), BinaryMask::ones(2, 2));
        assert_eq!(fuse_query_mask(&[zeros.clone(), zeros], &rob).unwrap(), rob);
        assert!(fuse_query_mask(&[], &rob).is_err());
    }

    #[test]
    fn entity_fill_rule() {
        // Entity 1: 10 pixels, 6 zero. Entity 2: 10 pixels, 1 zero.
        let ids: Vec<u32> = (0..20).map(|i| if i < 10 { 1 } else { 2 }).collect();
        let ents = EntityMap::new(20, 1, ids).unwrap();
        let bits: Vec<u8> = (0..20).map(|i| if i < 6 || i == 15 { 0 } else { 1 }).collect();
        let out = entity_fill(&mask(&bits, 20), &ents, 0.5).unwrap();
        assert!((0..10).all(|i| !out.at(i)));
        assert!((10..20).all(|i| out.at(i)));
    }

    #[test]
    fn entity_fill_exactly_at_threshold_keeps_entity() {
        let ents = EntityMap::new(4, 1, vec![1; 4]).unwrap();
        let out = entity_fill(&mask(&[0, 0, 1, 1], 4), &ents, 0.5).unwrap();
        assert_eq!(out.count_ones(), 4);
    }

    #[test]
    fn unlabeled_pixels_pass_through() {
        let ents = EntityMap::new(4, 1, vec![0, 0, 1, 1]).unwrap();
        let out = entity_fill(&mask(&[0, 1, 0, 0], 4), &ents, 0.5).unwrap();
        assert_eq!(out, mask(&[0, 1, 0, 0], 4));
    }

    #[test]
    fn refine_without_disparity_region_is_entity_fill() {
        let ents = EntityMap::new(4, 1, vec![1, 1, 2, 2]).unwrap();
        let mq = mask(&[0, 0, 0, 1], 4);
        let cfg = MaskCascadeConfig::default();
        let out = refine_mask(&mq, &BinaryMask::ones(4, 1), &ents, &cfg).unwrap();
        assert_eq!(out, entity_fill(&mq, &ents, 0.5).unwrap());
    }

    #[test]
    fn refine_zero_exactly_on_margin() {
        let ents = EntityMap::new(4, 1, vec![1, 1, 1, 1]).unwrap();
        let md = mask(&[0, 1, 1, 0], 4);
        let out = refine_mask(&BinaryMask::ones(4, 1), &md, &ents, &MaskCascadeConfig::default()).unwrap();
        assert_eq!(out, md);
    }

    #[test]
    fn disjoint_frusta_give_no_coverage() {
        use nalgebra::{Matrix3, Vector3};
        let q = Camera::from_parts(20.0, 20.0, 8.0, 8.0, 16, 16, Matrix3::identity(), Vector3::zeros()).unwrap();
        // Looking backwards: rotation of pi about y.
        let r = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let back = Camera::from_parts(20.0, 20.0, 8.0, 8.0, 16, 16, r, Vector3::zeros()).unwrap();
        let d = DepthMap::filled(16, 16, 2.0).unwrap();
        let c = disparity_mask(&[(&back, &d)], &q, &d, 0.01, DisparityRule::CoverageUnion).unwrap();
        assert_eq!(c.count_ones(), 0);
        let c = disparity_mask(&[(&q, &d)], &q, &d, 0.01, DisparityRule::CoverageUnion).unwrap();
        assert_eq!(c.count_ones(), 256);
    }
}
