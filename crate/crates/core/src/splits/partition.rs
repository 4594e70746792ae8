//! Test-batch construction: random batches and geographically coherent
//! batches from a recursive spatial subdivision.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Axis-aligned bounding box in lon/lat degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn around(points: &[(u64, (f64, f64))]) -> BBox {
        let mut b = BBox {
            min_lon: f64::INFINITY,
            min_lat: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
            max_lat: f64::NEG_INFINITY,
        };
        for &(_, (lon, lat)) in points {
            b.min_lon = b.min_lon.min(lon);
            b.max_lon = b.max_lon.max(lon);
            b.min_lat = b.min_lat.min(lat);
            b.max_lat = b.max_lat.max(lat);
        }
        b
    }

    pub fn contains(&self, (lon, lat): (f64, f64)) -> bool {
        lon >= self.min_lon && lon <= self.max_lon && lat >= self.min_lat && lat <= self.max_lat
    }

    /// True when the open interiors of the boxes do not overlap. Shared
    /// edges are allowed.
    pub fn interior_disjoint(&self, other: &BBox) -> bool {
        self.max_lon <= other.min_lon
            || other.max_lon <= self.min_lon
            || self.max_lat <= other.min_lat
            || other.max_lat <= self.min_lat
    }
}

/// One geographically coherent batch: member tile ids (ascending) and the
/// tight bounding box of their locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoBatch {
    pub tile_ids: Vec<u64>,
    pub bbox: BBox,
}

/// Recursive spatial subdivision into batches of exactly `batch_size`
/// tiles, except a single final batch of `batch_size + N % batch_size`.
///
/// Each node splits along its wider axis (longitude on ties); tiles are
/// ordered by coordinate with ties broken by tile id, and the left child
/// receives a multiple of `batch_size`. The remainder is carried down the
/// right spine, so the oversized batch is the last leaf in recursion order.
pub fn geographic_partition(
    points: &[(u64, (f64, f64))],
    batch_size: usize,
) -> Result<Vec<GeoBatch>> {
    if batch_size == 0 {
        return Err(LabError::Config("batch size is zero".into()));
    }
    if points.len() < batch_size {
        return Err(LabError::Split(format!(
            "{} tiles cannot fill one batch of {}",
            points.len(),
            batch_size
        )));
    }
    {
        let mut ids: Vec<u64> = points.iter().map(|p| p.0).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != points.len() {
            return Err(LabError::Split("duplicate tile ids in partition input".into()));
        }
    }
    for &(id, (lon, lat)) in points {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(LabError::Split(format!("tile {}: non-finite location", id)));
        }
    }

    let quotient = points.len() / batch_size;
    let mut work: Vec<(u64, (f64, f64))> = points.to_vec();
    let mut out = Vec::with_capacity(quotient);
    subdivide(&mut work, quotient, batch_size, &mut out);
    Ok(out)
}

fn subdivide(
    points: &mut [(u64, (f64, f64))],
    leaves: usize,
    batch_size: usize,
    out: &mut Vec<GeoBatch>,
) {
    if leaves == 1 {
        let mut ids: Vec<u64> = points.iter().map(|p| p.0).collect();
        ids.sort_unstable();
        out.push(GeoBatch {
            tile_ids: ids,
            bbox: BBox::around(points),
        });
        return;
    }
    let bbox = BBox::around(points);
    let split_lon = bbox.max_lon - bbox.min_lon >= bbox.max_lat - bbox.min_lat;
    if split_lon {
        points.sort_by(|a, b| {
            a.1 .0
                .partial_cmp(&b.1 .0)
                .expect("finite coords")
                .then(a.0.cmp(&b.0))
        });
    } else {
        points.sort_by(|a, b| {
            a.1 .1
                .partial_cmp(&b.1 .1)
                .expect("finite coords")
                .then(a.0.cmp(&b.0))
        });
    }
    let left_leaves = leaves / 2;
    let cut = left_leaves * batch_size;
    let (left, right) = points.split_at_mut(cut);
    subdivide(left, left_leaves, batch_size, out);
    subdivide(right, leaves - left_leaves, batch_size, out);
}

/// Seeded random batches: ids are put in canonical ascending order,
/// shuffled once, and cut into consecutive chunks of `batch_size`, the
/// last chunk absorbing the remainder.
pub fn random_partition(ids: &[u64], batch_size: usize, seed: u64) -> Result<Vec<Vec<u64>>> {
    if batch_size == 0 {
        return Err(LabError::Config("batch size is zero".into()));
    }
    if ids.len() < batch_size {
        return Err(LabError::Split(format!(
            "{} tiles cannot fill one batch of {}",
            ids.len(),
            batch_size
        )));
    }
    let mut sorted: Vec<u64> = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(LabError::Split("duplicate tile ids in partition input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let quotient = sorted.len() / batch_size;
    let mut out = Vec::with_capacity(quotient);
    for b in 0..quotient {
        let end = if b + 1 == quotient {
            sorted.len()
        } else {
            (b + 1) * batch_size
        };
        out.push(sorted[b * batch_size..end].to_vec());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points(n: usize) -> Vec<(u64, (f64, f64))> {
        // Deterministic scatter without an RNG dependency.
        (0..n)
            .map(|i| {
                let x = (i as f64 * 37.0) % 100.0;
                let y = (i as f64 * 61.0) % 50.0;
                (i as u64, (x, y))
            })
            .collect()
    }

    #[test]
    fn sizes_for_twenty_tiles_batch_eight() {
        let batches = geographic_partition(&grid_points(20), 8).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.tile_ids.len()).collect();
        assert_eq!(sizes, vec![8, 12]);
    }

    #[test]
    fn exact_multiple_gives_equal_batches() {
        let batches = geographic_partition(&grid_points(64), 8).unwrap();
        assert_eq!(batches.len(), 8);
        assert!(batches.iter().all(|b| b.tile_ids.len() == 8));
    }

    #[test]
    fn oversized_batch_is_last() {
        let batches = geographic_partition(&grid_points(45), 8).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.tile_ids.len()).collect();
        assert_eq!(sizes, vec![8, 8, 8, 8, 13]);
    }

    #[test]
    fn cover_is_exact_and_disjoint() {
        let pts = grid_points(51);
        let batches = geographic_partition(&pts, 8).unwrap();
        let mut seen: Vec<u64> = batches.iter().flat_map(|b| b.tile_ids.clone()).collect();
        seen.sort_unstable();
        let want: Vec<u64> = (0..51).collect();
        assert_eq!(seen, want);
    }

    #[test]
    fn bboxes_contain_members_and_are_interior_disjoint() {
        let pts = grid_points(100);
        let batches = geographic_partition(&pts, 8).unwrap();
        let locate = |id: u64| pts.iter().find(|p| p.0 == id).unwrap().1;
        for b in &batches {
            for &id in &b.tile_ids {
                assert!(b.bbox.contains(locate(id)));
            }
        }
        for i in 0..batches.len() {
            for j in i + 1..batches.len() {
                assert!(
                    batches[i].bbox.interior_disjoint(&batches[j].bbox),
                    "batch {} and {} overlap",
                    i,
                    j
                );
            }
        }
    }

    #[test]
    fn degenerate_small_input_is_one_batch() {
        let batches = geographic_partition(&grid_points(9), 8).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].tile_ids.len(), 9);
        assert!(geographic_partition(&grid_points(7), 8).is_err());
    }

    #[test]
    fn coordinate_ties_are_broken_by_id() {
        // All points identical: ordering falls back to ids, so the result
        // is still a valid, deterministic partition.
        let pts: Vec<(u64, (f64, f64))> = (0..17).map(|i| (i, (1.0, 2.0))).collect();
        let batches = geographic_partition(&pts, 8).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.tile_ids.len()).collect();
        assert_eq!(sizes, vec![8, 9]);
        assert_eq!(batches[0].tile_ids, (0..8).collect::<Vec<u64>>());
    }

    #[test]
    fn random_partition_is_seeded_and_covering() {
        let ids: Vec<u64> = (0..30).collect();
        let a = random_partition(&ids, 8, 7).unwrap();
        let b = random_partition(&ids, 8, 7).unwrap();
        let c = random_partition(&ids, 8, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let sizes: Vec<usize> = a.iter().map(|v| v.len()).collect();
        assert_eq!(sizes, vec![8, 8, 14]);
        let mut all: Vec<u64> = a.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
    }

    #[test]
    fn random_partition_input_order_does_not_matter() {
        let ids: Vec<u64> = (0..30).collect();
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(
            random_partition(&ids, 8, 3).unwrap(),
            random_partition(&rev, 8, 3).unwrap()
        );
    }
}
