//! Intra-voxel sampling: a sparse 2D voxel grid holding at most `k` point
//! indices per non-empty voxel.

use super::hash::{pack, unpack, VoxelHash, EMPTY};
use super::PoolingError;
use crate::model::PointCloudFrame;

/// Voxel coordinate `(floor(x / v), floor(y / v))`.
pub type VoxelCoord = (i32, i32);

/// `floor(q)` as an integer, saturating like `f64::floor(q) as i64`.
/// Inlined arithmetic; `f64::floor` is a library call on baseline x86-64.
#[inline]
pub fn floor_i64(q: f64) -> i64 {
    let t = q as i64;
    if (t as f64) > q {
        t.saturating_sub(1)
    } else {
        t
    }
}

#[inline]
pub fn voxel_axis(value: f64, voxel_size: f64) -> i64 {
    floor_i64(value / voxel_size)
}

pub fn voxel_coord(x: f64, y: f64, voxel_size: f64) -> Result<VoxelCoord, PoolingError> {
    let i = voxel_axis(x, voxel_size);
    let j = voxel_axis(y, voxel_size);
    match (i32::try_from(i), i32::try_from(j)) {
        (Ok(i), Ok(j)) => Ok((i, j)),
        _ => Err(PoolingError::CoordinateOverflow { x, y }),
    }
}

/// Non-empty voxels live in a contiguous slot store: slot `s` owns
/// `indices[offsets[s]..offsets[s + 1]]`, at most `k` point indices in frame
/// order.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    max_points_per_voxel: usize,
    frame_index: u32,
    point_count: usize,
    seen: Vec<u32>,
    offsets: Vec<u32>,
    indices: Vec<u32>,
    index: VoxelHash,
}

/// Builds the grid keeping the first `k` points of every voxel in frame
/// order. Keys are computed first, one hashing pass assigns slots, and a
/// final pass fills the store.
pub fn build_grid(
    frame: &PointCloudFrame,
    voxel_size: f64,
    k: usize,
) -> Result<VoxelGrid, PoolingError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(PoolingError::Domain(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    if k == 0 {
        return Err(PoolingError::Domain(
            "points per voxel must be at least 1".into(),
        ));
    }
    if frame.len() >= EMPTY as usize {
        return Err(PoolingError::Domain(format!(
            "frame too large: {} points",
            frame.len()
        )));
    }
    let mut index = VoxelHash::with_capacity(frame.len() / 2);
    let keys = frame
        .points
        .iter()
        .map(|p| voxel_coord(p.x, p.y, voxel_size).map(|(i, j)| pack(i, j)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen: Vec<u32> = Vec::new();
    let mut slot_of = Vec::with_capacity(frame.len());
    for &key in &keys {
        let (slot, inserted) = index.get_or_insert(key);
        if inserted {
            seen.push(0);
        }
        seen[slot as usize] += 1;
        slot_of.push(slot);
    }

    let cap = k.min(u32::MAX as usize) as u32;
    let mut offsets = Vec::with_capacity(seen.len() + 1);
    let mut total = 0u32;
    offsets.push(0);
    for &s in &seen {
        total += s.min(cap);
        offsets.push(total);
    }
    let mut cursor = offsets[..seen.len()].to_vec();
    let mut indices = vec![EMPTY; total as usize];
    for (n, &slot) in slot_of.iter().enumerate() {
        let s = slot as usize;
        let at = cursor[s];
        if at < offsets[s + 1] {
            indices[at as usize] = n as u32;
            cursor[s] = at + 1;
        }
    }
    Ok(VoxelGrid {
        voxel_size,
        max_points_per_voxel: k,
        frame_index: frame.frame_index,
        point_count: frame.len(),
        seen,
        offsets,
        indices,
        index,
    })
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn max_points_per_voxel(&self) -> usize {
        self.max_points_per_voxel
    }

    pub fn frame_index(&self) -> u32 {
        self.frame_index
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn num_slots(&self) -> usize {
        self.seen.len()
    }

    /// Slot for a voxel coordinate; `None` for empty voxels.
    #[inline]
    pub fn lookup(&self, coord: VoxelCoord) -> Option<usize> {
        match self.index.get(pack(coord.0, coord.1)) {
            EMPTY => None,
            slot => Some(slot as usize),
        }
    }

    /// Retained point indices of a slot, in frame order.
    #[inline]
    pub fn slot_points(&self, slot: usize) -> &[u32] {
        &self.indices[self.offsets[slot] as usize..self.offsets[slot + 1] as usize]
    }

    pub fn slot_coord(&self, slot: usize) -> VoxelCoord {
        unpack(self.index.key(slot as u32))
    }

    /// Total points that fell in the voxel, retained or not.
    pub fn slot_occupancy(&self, slot: usize) -> usize {
        self.seen[slot] as usize
    }

    /// True when no voxel had more than `k` points, i.e. nothing was dropped.
    pub fn all_within_capacity(&self) -> bool {
        self.seen
            .iter()
            .all(|&s| s as usize <= self.max_points_per_voxel)
    }

    pub fn retained_count(&self) -> usize {
        self.indices.len()
    }

    /// Per-point retention flags for the source frame.
    pub fn retained_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.point_count];
        for slot in 0..self.num_slots() {
            for &i in self.slot_points(slot) {
                mask[i as usize] = true;
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point3;

    fn frame(pts: &[(f64, f64)]) -> PointCloudFrame {
        PointCloudFrame::new(
            1,
            pts.iter()
                .map(|&(x, y)| Point3::new(x, y, 0.0, 0.0))
                .collect(),
        )
    }

    #[test]
    fn two_voxel_example() {
        let g = build_grid(&frame(&[(0.1, 0.1), (0.2, 0.3), (1.0, -0.1)]), 0.4, 32).unwrap();
        assert_eq!(g.num_slots(), 2);
        let a = g.lookup((0, 0)).unwrap();
        let b = g.lookup((2, -1)).unwrap();
        assert_eq!(g.slot_points(a), &[0, 1]);
        assert_eq!(g.slot_points(b), &[2]);
        assert_eq!(g.slot_coord(b), (2, -1));
        assert_eq!(g.lookup((5, 5)), None);
    }

    #[test]
    fn first_k_retention() {
        let g = build_grid(&frame(&[(0.5, 0.5); 40]), 0.4, 32).unwrap();
        assert_eq!(g.num_slots(), 1);
        assert_eq!(g.slot_points(0), (0..32).collect::<Vec<u32>>().as_slice());
        assert_eq!(g.slot_occupancy(0), 40);
        assert!(!g.all_within_capacity());
        assert_eq!(g.retained_count(), 32);
    }

    #[test]
    fn empty_frame() {
        let g = build_grid(&frame(&[]), 0.4, 32).unwrap();
        assert_eq!(g.num_slots(), 0);
        assert_eq!(g.lookup((0, 0)), None);
        assert!(g.all_within_capacity());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            build_grid(&frame(&[]), 0.0, 32),
            Err(PoolingError::Domain(_))
        ));
        assert!(matches!(
            build_grid(&frame(&[]), -0.4, 32),
            Err(PoolingError::Domain(_))
        ));
        assert!(matches!(
            build_grid(&frame(&[]), 0.4, 0),
            Err(PoolingError::Domain(_))
        ));
        assert!(matches!(
            build_grid(&frame(&[(1e12, 0.0)]), 0.4, 32),
            Err(PoolingError::CoordinateOverflow { .. })
        ));
    }

    #[test]
    fn integer_floor_matches_std() {
        for q in [
            0.0,
            -0.0,
            0.5,
            -0.5,
            1.0,
            -1.0,
            2.999,
            -2.999,
            1e15 + 0.5,
            -1e15 - 0.5,
            9.3e18,
            -9.3e18,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NAN,
        ] {
            assert_eq!(floor_i64(q), q.floor() as i64, "{q}");
        }
    }

    #[test]
    fn negative_coordinates_floor() {
        assert_eq!(voxel_coord(-0.0001, 0.3999, 0.4).unwrap(), (-1, 0));
        assert_eq!(voxel_coord(-0.4, 0.4, 0.4).unwrap(), (-1, 1));
    }
}
