//! Proposal point pooling.
//!
//! Two engines share one draw protocol:
//!
//! * [`pool_optimized`] queries an `n x n` voxel field around each region in a
//!   pre-built [`VoxelGrid`] and filters the retained points by the cylinder
//!   test. Cost is `O(N)` for the grids plus `O(M)` field queries plus
//!   `O(MK)` draws.
//! * [`pool_naive`] tests every frame point against every region, `O(NM)`.
//!
//! Both sort their candidates by frame order and hand them to the same seeded
//! sampler, so identical candidate lists give identical outputs.

mod grid;
pub mod hash;
mod sample;

use std::collections::HashSet;
use std::ops::RangeInclusive;

use serde::Serialize;
use thiserror::Error;

pub use grid::{build_grid, floor_i64, voxel_coord, VoxelCoord, VoxelGrid};
pub use sample::{draw, stream_seed, Draw};

use crate::model::{Point3, PointCloudFrame, SequenceWindow};
use crate::motion::CylindricalRegion;
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolingError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no voxel grid for frame {0}")]
    MissingGrid(u32),
    #[error("no frame {0} in window")]
    MissingFrame(u32),
    #[error(
        "grid for frame {frame} was built from {grid_points} points, frame has {frame_points}"
    )]
    GridMismatch {
        frame: u32,
        grid_points: usize,
        frame_points: usize,
    },
    #[error("point ({x}, {y}) maps outside the 32-bit voxel range")]
    CoordinateOverflow { x: f64, y: f64 },
}

/// One of the `K` pooled slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledEntry {
    pub point: Point3,
    /// Index into the source frame; `None` for region-center fill.
    pub source_index: Option<u32>,
    /// True for entries that repeat an earlier candidate or fill an empty
    /// region. Padded entries still feed the encoders.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFrame {
    pub frame_index: u32,
    pub region: CylindricalRegion,
    pub candidate_count: usize,
    pub entries: Vec<PooledEntry>,
}

impl PooledFrame {
    pub fn points(&self) -> Vec<Point3> {
        self.entries.iter().map(|e| e.point).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.padded).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledProposal {
    pub proposal_id: usize,
    /// Ordered as the input regions, normally `t = 1..=T`.
    pub frames: Vec<PooledFrame>,
}

/// Debug dump record: one per (proposal, frame).
#[derive(Debug, Clone, Serialize)]
pub struct PooledDump {
    pub proposal_id: usize,
    pub t: u32,
    pub points: Vec<[f64; 4]>,
    pub mask: Vec<bool>,
}

impl PooledProposal {
    pub fn dump(&self) -> Vec<PooledDump> {
        self.frames
            .iter()
            .map(|f| PooledDump {
                proposal_id: self.proposal_id,
                t: f.frame_index,
                points: f
                    .entries
                    .iter()
                    .map(|e| [e.point.x, e.point.y, e.point.z, e.point.intensity])
                    .collect(),
                mask: f.entries.iter().map(|e| !e.padded).collect(),
            })
            .collect()
    }
}

/// Voxel rows and columns covering the region's circle. The field spans at
/// most `ceil(d / v) + 1` voxels per axis.
pub fn voxel_field(
    region: &CylindricalRegion,
    voxel_size: f64,
) -> (RangeInclusive<i64>, RangeInclusive<i64>) {
    let [cx, cy] = region.center();
    let r = region.radius();
    let axis = |c: f64| {
        let lo = floor_i64((c - r) / voxel_size);
        let hi = floor_i64((c + r) / voxel_size);
        lo..=hi
    };
    (axis(cx), axis(cy))
}

/// Field side length bound `ceil(d / v) + 1`.
pub fn field_size(diameter: f64, voxel_size: f64) -> usize {
    (diameter / voxel_size).ceil() as usize + 1
}

fn clamp_i32(r: RangeInclusive<i64>) -> RangeInclusive<i32> {
    let c = |v: i64| v.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32;
    c(*r.start())..=c(*r.end())
}

/// Retained points of `grid` inside `region`, in frame order. Rows of the
/// field are trimmed to the voxels their circle chord can reach, widened by a
/// relative slack far above rounding error so no boundary point is lost.
pub fn candidates_optimized(
    grid: &VoxelGrid,
    frame: &PointCloudFrame,
    region: &CylindricalRegion,
) -> Vec<u32> {
    let v = grid.voxel_size();
    let (rows, cols) = voxel_field(region, v);
    let (rows, cols) = (clamp_i32(rows), clamp_i32(cols));
    let [cx, cy] = region.center();
    let reach = region.radius() * (1.0 + 1e-9) + 1e-9 * (cx.abs() + cy.abs() + v);
    let mut out: Vec<u32> = Vec::new();
    let mut len = 0;
    for i in rows {
        let x_lo = f64::from(i) * v;
        let dx = (x_lo - cx).max(cx - (x_lo + v)).max(0.0);
        if dx > reach {
            continue;
        }
        let half = (reach * reach - dx * dx).max(0.0).sqrt();
        let lo = floor_i64((cy - half) / v).max(i64::from(*cols.start()));
        let hi = floor_i64((cy + half) / v).min(i64::from(*cols.end()));
        for j in lo..=hi {
            let Some(slot) = grid.lookup((i, j as i32)) else {
                continue;
            };
            let points = grid.slot_points(slot);
            out.resize(len + points.len(), 0);
            for &n in points {
                let p = &frame.points[n as usize];
                out[len] = n;
                len += usize::from(region.contains_xy(p.x, p.y));
            }
        }
    }
    out.truncate(len);
    sort_indices(&mut out);
    out
}

/// Ascending sort: LSD radix over the bytes the largest index needs.
fn sort_indices(v: &mut Vec<u32>) {
    if v.len() < 64 {
        v.sort_unstable();
        return;
    }
    let max = v.iter().copied().max().unwrap_or(0);
    let mut scratch = vec![0u32; v.len()];
    let mut shift = 0;
    while shift < 32 && (max >> shift) != 0 {
        let mut count = [0usize; 257];
        for &x in v.iter() {
            count[((x >> shift) & 0xff) as usize + 1] += 1;
        }
        for b in 0..256 {
            count[b + 1] += count[b];
        }
        for &x in v.iter() {
            let b = ((x >> shift) & 0xff) as usize;
            scratch[count[b]] = x;
            count[b] += 1;
        }
        std::mem::swap(v, &mut scratch);
        shift += 8;
    }
}

/// All frame points inside `region`, in frame order.
pub fn candidates_naive(frame: &PointCloudFrame, region: &CylindricalRegion) -> Vec<u32> {
    frame
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| region.contains(p))
        .map(|(n, _)| n as u32)
        .collect()
}

fn materialize(
    frame: &PointCloudFrame,
    region: &CylindricalRegion,
    candidates: &[u32],
    k: usize,
    seed: u64,
) -> PooledFrame {
    let picks = draw(
        candidates.len(),
        k,
        stream_seed(seed, region.source_proposal_id, region.frame_index),
    );
    let entries = match picks {
        Draw::Empty => {
            let [cx, cy] = region.center();
            let fill = Point3::new(cx, cy, region.anchor[2], 0.0);
            vec![
                PooledEntry {
                    point: fill,
                    source_index: None,
                    padded: true,
                };
                k
            ]
        }
        Draw::Picks(picks) => picks
            .into_iter()
            .map(|(pos, padded)| {
                let n = candidates[pos];
                PooledEntry {
                    point: frame.points[n as usize],
                    source_index: Some(n),
                    padded,
                }
            })
            .collect(),
    };
    PooledFrame {
        frame_index: region.frame_index,
        region: *region,
        candidate_count: candidates.len(),
        entries,
    }
}

fn check_k(k: usize) -> Result<(), PoolingError> {
    if k == 0 {
        return Err(PoolingError::Domain(
            "points per proposal must be at least 1".into(),
        ));
    }
    Ok(())
}

fn frame_of(window: &SequenceWindow, t: u32) -> Result<&PointCloudFrame, PoolingError> {
    window.frame(t).ok_or(PoolingError::MissingFrame(t))
}

fn grid_of<'a>(
    grids: &'a [VoxelGrid],
    frame: &PointCloudFrame,
) -> Result<&'a VoxelGrid, PoolingError> {
    let grid = grids
        .iter()
        .find(|g| g.frame_index() == frame.frame_index)
        .ok_or(PoolingError::MissingGrid(frame.frame_index))?;
    if grid.point_count() != frame.len() {
        return Err(PoolingError::GridMismatch {
            frame: frame.frame_index,
            grid_points: grid.point_count(),
            frame_points: frame.len(),
        });
    }
    Ok(grid)
}

/// One grid per window frame, built concurrently across frames.
pub fn build_grids(
    window: &SequenceWindow,
    voxel_size: f64,
    k: usize,
) -> Result<Vec<VoxelGrid>, PoolingError> {
    par::try_map(window.frames(), |f| build_grid(f, voxel_size, k))
}

/// Voxel-field pooling over pre-built grids. `regions` holds one list per
/// proposal.
pub fn pool_optimized(
    window: &SequenceWindow,
    grids: &[VoxelGrid],
    regions: &[Vec<CylindricalRegion>],
    k: usize,
    seed: u64,
) -> Result<Vec<PooledProposal>, PoolingError> {
    check_k(k)?;
    pool_with(regions, |region| {
        let frame = frame_of(window, region.frame_index)?;
        let grid = grid_of(grids, frame)?;
        let candidates = candidates_optimized(grid, frame, region);
        Ok(materialize(frame, region, &candidates, k, seed))
    })
}

/// Exhaustive pooling over every frame point; the reference for
/// [`pool_optimized`].
pub fn pool_naive(
    window: &SequenceWindow,
    regions: &[Vec<CylindricalRegion>],
    k: usize,
    seed: u64,
) -> Result<Vec<PooledProposal>, PoolingError> {
    check_k(k)?;
    pool_with(regions, |region| {
        let frame = frame_of(window, region.frame_index)?;
        let candidates = candidates_naive(frame, region);
        Ok(materialize(frame, region, &candidates, k, seed))
    })
}

/// Regions are visited frame by frame so one grid stays hot in cache, then
/// regrouped per proposal. Errors are reported in proposal order.
fn pool_with<F>(
    regions: &[Vec<CylindricalRegion>],
    per_region: F,
) -> Result<Vec<PooledProposal>, PoolingError>
where
    F: Fn(&CylindricalRegion) -> Result<PooledFrame, PoolingError> + Sync + Send,
{
    let mut order: Vec<(usize, usize)> = regions
        .iter()
        .enumerate()
        .flat_map(|(p, list)| (0..list.len()).map(move |r| (p, r)))
        .collect();
    order.sort_by_key(|&(p, r)| (regions[p][r].frame_index, p, r));
    let mut done = par::map(&order, |&(p, r)| per_region(&regions[p][r])).into_iter();
    let mut slots: Vec<Vec<Option<Result<PooledFrame, PoolingError>>>> = regions
        .iter()
        .map(|list| (0..list.len()).map(|_| None).collect())
        .collect();
    for &(p, r) in &order {
        slots[p][r] = done.next();
    }
    regions
        .iter()
        .zip(slots)
        .map(|(list, frames)| {
            let frames = frames
                .into_iter()
                .map(|f| f.expect("every region visited"))
                .collect::<Result<Vec<_>, _>>()?;
            let proposal_id = list
                .first()
                .map(|r| r.source_proposal_id)
                .unwrap_or_default();
            Ok(PooledProposal {
                proposal_id,
                frames,
            })
        })
        .collect()
}

/// True when the two index lists hold the same set.
pub fn same_set(a: &[u32], b: &[u32]) -> bool {
    a.len() == b.len() && a.iter().collect::<HashSet<_>>() == b.iter().collect::<HashSet<_>>()
}
