//! Optimized pooling against the exhaustive scan, plus an independent audit
//! of every pooled point's region membership.

use serde::{Deserialize, Serialize};

use msf_core::pooling::{candidates_naive, candidates_optimized, PooledProposal};
use msf_core::{
    build_grids, pool_naive, pool_optimized, propagate_all, PropagationConfig, Proposal,
    SequenceWindow,
};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub gamma: f64,
    pub points_per_proposal: usize,
    pub voxel_size: f64,
    pub points_per_voxel: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 1.1,
            points_per_proposal: 128,
            voxel_size: 0.4,
            points_per_voxel: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub proposal_id: usize,
    pub t: u32,
    pub naive_candidates: usize,
    pub optimized_candidates: usize,
    /// Naive candidates that survive intra-voxel retention.
    pub retained_naive_candidates: usize,
    pub sets_equal: bool,
    /// Checked only when the candidate sets coincide.
    pub elements_equal: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub frames: usize,
    pub points: usize,
    pub proposals: usize,
    pub all_voxels_within_capacity: bool,
    pub regions_checked: usize,
    pub candidate_set_mismatches: usize,
    /// Regions where retention dropped candidates; an expected divergence.
    pub truncated_regions: usize,
    pub element_comparisons: usize,
    pub element_mismatches: usize,
    pub entry_count_failures: usize,
    pub membership_checked: usize,
    pub membership_failures: usize,
    pub passed: bool,
    pub regions: Vec<RegionReport>,
}

/// Planar membership written out from the proposal itself:
/// `(x - p_x + v_x dt)^2 + (y - p_y + v_y dt)^2 < (d / 2)^2` with
/// `d = sqrt(w^2 + l^2) * gamma^(dt + 1)`.
pub fn audit_membership(x: f64, y: f64, p: &Proposal, gamma: f64, delta_t: u32) -> bool {
    let [px, py, _] = p.center();
    let [vx, vy] = p.velocity();
    let [w, l, _] = p.dims();
    let mut d = (w * w + l * l).sqrt();
    for _ in 0..=delta_t {
        d *= gamma;
    }
    let dt = f64::from(delta_t);
    let ex = x - px + vx * dt;
    let ey = y - py + vy * dt;
    ex * ex + ey * ey < (d / 2.0) * (d / 2.0)
}

fn audit(
    window: &SequenceWindow,
    proposals: &[Proposal],
    pooled: &[PooledProposal],
    opts: &VerifyOptions,
    report: &mut VerifyReport,
) {
    for p in pooled {
        for f in &p.frames {
            if f.entries.len() != opts.points_per_proposal {
                report.entry_count_failures += 1;
            }
            let frame = window.frame(f.frame_index);
            for e in f.entries.iter().filter(|e| !e.padded) {
                let Some(n) = e.source_index else {
                    continue;
                };
                report.membership_checked += 1;
                let same_point = frame.and_then(|fr| fr.points.get(n as usize)) == Some(&e.point);
                let inside = audit_membership(
                    e.point.x,
                    e.point.y,
                    &proposals[p.proposal_id],
                    opts.gamma,
                    f.region.delta_t,
                );
                if !(same_point && inside) {
                    report.membership_failures += 1;
                }
            }
        }
    }
}

/// Runs both pooling engines on `proposals` propagated over `window`.
pub fn verify_pooling(
    window: &SequenceWindow,
    proposals: &[Proposal],
    opts: &VerifyOptions,
) -> Result<VerifyReport, CliError> {
    let config =
        PropagationConfig::new(opts.gamma, window.current_index()).map_err(CliError::input)?;
    let regions = propagate_all(proposals, &config).map_err(CliError::input)?;
    let grids =
        build_grids(window, opts.voxel_size, opts.points_per_voxel).map_err(CliError::input)?;
    let k = opts.points_per_proposal;
    let fast = pool_optimized(window, &grids, &regions, k, opts.seed).map_err(CliError::input)?;
    let slow = pool_naive(window, &regions, k, opts.seed).map_err(CliError::input)?;

    let mut report = VerifyReport {
        options: *opts,
        frames: window.frames().len(),
        points: window.total_points(),
        proposals: proposals.len(),
        all_voxels_within_capacity: grids.iter().all(|g| g.all_within_capacity()),
        regions_checked: 0,
        candidate_set_mismatches: 0,
        truncated_regions: 0,
        element_comparisons: 0,
        element_mismatches: 0,
        entry_count_failures: 0,
        membership_checked: 0,
        membership_failures: 0,
        passed: false,
        regions: Vec::new(),
    };

    for (grid, frame) in grids.iter().zip(window.frames()) {
        let retained = grid.retained_mask();
        let pos = (frame.frame_index - 1) as usize;
        for (list, (a, b)) in regions.iter().zip(fast.iter().zip(&slow)) {
            let region = &list[pos];
            let optimized = candidates_optimized(grid, frame, region);
            let naive = candidates_naive(frame, region);
            let restricted: Vec<u32> = naive
                .iter()
                .copied()
                .filter(|&n| retained[n as usize])
                .collect();
            let sets_equal = optimized == restricted;
            let elements_equal = (optimized.len() == naive.len() && sets_equal)
                .then(|| a.frames[pos] == b.frames[pos]);
            report.regions_checked += 1;
            report.candidate_set_mismatches += usize::from(!sets_equal);
            report.truncated_regions += usize::from(restricted.len() < naive.len());
            if let Some(eq) = elements_equal {
                report.element_comparisons += 1;
                report.element_mismatches += usize::from(!eq);
            }
            report.regions.push(RegionReport {
                proposal_id: region.source_proposal_id,
                t: region.frame_index,
                naive_candidates: naive.len(),
                optimized_candidates: optimized.len(),
                retained_naive_candidates: restricted.len(),
                sets_equal,
                elements_equal,
            });
        }
    }
    report.regions.sort_by_key(|r| (r.proposal_id, r.t));
    audit(window, proposals, &fast, opts, &mut report);
    audit(window, proposals, &slow, opts, &mut report);
    report.passed = report.candidate_set_mismatches == 0
        && report.element_mismatches == 0
        && report.entry_count_failures == 0
        && report.membership_failures == 0;
    Ok(report)
}
