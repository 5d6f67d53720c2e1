//! Motion-guided propagation of current-frame proposals into preceding
//! frames, and foreground recall of the resulting cylindrical regions.
//!
//! A proposal with center `p` and per-frame velocity `v` is looked for in
//! frame `t` inside the vertical cylinder centered at `p - v * dt`, where
//! `dt = T - t`, with diameter `sqrt(w^2 + l^2) * gamma^(dt + 1)`. Height is
//! unbounded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Point3, Proposal, SequenceWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("frame {0} has no foreground mask")]
    MissingMask(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    gamma: f64,
    window_length: u32,
}

impl PropagationConfig {
    pub fn new(gamma: f64, window_length: u32) -> Result<Self, MotionError> {
        if !gamma.is_finite() || gamma < 1.0 {
            return Err(MotionError::Domain(format!(
                "gamma must be finite and >= 1, got {gamma}"
            )));
        }
        if window_length == 0 {
            return Err(MotionError::Domain(
                "window length must be at least 1".into(),
            ));
        }
        Ok(Self {
            gamma,
            window_length,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn window_length(&self) -> u32 {
        self.window_length
    }
}

/// Pooling cylinder of one proposal in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylindricalRegion {
    pub frame_index: u32,
    pub delta_t: u32,
    /// Current-frame center of the source proposal.
    pub anchor: [f64; 3],
    pub velocity: [f64; 2],
    pub diameter: f64,
    pub gamma: f64,
    pub source_proposal_id: usize,
}

impl CylindricalRegion {
    /// Planar center `(p_x - v_x dt, p_y - v_y dt)`.
    pub fn center(&self) -> [f64; 2] {
        let dt = f64::from(self.delta_t);
        [
            self.anchor[0] - self.velocity[0] * dt,
            self.anchor[1] - self.velocity[1] * dt,
        ]
    }

    pub fn radius(&self) -> f64 {
        self.diameter / 2.0
    }

    #[inline]
    pub fn contains(&self, p: &Point3) -> bool {
        point_in_region(p, self)
    }

    /// [`point_in_region`] on planar coordinates alone.
    #[inline]
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let dt = f64::from(self.delta_t);
        let dx = x - self.anchor[0] + self.velocity[0] * dt;
        let dy = y - self.anchor[1] + self.velocity[1] * dt;
        let r = self.diameter / 2.0;
        dx * dx + dy * dy < r * r
    }
}

pub fn region_diameter(w: f64, l: f64, gamma: f64, delta_t: u32) -> Result<f64, MotionError> {
    if !(w > 0.0 && l > 0.0) {
        return Err(MotionError::Domain(format!(
            "box dims must be positive, got w={w} l={l}"
        )));
    }
    if !gamma.is_finite() || gamma < 1.0 {
        return Err(MotionError::Domain(format!(
            "gamma must be finite and >= 1, got {gamma}"
        )));
    }
    let exponent = i32::try_from(delta_t)
        .ok()
        .and_then(|dt| dt.checked_add(1))
        .ok_or_else(|| MotionError::Domain(format!("time offset {delta_t} too large")))?;
    Ok(w.hypot(l) * gamma.powi(exponent))
}

/// One region per frame `t = 1..=T`, in ascending `t`.
pub fn propagate(
    proposal_id: usize,
    p: &Proposal,
    config: &PropagationConfig,
) -> Result<Vec<CylindricalRegion>, MotionError> {
    let [w, l, _] = p.dims();
    let big_t = config.window_length;
    (1..=big_t)
        .map(|t| {
            let delta_t = big_t - t;
            Ok(CylindricalRegion {
                frame_index: t,
                delta_t,
                anchor: p.center(),
                velocity: p.velocity(),
                diameter: region_diameter(w, l, config.gamma, delta_t)?,
                gamma: config.gamma,
                source_proposal_id: proposal_id,
            })
        })
        .collect()
}

/// Regions for every proposal, grouped per proposal; ids are list positions.
pub fn propagate_all(
    proposals: &[Proposal],
    config: &PropagationConfig,
) -> Result<Vec<Vec<CylindricalRegion>>, MotionError> {
    proposals
        .iter()
        .enumerate()
        .map(|(id, p)| propagate(id, p, config))
        .collect()
}

/// Strict planar membership test; `z` is ignored.
#[inline]
pub fn point_in_region(pt: &Point3, region: &CylindricalRegion) -> bool {
    region.contains_xy(pt.x, pt.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub gamma: f64,
    pub overall: f64,
    pub per_frame: Vec<f64>,
    /// Set when there were no foreground points at all; `overall` is then 1.
    pub vacuous: bool,
}

/// Foreground recall over all masked points of the window.
pub fn evaluate_recall(
    window: &SequenceWindow,
    regions: &[Vec<CylindricalRegion>],
) -> Result<RecallReport, MotionError> {
    evaluate_recall_where(window, regions, |_, _| true)
}

/// Recall restricted to foreground points accepted by `select(frame_position, point_index)`.
pub fn evaluate_recall_where<F>(
    window: &SequenceWindow,
    regions: &[Vec<CylindricalRegion>],
    select: F,
) -> Result<RecallReport, MotionError>
where
    F: Fn(usize, usize) -> bool,
{
    let gamma = regions
        .iter()
        .flatten()
        .next()
        .map(|r| r.gamma)
        .unwrap_or(1.0);
    let mut per_frame = Vec::with_capacity(window.frames().len());
    let (mut hit_total, mut fg_total) = (0usize, 0usize);
    for (pos, frame) in window.frames().iter().enumerate() {
        let mask = frame
            .foreground_mask
            .as_ref()
            .ok_or(MotionError::MissingMask(frame.frame_index))?;
        let frame_regions: Vec<&CylindricalRegion> = regions
            .iter()
            .flatten()
            .filter(|r| r.frame_index == frame.frame_index)
            .collect();
        let (mut hits, mut fg) = (0usize, 0usize);
        for (i, p) in frame.points.iter().enumerate() {
            if !mask[i] || !select(pos, i) {
                continue;
            }
            fg += 1;
            if frame_regions.iter().any(|r| point_in_region(p, r)) {
                hits += 1;
            }
        }
        per_frame.push(if fg == 0 {
            1.0
        } else {
            hits as f64 / fg as f64
        });
        hit_total += hits;
        fg_total += fg;
    }
    let vacuous = fg_total == 0;
    Ok(RecallReport {
        gamma,
        overall: if vacuous {
            1.0
        } else {
            hit_total as f64 / fg_total as f64
        },
        per_frame,
        vacuous,
    })
}
