//! Shared geometric and sequence types.
//!
//! Everything here is immutable after construction. Frames, windows and
//! proposals are validated once and then shared read-only by the pooling,
//! encoding and network stages.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("window holds no frames")]
    EmptyWindow,
    #[error("frames out of order: frame at position {position} has index {index} after index {previous}")]
    UnsortedFrames {
        position: usize,
        index: u32,
        previous: u32,
    },
    #[error("frame at position {position} has index 0; indices start at 1")]
    InvalidFrameIndex { position: usize },
    #[error("window current index {current} does not match last frame index {last}")]
    CurrentIndexMismatch { current: u32, last: u32 },
    #[error("frame {frame}: foreground mask has {mask_len} entries for {points} points")]
    MaskLengthMismatch {
        frame: u32,
        points: usize,
        mask_len: usize,
    },
    #[error("frame {frame}: point {point} has a non-finite coordinate")]
    NonFiniteValue { frame: u32, point: usize },
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
}

/// A LiDAR return. Coordinates in meters, intensity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    #[inline]
    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// One sweep. Point order is significant: intra-voxel retention keeps the
/// first points in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub frame_index: u32,
    pub points: Vec<Point3>,
    pub foreground_mask: Option<Vec<bool>>,
}

impl PointCloudFrame {
    pub fn new(frame_index: u32, points: Vec<Point3>) -> Self {
        Self {
            frame_index,
            points,
            foreground_mask: None,
        }
    }

    pub fn with_mask(frame_index: u32, points: Vec<Point3>, mask: Vec<bool>) -> Self {
        Self {
            frame_index,
            points,
            foreground_mask: Some(mask),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if let Some(mask) = &self.foreground_mask {
            if mask.len() != self.points.len() {
                return Err(ModelError::MaskLengthMismatch {
                    frame: self.frame_index,
                    points: self.points.len(),
                    mask_len: mask.len(),
                });
            }
        }
        if let Some(point) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(ModelError::NonFiniteValue {
                frame: self.frame_index,
                point,
            });
        }
        Ok(())
    }
}

/// Frames `1..=T` in ascending order; the last one is the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    frames: Vec<PointCloudFrame>,
    current_index: u32,
}

impl SequenceWindow {
    /// Builds a window whose current index is the last frame's index.
    pub fn new(frames: Vec<PointCloudFrame>) -> Result<Self, ModelError> {
        let current_index = frames.last().map(|f| f.frame_index).unwrap_or(0);
        Self::with_current(frames, current_index)
    }

    pub fn with_current(
        frames: Vec<PointCloudFrame>,
        current_index: u32,
    ) -> Result<Self, ModelError> {
        let window = Self {
            frames,
            current_index,
        };
        validate_window(&window)?;
        Ok(window)
    }

    pub fn frames(&self) -> &[PointCloudFrame] {
        &self.frames
    }

    pub fn current_index(&self) -> u32 {
        self.current_index
    }

    pub fn frame(&self, index: u32) -> Option<&PointCloudFrame> {
        self.frames
            .binary_search_by_key(&index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn total_points(&self) -> usize {
        self.frames.iter().map(|f| f.len()).sum()
    }

    /// The last `len` frames re-indexed as `1..=len`, so the current frame
    /// becomes frame `len`.
    pub fn tail(&self, len: usize) -> Result<Self, ModelError> {
        let start = self.frames.len().saturating_sub(len);
        let offset = self
            .frames
            .get(start)
            .map(|f| f.frame_index - 1)
            .unwrap_or(0);
        let frames = self.frames[start..]
            .iter()
            .map(|f| PointCloudFrame {
                frame_index: f.frame_index - offset,
                ..f.clone()
            })
            .collect();
        Self::new(frames)
    }

    pub fn into_frames(self) -> Vec<PointCloudFrame> {
        self.frames
    }
}

/// Checks every window and frame invariant and reports the first violation.
pub fn validate_window(window: &SequenceWindow) -> Result<(), ModelError> {
    let frames = &window.frames;
    let Some(last) = frames.last() else {
        return Err(ModelError::EmptyWindow);
    };
    for (position, frame) in frames.iter().enumerate() {
        if frame.frame_index == 0 {
            return Err(ModelError::InvalidFrameIndex { position });
        }
        if position > 0 {
            let previous = frames[position - 1].frame_index;
            if frame.frame_index <= previous {
                return Err(ModelError::UnsortedFrames {
                    position,
                    index: frame.frame_index,
                    previous,
                });
            }
        }
        frame.validate()?;
    }
    if window.current_index != last.frame_index {
        return Err(ModelError::CurrentIndexMismatch {
            current: window.current_index,
            last: last.frame_index,
        });
    }
    Ok(())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Oriented box on the current frame with a per-frame planar velocity.
///
/// `w` extends along the box's local x axis and `l` along local y before the
/// yaw rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProposalRecord", into = "ProposalRecord")]
pub struct Proposal {
    center: [f64; 3],
    dims: [f64; 3],
    yaw: f64,
    velocity: [f64; 2],
    score: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ProposalRecord {
    cx: f64,
    cy: f64,
    cz: f64,
    w: f64,
    l: f64,
    h: f64,
    yaw: f64,
    vx: f64,
    vy: f64,
    score: f64,
}

impl TryFrom<ProposalRecord> for Proposal {
    type Error = ModelError;

    fn try_from(r: ProposalRecord) -> Result<Self, Self::Error> {
        Proposal::new(
            [r.cx, r.cy, r.cz],
            [r.w, r.l, r.h],
            r.yaw,
            [r.vx, r.vy],
            r.score,
        )
    }
}

impl From<Proposal> for ProposalRecord {
    fn from(p: Proposal) -> Self {
        ProposalRecord {
            cx: p.center[0],
            cy: p.center[1],
            cz: p.center[2],
            w: p.dims[0],
            l: p.dims[1],
            h: p.dims[2],
            yaw: p.yaw,
            vx: p.velocity[0],
            vy: p.velocity[1],
            score: p.score,
        }
    }
}

impl Proposal {
    pub fn new(
        center: [f64; 3],
        dims: [f64; 3],
        yaw: f64,
        velocity: [f64; 2],
        score: f64,
    ) -> Result<Self, ModelError> {
        let all = center
            .iter()
            .chain(&dims)
            .chain(&velocity)
            .chain([&yaw, &score]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidProposal("non-finite field".into()));
        }
        if dims.iter().any(|&d| d <= 0.0) {
            return Err(ModelError::InvalidProposal(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(ModelError::InvalidProposal(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            center,
            dims,
            yaw: normalize_yaw(yaw),
            velocity,
            score,
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    /// `(w, l, h)`.
    pub fn dims(&self) -> [f64; 3] {
        self.dims
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.velocity
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    /// Plan-view diagonal `sqrt(w^2 + l^2)`.
    pub fn plan_diagonal(&self) -> f64 {
        self.dims[0].hypot(self.dims[1])
    }

    pub fn with_velocity(self, velocity: [f64; 2]) -> Self {
        Self { velocity, ..self }
    }

    pub fn with_score(self, score: f64) -> Self {
        Self { score, ..self }
    }

    /// The same box moved back along its velocity by `dt` frames.
    pub fn backtracked(&self, dt: u32) -> Self {
        let dt = f64::from(dt);
        Self {
            center: [
                self.center[0] - self.velocity[0] * dt,
                self.center[1] - self.velocity[1] * dt,
                self.center[2],
            ],
            ..*self
        }
    }

    /// Whether the plan-view footprint contains `(x, y)` (boundary inclusive).
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= self.dims[0] / 2.0 && v.abs() <= self.dims[1] / 2.0
    }
}

/// Box center followed by the eight corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPoints(pub [[f64; 3]; 9]);

impl KeyPoints {
    pub fn center(&self) -> [f64; 3] {
        self.0[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64; 3]> {
        self.0.iter()
    }
}

/// Center first, then corners in sign order `---, --+, -+-, -++, +--, +-+, ++-, +++`
/// over the `(w, l, h)` half extents, rotated by yaw in plan view.
pub fn key_points(p: &Proposal) -> KeyPoints {
    let [cx, cy, cz] = p.center;
    let [hw, hl, hh] = p.dims.map(|d| d / 2.0);
    let (s, c) = p.yaw.sin_cos();
    let mut out = [[0.0; 3]; 9];
    out[0] = p.center;
    for (n, slot) in out[1..].iter_mut().enumerate() {
        let sign = |bit: usize| if n & bit != 0 { 1.0 } else { -1.0 };
        let (u, v, w) = (sign(4) * hw, sign(2) * hl, sign(1) * hh);
        *slot = [cx + c * u - s * v, cy + s * u + c * v, cz + w];
    }
    KeyPoints(out)
}
