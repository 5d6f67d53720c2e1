//! Deterministic synthetic LiDAR-like sequences with ground truth.
//!
//! Objects are boxes moving at (optionally jittered) constant velocity;
//! their returns are sampled on the four vertical faces and the top. Ground
//! clutter is uniform over the square `[-extent, extent]^2`. Object points
//! come first in every frame, object by object, then clutter, and all
//! coordinates are rounded through `f32` so a frame written to disk reads
//! back identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::quantize;
use crate::model::{ModelError, Point3, PointCloudFrame, Proposal, SequenceWindow};
use crate::motion::{
    evaluate_recall, evaluate_recall_where, propagate_all, MotionError, PropagationConfig,
};

/// Face samples are pulled this fraction inside the box so surface returns
/// stay strictly within the footprint after rounding.
const SURFACE_INSET: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Speed bands in meters per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedClass {
    Stationary,
    Slow,
    Medium,
    Fast,
}

impl SpeedClass {
    pub const ALL: [SpeedClass; 4] = [Self::Stationary, Self::Slow, Self::Medium, Self::Fast];

    /// `< 0.2` stationary, `0.2..=1` slow, `(1, 6]` medium, `> 6` fast.
    pub fn from_speed(speed: f64) -> Self {
        if speed < 0.2 {
            Self::Stationary
        } else if speed <= 1.0 {
            Self::Slow
        } else if speed <= 6.0 {
            Self::Medium
        } else {
            Self::Fast
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stationary => "stationary",
            Self::Slow => "slow",
            Self::Medium => "medium",
            Self::Fast => "fast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// `(w, l, h)`.
    pub dims: [f64; 3],
    /// Box center at frame 1.
    pub center: [f64; 3],
    pub velocity: [f64; 2],
    /// Defaults to the heading of the velocity, or 0 when stationary.
    #[serde(default)]
    pub yaw: Option<f64>,
    /// Per-frame uniform jitter bound added to each velocity component.
    #[serde(default)]
    pub velocity_jitter: f64,
    pub points_per_frame: usize,
    /// Optional declared class; must agree with the velocity.
    #[serde(default)]
    pub speed_class: Option<SpeedClass>,
}

impl ObjectSpec {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn speed_class(&self) -> SpeedClass {
        SpeedClass::from_speed(self.speed())
    }

    fn heading(&self) -> f64 {
        self.yaw.unwrap_or_else(|| {
            if self.speed() > 0.0 {
                self.velocity[1].atan2(self.velocity[0])
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: u32,
    /// Half-width of the square clutter area.
    pub extent: f64,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub clutter_points_per_frame: usize,
    /// Relative bound `eps` of the multiplicative `U(1 - eps, 1 + eps)`
    /// corruption applied to each stored velocity component.
    #[serde(default)]
    pub velocity_estimate_noise: f64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frames == 0 {
            return Err(SimError::Domain("scene needs at least one frame".into()));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(SimError::Domain(format!(
                "extent must be positive, got {}",
                self.extent
            )));
        }
        if !(0.0..1.0).contains(&self.velocity_estimate_noise) {
            return Err(SimError::Domain(format!(
                "velocity noise must lie in [0, 1), got {}",
                self.velocity_estimate_noise
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                return Err(SimError::Domain(format!(
                    "object {i}: dims must be positive"
                )));
            }
            let finite = o
                .center
                .iter()
                .chain(&o.velocity)
                .chain([&o.velocity_jitter]);
            if finite.into_iter().any(|v| !v.is_finite()) || o.velocity_jitter < 0.0 {
                return Err(SimError::Domain(format!(
                    "object {i}: non-finite or negative motion parameters"
                )));
            }
            if let Some(declared) = o.speed_class {
                if declared != o.speed_class() {
                    return Err(SimError::Domain(format!(
                        "object {i}: declared {} but speed {} is {}",
                        declared.name(),
                        o.speed(),
                        o.speed_class().name()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub t: u32,
    /// True boxes with true per-frame velocities.
    pub boxes: Vec<Proposal>,
    /// `[start, end)` point index range of each object in this frame.
    pub object_ranges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub frames: Vec<FrameTruth>,
    pub speed_classes: Vec<SpeedClass>,
}

impl SceneTruth {
    /// Truth for the last `len` frames, re-indexed like [`SequenceWindow::tail`].
    pub fn tail(&self, len: usize) -> Self {
        let start = self.frames.len().saturating_sub(len);
        let offset = self.frames.get(start).map_or(0, |f| f.t - 1);
        Self {
            frames: self.frames[start..]
                .iter()
                .map(|f| FrameTruth {
                    t: f.t - offset,
                    ..f.clone()
                })
                .collect(),
            speed_classes: self.speed_classes.clone(),
        }
    }

    pub fn current_boxes(&self) -> &[Proposal] {
        self.frames.last().map_or(&[], |f| &f.boxes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub window: SequenceWindow,
    /// Current-frame boxes carrying the (possibly corrupted) velocity estimates.
    pub proposals: Vec<Proposal>,
    pub truth: SceneTruth,
}

fn sample_surface(rng: &mut ChaCha8Rng, b: &Proposal) -> Point3 {
    let [w, l, h] = b.dims().map(|d| d * (1.0 - SURFACE_INSET));
    let faces = [l * h, l * h, w * h, w * h, w * l];
    let total: f64 = faces.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut face = faces.len() - 1;
    for (i, a) in faces.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
    }
    let mut u = |half: f64| rng.gen_range(-half..=half);
    let (lx, ly, lz) = match face {
        0 => (-w / 2.0, u(l / 2.0), u(h / 2.0)),
        1 => (w / 2.0, u(l / 2.0), u(h / 2.0)),
        2 => (u(w / 2.0), -l / 2.0, u(h / 2.0)),
        3 => (u(w / 2.0), l / 2.0, u(h / 2.0)),
        _ => (u(w / 2.0), u(l / 2.0), h / 2.0),
    };
    let (s, c) = b.yaw().sin_cos();
    let [cx, cy, cz] = b.center();
    Point3::new(
        cx + c * lx - s * ly,
        cy + s * lx + c * ly,
        cz + lz,
        rng.gen_range(0.3..1.0),
    )
}

/// Generates the scene; identical configs give bit-identical scenes.
pub fn generate(config: &SceneConfig) -> Result<Scene, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_obj = config.objects.len();
    let mut centers: Vec<[f64; 3]> = config.objects.iter().map(|o| o.center).collect();
    let mut true_velocity: Vec<[f64; 2]> = config.objects.iter().map(|o| o.velocity).collect();
    let mut frames = Vec::with_capacity(config.frames as usize);
    let mut truth_frames = Vec::with_capacity(config.frames as usize);

    for t in 1..=config.frames {
        if t > 1 {
            for (i, o) in config.objects.iter().enumerate() {
                let mut v = o.velocity;
                if o.velocity_jitter > 0.0 {
                    for c in &mut v {
                        *c += rng.gen_range(-o.velocity_jitter..=o.velocity_jitter);
                    }
                }
                centers[i][0] += v[0];
                centers[i][1] += v[1];
                true_velocity[i] = v;
            }
        }
        let boxes = config
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| Proposal::new(centers[i], o.dims, o.heading(), true_velocity[i], 1.0))
            .collect::<Result<Vec<_>, _>>()?;
        let total = config
            .objects
            .iter()
            .map(|o| o.points_per_frame)
            .sum::<usize>()
            + config.clutter_points_per_frame;
        let mut points = Vec::with_capacity(total);
        let mut mask = Vec::with_capacity(total);
        let mut ranges = Vec::with_capacity(n_obj);
        for (o, b) in config.objects.iter().zip(&boxes) {
            let start = points.len();
            for _ in 0..o.points_per_frame {
                points.push(quantize(sample_surface(&mut rng, b)));
                mask.push(true);
            }
            ranges.push([start, points.len()]);
        }
        let e = config.extent;
        for _ in 0..config.clutter_points_per_frame {
            let p = Point3::new(
                rng.gen_range(-e..e),
                rng.gen_range(-e..e),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(0.0..0.3),
            );
            points.push(quantize(p));
            mask.push(false);
        }
        frames.push(PointCloudFrame::with_mask(t, points, mask));
        truth_frames.push(FrameTruth {
            t,
            boxes,
            object_ranges: ranges,
        });
    }

    let eps = config.velocity_estimate_noise;
    let current = &truth_frames.last().expect("at least one frame").boxes;
    let proposals = config
        .objects
        .iter()
        .zip(current)
        .map(|(o, b)| {
            let mut v = o.velocity;
            if eps > 0.0 {
                for c in &mut v {
                    *c *= rng.gen_range(1.0 - eps..=1.0 + eps);
                }
            }
            b.with_velocity(v)
        })
        .collect();

    Ok(Scene {
        window: SequenceWindow::new(frames)?,
        proposals,
        truth: SceneTruth {
            frames: truth_frames,
            speed_classes: config.objects.iter().map(ObjectSpec::speed_class).collect(),
        },
    })
}

impl Scene {
    /// The last `len` frames, re-indexed `1..=len`. Proposals are unchanged
    /// because they live on the current frame.
    pub fn tail(&self, len: usize) -> Result<Self, SimError> {
        Ok(Self {
            window: self.window.tail(len)?,
            proposals: self.proposals.clone(),
            truth: self.truth.tail(len),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallCell {
    pub gamma: f64,
    pub frames: usize,
    pub overall: f64,
    /// Recall per speed class; `None` when the class has no points.
    pub by_class: BTreeMap<SpeedClass, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallTable {
    pub gammas: Vec<f64>,
    pub frames: Vec<usize>,
    pub cells: Vec<RecallCell>,
}

impl RecallTable {
    pub fn cell(&self, gamma: f64, frames: usize) -> Option<&RecallCell> {
        self.cells
            .iter()
            .find(|c| c.gamma == gamma && c.frames == frames)
    }

    /// Rows are gammas, columns are window lengths.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma");
        for t in &self.frames {
            write!(out, ",T={t}").unwrap();
        }
        out.push('\n');
        for &g in &self.gammas {
            write!(out, "{g}").unwrap();
            for &t in &self.frames {
                let v = self.cell(g, t).map_or(f64::NAN, |c| c.overall);
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// One row per `(gamma, T)` with a column per speed class.
    pub fn by_class_csv(&self) -> String {
        let mut out = String::from("gamma,frames");
        for c in SpeedClass::ALL {
            write!(out, ",{}", c.name()).unwrap();
        }
        out.push('\n');
        for cell in &self.cells {
            write!(out, "{},{}", cell.gamma, cell.frames).unwrap();
            for c in SpeedClass::ALL {
                match cell.by_class.get(&c).copied().flatten() {
                    Some(v) => write!(out, ",{v:.6}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Recall of every `(gamma, T)` combination on an existing scene, using the
/// stored velocity estimates.
pub fn recall_table(
    scene: &Scene,
    gammas: &[f64],
    frames: &[usize],
) -> Result<RecallTable, SimError> {
    let available = scene.window.frames().len();
    let mut cells = Vec::with_capacity(gammas.len() * frames.len());
    for &t_len in frames {
        if t_len == 0 || t_len > available {
            return Err(SimError::Domain(format!(
                "window length {t_len} not available in a {available}-frame scene"
            )));
        }
        let sub = scene.tail(t_len)?;
        for &gamma in gammas {
            let cfg = PropagationConfig::new(gamma, t_len as u32)?;
            let regions = propagate_all(&sub.proposals, &cfg)?;
            let overall = evaluate_recall(&sub.window, &regions)?.overall;
            let mut by_class = BTreeMap::new();
            for class in SpeedClass::ALL {
                let objects: Vec<usize> = (0..sub.truth.speed_classes.len())
                    .filter(|&i| sub.truth.speed_classes[i] == class)
                    .collect();
                let report = evaluate_recall_where(&sub.window, &regions, |pos, idx| {
                    let ranges = &sub.truth.frames[pos].object_ranges;
                    objects
                        .iter()
                        .any(|&o| (ranges[o][0]..ranges[o][1]).contains(&idx))
                })?;
                by_class.insert(class, (!report.vacuous).then_some(report.overall));
            }
            cells.push(RecallCell {
                gamma,
                frames: t_len,
                overall,
                by_class,
            });
        }
    }
    Ok(RecallTable {
        gammas: gammas.to_vec(),
        frames: frames.to_vec(),
        cells,
    })
}

/// Generates a scene long enough for the largest `T` and tabulates recall.
pub fn recall_experiment(
    config: &SceneConfig,
    gammas: &[f64],
    frames: &[usize],
) -> Result<RecallTable, SimError> {
    let longest = frames.iter().copied().max().unwrap_or(1);
    let mut config = config.clone();
    config.frames = config.frames.max(longest as u32);
    recall_table(&generate(&config)?, gammas, frames)
}
