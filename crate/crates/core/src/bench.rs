//! Pooling latency harness: exhaustive scan against the voxel-field query.
//!
//! A bench scene of `N` points is split into frames of at most
//! [`FRAME_POINTS`] points, so larger `N` means a longer window, the way a
//! multi-frame sequence grows. Each proposal is pooled in every frame.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{Point3, PointCloudFrame, Proposal, SequenceWindow};
use crate::motion::{propagate_all, CylindricalRegion, PropagationConfig};
use crate::par;
use crate::pooling::{build_grids, pool_naive, pool_optimized, PoolingError};

/// Points per frame of a bench scene, about one LiDAR sweep.
pub const FRAME_POINTS: usize = 172_750;
/// Half-width of the square covered by bench points.
pub const BENCH_EXTENT: f64 = 75.0;
pub const BENCH_GAMMA: f64 = 1.1;
pub const BENCH_VOXEL_SIZE: f64 = 0.4;
pub const BENCH_POINTS_PER_VOXEL: usize = 32;

#[derive(Debug, Clone)]
pub struct BenchScene {
    pub window: SequenceWindow,
    pub regions: Vec<Vec<CylindricalRegion>>,
}

/// `n` points spread over `ceil(n / FRAME_POINTS)` frames. Like a spinning
/// sensor at the origin, ground returns thin out with range and each frame
/// is emitted in azimuth order; a third of the points cluster around the `m`
/// moving cars.
pub fn bench_scene(n: usize, m: usize, seed: u64) -> BenchScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = n.div_ceil(FRAME_POINTS).max(1);
    let e = BENCH_EXTENT * 0.8;
    let cars: Vec<Proposal> = (0..m)
        .map(|_| {
            let center = [rng.gen_range(-e..e), rng.gen_range(-e..e), 0.8];
            let v: [f64; 2] = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            Proposal::new(center, [2.0, 4.5, 1.6], v[1].atan2(v[0]), v, 0.9)
                .expect("valid bench box")
        })
        .collect();
    let frames_vec = (0..frames)
        .map(|f| {
            let count = n / frames + usize::from(f < n % frames);
            let dt = (frames - 1 - f) as u32;
            let mut points: Vec<Point3> = (0..count)
                .map(|i| {
                    if !cars.is_empty() && i % 3 == 0 {
                        let c = cars[rng.gen_range(0..cars.len())].backtracked(dt).center();
                        Point3::new(
                            c[0] + rng.gen_range(-2.5..2.5),
                            c[1] + rng.gen_range(-2.5..2.5),
                            rng.gen_range(0.0..1.6),
                            0.5,
                        )
                    } else {
                        let r = rng.gen_range(2.0..BENCH_EXTENT);
                        let (s, c) = rng
                            .gen_range(-std::f64::consts::PI..std::f64::consts::PI)
                            .sin_cos();
                        Point3::new(r * c, r * s, rng.gen_range(-0.2..0.2), 0.1)
                    }
                })
                .collect();
            points.sort_by(|a, b| a.y.atan2(a.x).total_cmp(&b.y.atan2(b.x)));
            PointCloudFrame::new(f as u32 + 1, points)
        })
        .collect();
    let window = SequenceWindow::new(frames_vec).expect("bench window is well formed");
    let config = PropagationConfig::new(BENCH_GAMMA, frames as u32).expect("valid bench config");
    let regions = propagate_all(&cars, &config).expect("valid bench proposals");
    BenchScene { window, regions }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub frames: usize,
    pub naive_ms: f64,
    /// Grid construction plus pooling.
    pub optimized_ms: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `ln(optimized_ms)` against `ln(N)`.
    pub slope_fit: Option<f64>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,M,K,naive_ms_median,optimized_ms_median,speedup,slope_fit\n");
        let slope = self.slope_fit.map_or(String::new(), |s| format!("{s:.4}"));
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{}",
                r.n, r.m, r.k, r.naive_ms, r.optimized_ms, r.speedup, slope
            )
            .unwrap();
        }
        out
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Least-squares slope of `ln y` on `ln x`; `None` with fewer than two
/// distinct `x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (pts.len() >= 2 && sxx > 0.0).then(|| sxy / sxx)
}

fn time_ms<R>(f: impl FnOnce() -> R) -> (f64, R) {
    let start = Instant::now();
    let r = f();
    (start.elapsed().as_secs_f64() * 1e3, r)
}

/// Median latencies per `N` over `reps` repetitions, on a pool of `workers`
/// threads. `reps` is raised to 3 when lower.
pub fn bench_pooling(
    sizes: &[usize],
    m: usize,
    k: usize,
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<BenchReport, PoolingError> {
    let reps = reps.max(3);
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let scene = bench_scene(n, m, seed);
        let (mut naive, mut optimized) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
        par::with_workers(workers, || -> Result<(), PoolingError> {
            for rep in 0..reps {
                let s = seed.wrapping_add(rep as u64);
                let (ms, out) = time_ms(|| pool_naive(&scene.window, &scene.regions, k, s));
                naive.push(ms);
                drop(out?);
                let (ms, out) = time_ms(|| {
                    let grids =
                        build_grids(&scene.window, BENCH_VOXEL_SIZE, BENCH_POINTS_PER_VOXEL)?;
                    pool_optimized(&scene.window, &grids, &scene.regions, k, s)
                });
                optimized.push(ms);
                drop(out?);
            }
            Ok(())
        })?;
        let naive_ms = median(&mut naive);
        let optimized_ms = median(&mut optimized);
        rows.push(BenchRow {
            n,
            m,
            k,
            frames: scene.window.frames().len(),
            naive_ms,
            optimized_ms,
            speedup: naive_ms / optimized_ms,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.optimized_ms).collect();
    Ok(BenchReport {
        slope_fit: log_log_slope(&xs, &ys),
        rows,
    })
}
