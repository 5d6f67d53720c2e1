//! Straight-line reference implementations shared by the integration tests.
//! Nothing here calls into the library's numeric code; only weight and box
//! fields are read.

#![allow(dead_code, clippy::needless_range_loop)]

use msf_core::mlp::{Activation, Mlp};
use msf_core::network::{AttentionWeights, DecoderWeights, LossTargets};
use msf_core::{Point3, PointCloudFrame, Proposal, SequenceWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(x - p_x + v_x dt)^2 + (y - p_y + v_y dt)^2 < (d / 2)^2` with
/// `d = sqrt(w^2 + l^2) * gamma^(dt + 1)`.
pub fn inside(x: f64, y: f64, p: &Proposal, gamma: f64, dt: u32) -> bool {
    let [px, py, _] = p.center();
    let [vx, vy] = p.velocity();
    let [w, l, _] = p.dims();
    let mut d = (w * w + l * l).sqrt();
    for _ in 0..=dt {
        d *= gamma;
    }
    let t = dt as f64;
    let a = x - px + vx * t;
    let b = y - py + vy * t;
    a * a + b * b < (d / 2.0) * (d / 2.0)
}

pub fn spherical(v: [f64; 3]) -> [f64; 3] {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if r == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let mut phi = v[1].atan2(v[0]);
    if phi == -std::f64::consts::PI {
        phi = std::f64::consts::PI;
    }
    [r, (v[2] / r).asin(), phi]
}

pub fn corners(p: &Proposal) -> Vec<[f64; 3]> {
    let c = p.center();
    let [w, l, h] = p.dims();
    let (cos, sin) = (p.yaw().cos(), p.yaw().sin());
    let mut out = vec![c];
    for sw in [-1.0, 1.0] {
        for sl in [-1.0, 1.0] {
            for sh in [-1.0, 1.0] {
                let (u, v) = (sw * w / 2.0, sl * l / 2.0);
                out.push([
                    c[0] + u * cos - v * sin,
                    c[1] + u * sin + v * cos,
                    c[2] + sh * h / 2.0,
                ]);
            }
        }
    }
    out
}

pub fn mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for layer in m.layers() {
        let mut next = vec![0.0; layer.rows];
        for (o, out) in next.iter_mut().enumerate() {
            let mut s = layer.bias[o];
            for i in 0..layer.cols {
                s += layer.weight[o * layer.cols + i] * cur[i];
            }
            *out = if layer.act == Activation::Relu && s < 0.0 {
                0.0
            } else {
                s
            };
        }
        cur = next;
    }
    cur
}

pub fn geometric(points: &[Point3], b: &Proposal, m: &Mlp) -> Vec<Vec<f64>> {
    let kp = corners(b);
    points
        .iter()
        .map(|p| {
            let mut input = Vec::new();
            for k in &kp {
                input.extend(spherical([p.x - k[0], p.y - k[1], p.z - k[2]]));
            }
            mlp(m, &input)
        })
        .collect()
}

pub fn motion(points: &[Point3], b0: &Proposal, dt: u32, m: &Mlp) -> Vec<Vec<f64>> {
    let kp = corners(b0);
    points
        .iter()
        .map(|p| {
            let mut input = Vec::new();
            for k in &kp {
                input.extend([p.x - k[0], p.y - k[1], p.z - k[2]]);
            }
            input.push(dt as f64);
            mlp(m, &input)
        })
        .collect()
}

pub fn attention(
    queries: &[Vec<f64>],
    context: &[Vec<f64>],
    w: &AttentionWeights,
) -> Vec<Vec<f64>> {
    let q: Vec<Vec<f64>> = queries.iter().map(|r| mlp(&w.query, r)).collect();
    let k: Vec<Vec<f64>> = context.iter().map(|r| mlp(&w.key, r)).collect();
    let v: Vec<Vec<f64>> = context.iter().map(|r| mlp(&w.value, r)).collect();
    let d = q[0].len();
    let dh = d / w.heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for (i, qi) in q.iter().enumerate() {
        for h in 0..w.heads {
            let lo = h * dh;
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| (lo..lo + dh).map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for (j, vj) in v.iter().enumerate() {
                for c in lo..lo + dh {
                    out[i][c] += e[j] / z * vj[c];
                }
            }
        }
    }
    out.iter().map(|r| mlp(&w.output, r)).collect()
}

pub fn decode(features: &[Vec<f64>], w: &DecoderWeights) -> Vec<f64> {
    let a = &attention(
        std::slice::from_ref(&w.query_vector),
        features,
        &w.attention,
    )[0];
    let x: Vec<f64> = w.query_vector.iter().zip(a).map(|(q, a)| q + a).collect();
    let f = mlp(&w.ffn, &x);
    x.iter().zip(&f).map(|(a, b)| a + b).collect()
}

pub fn loss(logits: &[f64], residuals: &[[f64; 7]], t: &LossTargets, alpha: f64) -> f64 {
    let n = logits.len();
    let mut conf = 0.0;
    for i in 0..n {
        let p = 1.0 / (1.0 + (-logits[i]).exp());
        let y = t.confidence[i];
        conf -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    if n > 0 {
        conf /= n as f64;
    }
    let mut reg = 0.0;
    let mut count = 0;
    for i in 0..n {
        if !t.positive[i] {
            continue;
        }
        for c in 0..7 {
            let d = (residuals[i][c] - t.residuals[i][c]).abs();
            reg += if d < 1.0 { 0.5 * d * d } else { d - 0.5 };
            count += 1;
        }
    }
    if count > 0 {
        reg /= count as f64;
    }
    conf + alpha * reg
}

pub fn random_proposal(rng: &mut ChaCha8Rng, extent: f64) -> Proposal {
    Proposal::new(
        [
            rng.gen_range(-extent..extent),
            rng.gen_range(-extent..extent),
            rng.gen_range(-1.0..2.0),
        ],
        [
            rng.gen_range(0.5..3.0),
            rng.gen_range(0.5..6.0),
            rng.gen_range(0.5..3.0),
        ],
        rng.gen_range(-3.1..3.1),
        [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)],
        rng.gen_range(0.0..1.0),
    )
    .unwrap()
}

/// Window of `frames` frames with uniform background, tight clusters that
/// overflow voxels, and points on the boxes' backtracked paths.
pub fn random_scene(
    seed: u64,
    frames: u32,
    points: usize,
    proposals: usize,
) -> (SequenceWindow, Vec<Proposal>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = 30.0;
    let props: Vec<Proposal> = (0..proposals)
        .map(|_| random_proposal(&mut rng, extent * 0.7))
        .collect();
    let window = SequenceWindow::new(
        (1..=frames)
            .map(|t| {
                let dt = frames - t;
                let pts = (0..points)
                    .map(|i| match i % 4 {
                        0 if !props.is_empty() => {
                            let c = props[rng.gen_range(0..props.len())]
                                .backtracked(dt)
                                .center();
                            Point3::new(
                                c[0] + rng.gen_range(-3.0..3.0),
                                c[1] + rng.gen_range(-3.0..3.0),
                                rng.gen_range(-1.0..2.0),
                                rng.gen_range(0.0..1.0),
                            )
                        }
                        1 => {
                            let c = f64::from((i % 7) as u32) - 3.0;
                            Point3::new(
                                c + rng.gen_range(0.0..0.05),
                                -c + rng.gen_range(0.0..0.05),
                                0.0,
                                0.5,
                            )
                        }
                        _ => Point3::new(
                            rng.gen_range(-extent..extent),
                            rng.gen_range(-extent..extent),
                            rng.gen_range(-1.0..2.0),
                            rng.gen_range(0.0..1.0),
                        ),
                    })
                    .collect();
                PointCloudFrame::new(t, pts)
            })
            .collect(),
    )
    .unwrap();
    (window, props)
}
