mod oracle;

use std::f64::consts::PI;

use msf_core::encoding::{
    fuse_embeddings, geometric_embedding, geometric_inputs, motion_embedding, spherical_transform,
    FeatureMatrix, Provenance,
};
use msf_core::mlp::Mlp;
use msf_core::{Matrix, Point3, Proposal};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, around: [f64; 3]) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Point3::new(
                around[0] + rng.gen_range(-4.0..4.0),
                around[1] + rng.gen_range(-4.0..4.0),
                around[2] + rng.gen_range(-2.0..2.0),
                rng.gen_range(0.0..1.0),
            )
        })
        .collect()
}

fn max_diff(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    a.iter_rows()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn spherical_round_trip(v in prop::array::uniform3(-100.0..100.0f64)) {
        let [r, theta, phi] = spherical_transform(v);
        prop_assert!(r >= 0.0);
        prop_assert!((-PI / 2.0..=PI / 2.0).contains(&theta));
        prop_assert!(phi > -PI && phi <= PI);
        if r > 0.0 {
            let back = [r * theta.cos() * phi.cos(), r * theta.cos() * phi.sin(), r * theta.sin()];
            for c in 0..3 {
                prop_assert!((back[c] - v[c]).abs() < 1e-9, "{back:?} vs {v:?}");
            }
        }
    }

    #[test]
    fn geometric_embedding_is_translation_invariant(seed in 0u64..1000, shift in prop::array::uniform3(-100.0..100.0f64)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = oracle::random_proposal(&mut rng, 20.0);
        let pts = random_points(&mut rng, 16, b.center());
        let moved_box = Proposal::new(
            [b.center()[0] + shift[0], b.center()[1] + shift[1], b.center()[2] + shift[2]],
            b.dims(), b.yaw(), b.velocity(), b.score(),
        ).unwrap();
        let moved: Vec<Point3> = pts.iter().map(|p| Point3::new(p.x + shift[0], p.y + shift[1], p.z + shift[2], p.intensity)).collect();
        let mlp = Mlp::seeded_from(&[27, 32, 32], seed);
        let a = geometric_embedding(&pts, &b, &mlp).unwrap();
        let c = geometric_embedding(&moved, &moved_box, &mlp).unwrap();
        prop_assert!(a.values.max_abs_diff(&c.values) < 1e-9);
    }
}

#[test]
fn spherical_examples() {
    assert_eq!(spherical_transform([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
    assert_eq!(spherical_transform([0.0, 0.0, 1.0]), [1.0, PI / 2.0, 0.0]);
    assert_eq!(spherical_transform([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
    let s = spherical_transform([1.0, 1.0, 2f64.sqrt()]);
    for (a, b) in s.iter().zip([2.0, PI / 4.0, PI / 4.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn embeddings_match_straight_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50u64 {
        let b0 = oracle::random_proposal(&mut rng, 30.0);
        let dt = rng.gen_range(0..16u32);
        let bt = b0.backtracked(dt);
        let pts = random_points(&mut rng, 1 + case as usize % 40, bt.center());
        let g_mlp = Mlp::seeded_from(&[27, 24, 16], case);
        let m_mlp = Mlp::seeded_from(&[28, 24, 16], case + 1000);

        let g = geometric_embedding(&pts, &bt, &g_mlp).unwrap();
        assert!(
            max_diff(&g.values, &oracle::geometric(&pts, &bt, &g_mlp)) < 1e-6,
            "case {case}"
        );
        let m = motion_embedding(&pts, &b0, dt, &m_mlp).unwrap();
        assert!(
            max_diff(&m.values, &oracle::motion(&pts, &b0, dt, &m_mlp)) < 1e-6,
            "case {case}"
        );

        let f = fuse_embeddings(&g, &m).unwrap();
        assert_eq!(f.provenance, Provenance::Fused);
        for _ in 0..10 {
            let (i, j) = (rng.gen_range(0..pts.len()), rng.gen_range(0..16));
            assert_eq!(f.values.get(i, j), g.values.get(i, j) + m.values.get(i, j));
        }
    }
}

#[test]
fn width_and_shape_errors() {
    let b = Proposal::new([0.0; 3], [1.0; 3], 0.0, [0.0; 2], 1.0).unwrap();
    let pts = [Point3::new(1.0, 1.0, 1.0, 0.0)];
    assert!(geometric_embedding(&pts, &b, &Mlp::seeded_from(&[28, 4], 0)).is_err());
    assert!(motion_embedding(&pts, &b, 0, &Mlp::seeded_from(&[27, 4], 0)).is_err());
    let g = FeatureMatrix::new(Matrix::zeros(2, 3), Provenance::Geometric);
    let m = FeatureMatrix::new(Matrix::zeros(3, 3), Provenance::Motion);
    assert!(fuse_embeddings(&g, &m).is_err());
}

#[test]
fn point_at_center_has_zero_first_offset() {
    let b = Proposal::new([3.0, -2.0, 1.0], [2.0, 4.0, 1.5], 0.7, [1.0, 0.0], 0.9).unwrap();
    let x = geometric_inputs(&[Point3::new(3.0, -2.0, 1.0, 0.0)], &b);
    assert_eq!(&x.row(0)[..3], &[0.0, 0.0, 0.0]);
}
