//! Proposal feature encoding.
//!
//! Each pooled point gets a geometric embedding (spherical offsets to the nine
//! key points of the frame's box, through an MLP) and a motion embedding (raw
//! offsets to the current-frame box plus the frame offset, through a second
//! MLP). The proposal feature is their sum.

use std::f64::consts::PI;

use crate::mlp::Mlp;
use crate::model::{key_points, KeyPoints, Point3, Proposal};
use crate::tensor::{Matrix, NnError};

pub const GEOMETRIC_INPUT_WIDTH: usize = 27;
pub const MOTION_INPUT_WIDTH: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Geometric,
    Motion,
    Fused,
    Hidden,
}

/// `K x D` per-point features of one proposal at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub provenance: Provenance,
}

impl FeatureMatrix {
    pub fn new(values: Matrix, provenance: Provenance) -> Self {
        Self { values, provenance }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

/// `(x, y, z) -> (r, theta, phi)` with `theta = asin(z / r)` and
/// `phi = atan2(y, x)` in `(-pi, pi]`. The origin maps to zeros.
pub fn spherical_transform(offset: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = offset;
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return [0.0; 3];
    }
    let theta = (z / r).clamp(-1.0, 1.0).asin();
    let mut phi = y.atan2(x);
    if phi <= -PI {
        phi = PI;
    }
    [r, theta, phi]
}

fn offsets<'a>(p: &Point3, kp: &'a KeyPoints) -> impl Iterator<Item = [f64; 3]> + 'a {
    let q = p.xyz();
    kp.iter()
        .map(move |b| [q[0] - b[0], q[1] - b[1], q[2] - b[2]])
}

/// `K x 27` spherical offsets to the box's key points.
pub fn geometric_inputs(points: &[Point3], frame_box: &Proposal) -> Matrix {
    let kp = key_points(frame_box);
    let mut m = Matrix::zeros(points.len(), GEOMETRIC_INPUT_WIDTH);
    for (i, p) in points.iter().enumerate() {
        let row = m.row_mut(i);
        for (j, off) in offsets(p, &kp).enumerate() {
            row[3 * j..3 * j + 3].copy_from_slice(&spherical_transform(off));
        }
    }
    m
}

/// `K x 28` raw offsets to the current-frame box's key points, then `dt`.
pub fn motion_inputs(points: &[Point3], current_box: &Proposal, delta_t: u32) -> Matrix {
    let kp = key_points(current_box);
    let mut m = Matrix::zeros(points.len(), MOTION_INPUT_WIDTH);
    for (i, p) in points.iter().enumerate() {
        let row = m.row_mut(i);
        for (j, off) in offsets(p, &kp).enumerate() {
            row[3 * j..3 * j + 3].copy_from_slice(&off);
        }
        row[27] = f64::from(delta_t);
    }
    m
}

fn check_input(mlp: &Mlp, expected: usize) -> Result<(), NnError> {
    if mlp.input_width() != expected {
        return Err(NnError::WidthMismatch {
            expected,
            got: mlp.input_width(),
        });
    }
    Ok(())
}

/// `frame_box` is the proposal as placed in the pooled frame.
pub fn geometric_embedding(
    points: &[Point3],
    frame_box: &Proposal,
    mlp: &Mlp,
) -> Result<FeatureMatrix, NnError> {
    check_input(mlp, GEOMETRIC_INPUT_WIDTH)?;
    let out = mlp.forward(&geometric_inputs(points, frame_box))?;
    Ok(FeatureMatrix::new(out, Provenance::Geometric))
}

/// `current_box` is the current-frame proposal, the same for every frame.
pub fn motion_embedding(
    points: &[Point3],
    current_box: &Proposal,
    delta_t: u32,
    mlp: &Mlp,
) -> Result<FeatureMatrix, NnError> {
    check_input(mlp, MOTION_INPUT_WIDTH)?;
    let out = mlp.forward(&motion_inputs(points, current_box, delta_t))?;
    Ok(FeatureMatrix::new(out, Provenance::Motion))
}

pub fn fuse_embeddings(g: &FeatureMatrix, m: &FeatureMatrix) -> Result<FeatureMatrix, NnError> {
    Ok(FeatureMatrix::new(
        g.values.add(&m.values)?,
        Provenance::Fused,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, DenseLayer};

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn spherical_examples() {
        assert_eq!(spherical_transform([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        assert_eq!(spherical_transform([0.0, 0.0, 1.0]), [1.0, PI / 2.0, 0.0]);
        assert!(close(
            spherical_transform([1.0, 1.0, 2f64.sqrt()]),
            [2.0, PI / 4.0, PI / 4.0]
        ));
        assert_eq!(spherical_transform([0.0; 3]), [0.0; 3]);
        assert_eq!(spherical_transform([-1.0, -0.0, 0.0])[2], PI);
    }

    fn identity_27() -> Mlp {
        let mut w = vec![0.0; 27 * 27];
        for i in 0..27 {
            w[i * 27 + i] = 1.0;
        }
        Mlp::linear(DenseLayer::new(27, 27, w, vec![0.0; 27], Activation::None).unwrap()).unwrap()
    }

    #[test]
    fn point_at_center_has_zero_first_block() {
        let b = Proposal::new([1.0, 2.0, 3.0], [2.0, 4.0, 1.5], 0.4, [0.0; 2], 1.0).unwrap();
        let x = geometric_inputs(&[Point3::new(1.0, 2.0, 3.0, 0.0)], &b);
        assert_eq!(&x.row(0)[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_mlp_passes_spherical_values() {
        let b = Proposal::new([0.0; 3], [2.0, 2.0, 2.0], 0.0, [0.0; 2], 1.0).unwrap();
        let g =
            geometric_embedding(&[Point3::new(1.0, 1.0, 1.0, 0.0)], &b, &identity_27()).unwrap();
        let row = g.values.row(0);
        let expected = [3f64.sqrt(), (1.0 / 3f64.sqrt()).asin(), PI / 4.0];
        assert!(close([row[0], row[1], row[2]], expected));
        assert_eq!(g.provenance, Provenance::Geometric);
    }

    #[test]
    fn motion_inputs_layout() {
        let b = Proposal::new([1.0, -1.0, 0.5], [2.0, 4.0, 1.5], 1.0, [3.0, 0.0], 1.0).unwrap();
        let x = motion_inputs(&[Point3::new(1.0, -1.0, 0.5, 0.2)], &b, 3);
        let mut expected = vec![0.0; 28];
        for (j, c) in key_points(&b).iter().enumerate() {
            for a in 0..3 {
                expected[3 * j + a] = [1.0, -1.0, 0.5][a] - c[a];
            }
        }
        expected[27] = 3.0;
        assert_eq!(x.row(0), expected.as_slice());
        assert_eq!(&x.row(0)[..3], &[0.0; 3]);
        let zero_dt = motion_inputs(&[Point3::new(2.0, 0.0, 0.0, 0.0)], &b, 0);
        assert_eq!(zero_dt.row(0)[27], 0.0);
    }

    #[test]
    fn width_checks() {
        let b = Proposal::new([0.0; 3], [1.0; 3], 0.0, [0.0; 2], 1.0).unwrap();
        let wrong = Mlp::seeded_from(&[28, 4], 0);
        assert!(matches!(
            geometric_embedding(&[Point3::default()], &b, &wrong),
            Err(NnError::WidthMismatch {
                expected: 27,
                got: 28
            })
        ));
        let wrong = Mlp::seeded_from(&[27, 4], 0);
        assert!(motion_embedding(&[Point3::default()], &b, 0, &wrong).is_err());
    }

    #[test]
    fn fuse_identities() {
        let g = FeatureMatrix::new(
            Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap(),
            Provenance::Geometric,
        );
        let zero = FeatureMatrix::new(Matrix::zeros(2, 2), Provenance::Motion);
        assert_eq!(fuse_embeddings(&g, &zero).unwrap().values, g.values);
        let mut neg = g.values.clone();
        neg.map_inplace(|v| -v);
        let cancel = fuse_embeddings(&g, &FeatureMatrix::new(neg, Provenance::Motion)).unwrap();
        assert!(cancel.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(cancel.provenance, Provenance::Fused);
        assert!(fuse_embeddings(
            &g,
            &FeatureMatrix::new(Matrix::zeros(3, 2), Provenance::Motion)
        )
        .is_err());
    }
}
