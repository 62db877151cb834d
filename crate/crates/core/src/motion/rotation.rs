//! 6D rotation features and Euler-angle conversions.
//!
//! The 6D feature of a rotation matrix is its first two rows; the third
//! row is recovered as their cross product after Gram-Schmidt.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("degenerate 6D rotation features {0:?}")]
pub struct DegenerateRotation(pub [f64; 6]);

const DEGENERATE_EPS: f64 = 1e-12;

pub fn rot6d_to_matrix(f: &[f64; 6]) -> Result<Matrix3<f64>, DegenerateRotation> {
    let a = Vector3::new(f[0], f[1], f[2]);
    let b = Vector3::new(f[3], f[4], f[5]);
    let na = a.norm();
    if na < DEGENERATE_EPS {
        return Err(DegenerateRotation(*f));
    }
    let r1 = a / na;
    let resid = b - r1 * r1.dot(&b);
    let nr = resid.norm();
    if nr < DEGENERATE_EPS * b.norm().max(1.0) {
        return Err(DegenerateRotation(*f));
    }
    let r2 = resid / nr;
    let r3 = r1.cross(&r2);
    Ok(Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]))
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)]]
}

pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Rotation about a principal axis (0 = X, 1 = Y, 2 = Z) by `angle` radians.
pub fn axis_rotation(axis: usize, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        0 => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        1 => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        2 => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        _ => panic!("axis index {axis} out of range"),
    }
}

/// Order in which Euler rotation channels appear in a BVH file; the joint
/// rotation is the product of the axis rotations in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EulerOrder {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

impl EulerOrder {
    pub fn axes(self) -> [usize; 3] {
        match self {
            EulerOrder::Xyz => [0, 1, 2],
            EulerOrder::Xzy => [0, 2, 1],
            EulerOrder::Yxz => [1, 0, 2],
            EulerOrder::Yzx => [1, 2, 0],
            EulerOrder::Zxy => [2, 0, 1],
            EulerOrder::Zyx => [2, 1, 0],
        }
    }

    pub fn from_axes(axes: [usize; 3]) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.axes() == axes)
    }

    pub const ALL: [EulerOrder; 6] = [
        EulerOrder::Xyz,
        EulerOrder::Xzy,
        EulerOrder::Yxz,
        EulerOrder::Yzx,
        EulerOrder::Zxy,
        EulerOrder::Zyx,
    ];

    /// +1 for cyclic axis orders (XYZ, YZX, ZXY), −1 otherwise.
    fn parity(self) -> f64 {
        match self {
            EulerOrder::Xyz | EulerOrder::Yzx | EulerOrder::Zxy => 1.0,
            _ => -1.0,
        }
    }
}

/// Angles in degrees, one per axis in `order`.
pub fn euler_to_matrix(order: EulerOrder, degrees: [f64; 3]) -> Matrix3<f64> {
    let [a, b, c] = order.axes();
    axis_rotation(a, degrees[0].to_radians())
        * axis_rotation(b, degrees[1].to_radians())
        * axis_rotation(c, degrees[2].to_radians())
}

/// Inverse of [`euler_to_matrix`]; the middle angle lies in [−90°, 90°].
pub fn matrix_to_euler(order: EulerOrder, m: &Matrix3<f64>) -> [f64; 3] {
    let [i, j, k] = order.axes();
    let s = order.parity();
    let sin_b = (s * m[(i, k)]).clamp(-1.0, 1.0);
    let b = sin_b.asin();
    let (a, c);
    if sin_b.abs() < 1.0 - 1e-12 {
        a = (-s * m[(j, k)]).atan2(m[(k, k)]);
        c = (-s * m[(i, j)]).atan2(m[(i, i)]);
    } else {
        // Gimbal lock: only a ± c is determined; put it all in the first angle.
        c = 0.0;
        a = (s * m[(k, j)]).atan2(m[(j, j)]);
    }
    [a.to_degrees(), b.to_degrees(), c.to_degrees()]
}

/// Geodesic-free rotation distance used by the metrics:
/// `‖A − B‖_F² = 6 − 2 tr(AᵀB)` for rotation matrices.
pub fn frobenius_sq(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            let d = a[(r, c)] - b[(r, c)];
            acc += d * d;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_features_give_identity() {
        assert_eq!(rot6d_to_matrix(&IDENTITY_6D).unwrap(), Matrix3::identity());
    }

    #[test]
    fn skewed_features_are_orthogonalized() {
        let m = rot6d_to_matrix(&[2.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(m, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(rot6d_to_matrix(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 3.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn euler_gimbal_lock_round_trips() {
        for order in EulerOrder::ALL {
            for b in [90.0, -90.0] {
                let m = euler_to_matrix(order, [30.0, b, 20.0]);
                let back = euler_to_matrix(order, matrix_to_euler(order, &m));
                assert_relative_eq!(m, back, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zxy_hand_conversion() {
        // Rz(90°)·Rx(0)·Ry(0): x → y, y → −x.
        let m = euler_to_matrix(EulerOrder::Zxy, [90.0, 0.0, 0.0]);
        let f = matrix_to_rot6d(&m);
        let expected = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0];
        for (a, b) in f.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn rot6d_output_is_a_rotation(v in proptest::array::uniform6(-3.0f64..3.0)) {
            prop_assume!(Vector3::new(v[0], v[1], v[2]).norm() > 1e-3);
            let a = Vector3::new(v[0], v[1], v[2]).normalize();
            let b = Vector3::new(v[3], v[4], v[5]);
            prop_assume!((b - a * a.dot(&b)).norm() > 1e-3);
            let m = rot6d_to_matrix(&v).unwrap();
            let err = (m.transpose() * m - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rot6d_round_trips_rotations(a in -180.0f64..180.0, b in -89.0f64..89.0, c in -180.0f64..180.0) {
            let m = euler_to_matrix(EulerOrder::Zxy, [a, b, c]);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&m)).unwrap();
            prop_assert!((m - back).abs().max() < 1e-12);
        }

        #[test]
        fn euler_round_trips_every_order(a in -179.0f64..179.0, b in -89.0f64..89.0, c in -179.0f64..179.0, o in 0usize..6) {
            let order = EulerOrder::ALL[o];
            let m = euler_to_matrix(order, [a, b, c]);
            let e = matrix_to_euler(order, &m);
            let back = euler_to_matrix(order, e);
            prop_assert!((m - back).abs().max() < 1e-10);
        }
    }
}
