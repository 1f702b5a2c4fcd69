//! SO(3) primitives: hat/vee, exponential and logarithm, rotation-error maps.
//!
//! Rotations are stored as [`nalgebra::Rotation3`]; everything that is only
//! "a 3x3 matrix" (stiffness, inertia, rotation derivatives) is a [`Mat3`].

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Rotation = Rotation3<f64>;

/// Orthogonality / unit-determinant tolerance for rotation matrices.
pub const TAU_ORTH: f64 = 1e-9;
/// Skew-symmetry tolerance accepted by [`vee`].
pub const TAU_SKEW: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-6;
const NEAR_PI_TRACE: f64 = -1.0 + 1e-6;
const SINGULAR_DET: f64 = 1e-12;

/// Cross-product matrix: `hat(u) * v == u.cross(&v)`.
#[inline]
pub fn hat(u: &Vec3) -> Mat3 {
    Mat3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

/// Inverse of [`hat`]. Fails when `a` is not skew-symmetric within [`TAU_SKEW`].
pub fn vee(a: &Mat3) -> Result<Vec3> {
    let asymmetry = (a + a.transpose()).norm();
    if asymmetry > TAU_SKEW {
        return Err(Error::NotSkewSymmetric { asymmetry });
    }
    Ok(vee_skew(a))
}

/// vee of the skew-symmetric part `(A - A^T)/2`, no check.
#[inline]
pub fn vee_skew(a: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (a[(2, 1)] - a[(1, 2)]),
        0.5 * (a[(0, 2)] - a[(2, 0)]),
        0.5 * (a[(1, 0)] - a[(0, 1)]),
    )
}

/// Exponential map so(3) -> SO(3) (Rodrigues), with a Taylor branch for tiny angles.
pub fn exp_so3(eta: &Vec3) -> Rotation {
    let theta2 = eta.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(eta);
    let (a, b) = if theta < SMALL_ANGLE {
        // sin(t)/t and (1 - cos t)/t^2 to fourth order
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation::from_matrix_unchecked(Mat3::identity() + k * a + k * k * b)
}

/// Logarithm SO(3) -> so(3) as a rotation vector.
pub fn log_so3(r: &Rotation) -> Result<Vec3> {
    let m = r.matrix();
    let trace = m.trace();
    if trace <= NEAR_PI_TRACE {
        return Err(Error::NearPiRotation { trace });
    }
    let s = vee_skew(m); // sin(theta) * axis
    let sin_theta = s.norm();
    let cos_theta = 0.5 * (trace - 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if sin_theta < SMALL_ANGLE {
        Ok(s * (1.0 + theta * theta / 6.0))
    } else {
        Ok(s * (theta / sin_theta))
    }
}

/// Attitude error `1/2 (R*^T R - R^T R*)^vee`.
pub fn rotation_error(r: &Rotation, r_star: &Rotation) -> Vec3 {
    let a = r_star.matrix().transpose() * r.matrix();
    // (A - A^T)/2 is exactly skew, so vee_skew(A) is the full expression
    vee_skew(&a)
}

/// `C(R*^T R) = 1/2 (tr[R^T R*] I - R^T R*)`, the map taking `e_omega` to `d/dt e_R`.
pub fn c_matrix(r: &Rotation, r_star: &Rotation) -> Mat3 {
    let a = r.matrix().transpose() * r_star.matrix();
    (Mat3::identity() * a.trace() - a) * 0.5
}

/// Nearest rotation in Frobenius norm (polar factor via SVD).
pub fn project_so3(m: &Mat3) -> Result<Rotation> {
    let det = m.determinant();
    if det <= SINGULAR_DET {
        return Err(Error::SingularMatrix { det });
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::SingularMatrix { det }),
    };
    let mut correction = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    Ok(Rotation::from_matrix_unchecked(u * correction * v_t))
}

/// Frobenius distance of `R^T R` from the identity.
pub fn orthogonality_defect(r: &Rotation) -> f64 {
    (r.matrix().transpose() * r.matrix() - Mat3::identity()).norm()
}

/// Checks both rotation invariants (orthogonality and unit determinant).
pub fn is_rotation(r: &Rotation) -> bool {
    orthogonality_defect(r) <= TAU_ORTH && (r.matrix().determinant() - 1.0).abs() <= TAU_ORTH
}

/// Rotation about the global x axis.
pub fn rot_x(angle: f64) -> Rotation {
    exp_so3(&Vec3::new(angle, 0.0, 0.0))
}
