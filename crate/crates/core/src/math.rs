//! Small geometric and spatial-vector helpers shared across the crate.
//!
//! Spatial (6D) vectors use the angular-first convention `(ω; v)` with
//! Plücker coordinates taken at the world origin. Generalized vectors use
//! the linear-first convention `(v_B, ω_B, ṡ)`; keep the two straight at
//! module boundaries.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};

/// Skew-symmetric (cross-product) matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of `skew` on the skew-symmetric part of a matrix (the ∨ operator).
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation matrix from an axis-angle vector via the exponential map.
pub fn rotation_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let angle = omega.norm();
    if angle < 1e-12 {
        // Second-order series keeps small-step integration accurate.
        let s = skew(omega);
        return Matrix3::identity() + s + s * s * 0.5;
    }
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*omega), angle).into_inner()
}

/// Z-Y-X Euler angles (roll, pitch, yaw) to a rotation matrix:
/// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_from_rpy(rpy: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z).into_inner()
}

/// Roll-pitch-yaw extraction, inverse of [`rotation_from_rpy`].
pub fn rpy_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = Rotation3::from_matrix_unchecked(*r);
    let (roll, pitch, yaw) = rot.euler_angles();
    Vector3::new(roll, pitch, yaw)
}

/// Re-orthonormalize a rotation matrix drifted by integration (Gram-Schmidt
/// on columns, right-handed).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let mut c1 = r.column(1).into_owned();
    c1 -= c0 * c0.dot(&c1);
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Smoothstep profile `3x² − 2x³` clamped to [0, 1].
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Quintic polynomial reaching 1 with zero velocity/acceleration at both
/// ends; returns (value, first, second, third derivative) w.r.t. `x ∈ [0,1]`.
pub fn quintic(x: f64) -> (f64, f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0, 0.0, 0.0);
    }
    let (x2, x3) = (x * x, x * x * x);
    let p = 10.0 * x3 - 15.0 * x2 * x2 + 6.0 * x2 * x3;
    let dp = 30.0 * x2 - 60.0 * x3 + 30.0 * x2 * x2;
    let ddp = 60.0 * x - 180.0 * x2 + 120.0 * x3;
    let dddp = 60.0 - 360.0 * x + 360.0 * x2;
    (p, dp, ddp, dddp)
}

/// Motion cross-product matrix `[v ×]` for spatial vectors `(ω; v)`.
pub fn spatial_cross_motion(v: &Vector6<f64>) -> Matrix6<f64> {
    let w = angular(v);
    let lin = linear(v);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&w));
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&lin));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&skew(&w));
    m
}

/// Force cross-product matrix `[v ×*] = −[v ×]ᵀ`.
pub fn spatial_cross_force(v: &Vector6<f64>) -> Matrix6<f64> {
    -spatial_cross_motion(v).transpose()
}

/// Angular part of an `(ω; v)` spatial vector.
pub fn angular(v: &Vector6<f64>) -> Vector3<f64> {
    v.fixed_rows::<3>(0).into_owned()
}

/// Linear part of an `(ω; v)` spatial vector.
pub fn linear(v: &Vector6<f64>) -> Vector3<f64> {
    v.fixed_rows::<3>(3).into_owned()
}

/// Assemble an `(ω; v)` spatial vector.
pub fn spatial(w: &Vector3<f64>, v: &Vector3<f64>) -> Vector6<f64> {
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(w);
    out.fixed_rows_mut::<3>(3).copy_from(v);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn skew_matches_cross_product() {
        let a = Vector3::new(1.0, -2.0, 0.5);
        let b = Vector3::new(0.3, 4.0, -1.0);
        assert_relative_eq!(skew(&a) * b, a.cross(&b), epsilon = 1e-15);
        assert_relative_eq!(vee(&skew(&a)), a, epsilon = 1e-15);
    }

    #[test]
    fn rpy_round_trip() {
        let rpy = Vector3::new(0.3, -0.7, 1.2);
        let r = rotation_from_rpy(&rpy);
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(rpy_from_rotation(&r), rpy, epsilon = 1e-12);
    }

    #[test]
    fn exp_small_angle_is_near_identity() {
        let r = rotation_exp(&Vector3::new(1e-14, 0.0, 0.0));
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-12);
        let r = rotation_exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert_relative_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn orthonormalize_restores_rotation() {
        let r = rotation_from_rpy(&Vector3::new(0.1, 0.2, 0.3));
        let drifted = r + Matrix3::from_element(1e-6);
        let fixed = orthonormalize(&drifted);
        assert_relative_eq!(fixed.transpose() * fixed, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(fixed.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quintic_endpoints_and_midpoint() {
        assert_eq!(quintic(0.0).0, 0.0);
        assert_eq!(quintic(1.0).0, 1.0);
        let (p, dp, _, _) = quintic(0.5);
        assert_relative_eq!(p, 0.5, epsilon = 1e-12);
        assert_relative_eq!(dp, 1.875, epsilon = 1e-12);
    }

    #[test]
    fn smoothstep_profile() {
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(2.0), 1.0);
        assert_relative_eq!(smoothstep(0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn force_cross_is_negative_transpose() {
        let v = Vector6::new(0.1, -0.2, 0.3, 1.0, 2.0, -3.0);
        assert_relative_eq!(
            spatial_cross_force(&v),
            -spatial_cross_motion(&v).transpose(),
            epsilon = 1e-15
        );
    }
}
