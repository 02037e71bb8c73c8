//! SO(3)/SE(3) primitives.
//!
//! Twists are stored angular-first, `(k, u)`, so that the hat map places
//! `S(k)` in the upper-left block and `u` in the translation column. Every
//! 6x6 operator in this module follows the same ordering.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Angle below which the Rodrigues coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-6;

/// Tolerance used by [`vee`] when checking that a 4x4 matrix lies in se(3).
const SE3_TOL: f64 = 1e-9;

/// Margin from +-pi/2 pitch inside which the ZYX parameterization is rejected.
pub const GIMBAL_MARGIN: f64 = 1e-3;

/// A body twist or strain twist: angular part first, linear part second.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            angular: Vector3::new(v[0], v[1], v[2]),
            linear: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.angular.x,
            self.angular.y,
            self.angular.z,
            self.linear.x,
            self.linear.y,
            self.linear.z,
        )
    }

    pub fn scaled(&self, h: f64) -> Self {
        Self::new(self.angular * h, self.linear * h)
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }
}

/// Rigid transform `g = [R r; 0 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SE3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite())
    }
}

impl std::ops::Mul for SE3Pose {
    type Output = SE3Pose;

    fn mul(self, rhs: SE3Pose) -> SE3Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&SE3Pose> for &SE3Pose {
    type Output = SE3Pose;

    fn mul(self, rhs: &SE3Pose) -> SE3Pose {
        self.compose(rhs)
    }
}

/// Skew-symmetric matrix with `skew(v) * w == v x w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn hat(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.angular));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.linear);
    m
}

/// Inverse of [`hat`]. Rejects matrices outside se(3).
pub fn vee(m: &Matrix4<f64>) -> Result<Twist> {
    let a = m.fixed_view::<3, 3>(0, 0);
    let asym = (a + a.transpose()).abs().max();
    let bottom = m.fixed_view::<1, 4>(3, 0).abs().max();
    if asym > SE3_TOL || bottom > SE3_TOL {
        return Err(Error::NotInLieAlgebra {
            residual: asym.max(bottom),
        });
    }
    Ok(Twist::new(
        Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
        Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
    ))
}

/// Closed-form exponential of `h * hat(xi)`.
pub fn exp_se3(xi: &Twist, h: f64) -> SE3Pose {
    let w = xi.angular * h;
    let v = xi.linear * h;
    let theta = w.norm();
    let k = skew(&w);
    let k2 = k * k;
    let t2 = theta * theta;
    let (a, b, c) = if theta < SMALL_ANGLE {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let half = (0.5 * theta).sin() / theta;
        let c = if theta < 1e-2 {
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        } else {
            (theta - theta.sin()) / (t2 * theta)
        };
        (theta.sin() / theta, 2.0 * half * half, c)
    };
    let id = Matrix3::identity();
    let rotation = id + k * a + k2 * b;
    let left_jac = id + k * b + k2 * c;
    SE3Pose::new(rotation, left_jac * v)
}

/// `Ad_g = [R 0; S(r)R R]`.
pub fn adjoint_rep(g: &SE3Pose) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let r = &g.rotation;
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(skew(&g.translation) * r));
    m
}

/// `Ad_g^{-1} = Ad_{g^{-1}}`, formed without inverting a 6x6.
pub fn adjoint_inv(g: &SE3Pose) -> Matrix6<f64> {
    adjoint_rep(&g.inverse())
}

/// Lie bracket operator `ad_xi = [S(k) 0; S(u) S(k)]`.
pub fn ad_op(xi: &Twist) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let sk = skew(&xi.angular);
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&sk);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&sk);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&skew(&xi.linear));
    m
}

/// Co-adjoint operator, defined here as `ad_xi^T`.
///
/// With this definition the body-frame Euler-Poincare equation reads
/// `M dv/dt - coadjoint(v) M v = W`, which is the sign used by the Coriolis
/// assembly in [`crate::dynamics`].
pub fn coadjoint(xi: &Twist) -> Matrix6<f64> {
    ad_op(xi).transpose()
}

/// Right-trivialized tangent of the exponential map.
///
/// For `g(e) = exp(hat(omega + e * delta))`,
/// `vee(g^{-1} dg/de) = tangent_exp(omega) * delta`, i.e. the series
/// `sum_k (-1)^k ad_omega^k / (k+1)!`.
pub fn tangent_exp(omega: &Twist) -> Matrix6<f64> {
    let ad = ad_op(omega);
    let mut sum = Matrix6::identity();
    let mut term = Matrix6::identity();
    for k in 1..80 {
        term = (term * ad) * (-1.0 / (k as f64 + 1.0));
        sum += term;
        if term.abs().max() < 1e-18 * sum.abs().max() {
            break;
        }
    }
    sum
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R = Rz(psi) Ry(theta) Rx(phi)`.
pub fn euler_zyx_rotation(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    rot_z(psi) * rot_y(theta) * rot_x(phi)
}

/// Maps ZYX Euler-angle rates to the body-frame angular velocity.
pub fn euler_rate_map(phi: f64, theta: f64) -> Result<Matrix3<f64>> {
    check_gimbal(theta)?;
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Ok(Matrix3::new(
        1.0,
        0.0,
        -st,
        0.0,
        cp,
        sp * ct,
        0.0,
        -sp,
        cp * ct,
    ))
}

pub(crate) fn check_gimbal(theta: f64) -> Result<()> {
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN || !theta.is_finite() {
        Err(Error::GimbalLock { pitch: theta })
    } else {
        Ok(())
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use proptest::strategy::ValueTree;
    use std::f64::consts::PI;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    fn twist() -> impl Strategy<Value = Twist> {
        (vec3(), vec3()).prop_map(|(a, b)| Twist::new(a, b))
    }

    fn pose() -> impl Strategy<Value = SE3Pose> {
        (twist(), 0.0..1.0f64).prop_map(|(xi, h)| exp_se3(&xi, h))
    }

    /// Fixed-step RK4 on g' = g hat(xi) with constant xi.
    fn rk4_exp(xi: &Twist, h: f64, steps: usize) -> Matrix4<f64> {
        let x = hat(xi);
        let dt = h / steps as f64;
        let mut g = Matrix4::identity();
        for _ in 0..steps {
            let k1 = g * x;
            let k2 = (g + k1 * (dt / 2.0)) * x;
            let k3 = (g + k2 * (dt / 2.0)) * x;
            let k4 = (g + k3 * dt) * x;
            g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        g
    }

    #[test]
    fn skew_cases() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let out = skew(&Vector3::z()) * Vector3::x();
        assert_relative_eq!(out, Vector3::y());
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(s[(0, 1)], -3.0);
        assert_eq!(s[(0, 2)], 2.0);
        assert_eq!(s[(1, 2)], -1.0);
        assert_eq!(s, -s.transpose());
        let w = Vector3::new(-0.5, 4.0, 1.5);
        assert_relative_eq!(s * w, Vector3::new(1.0, 2.0, 3.0).cross(&w), epsilon = 1e-15);
    }

    #[test]
    fn hat_cases() {
        assert_eq!(hat(&Twist::zero()), Matrix4::zeros());
        let m = hat(&Twist::new(Vector3::z(), Vector3::zeros()));
        assert_eq!(m.fixed_view::<3, 3>(0, 0).into_owned(), skew(&Vector3::z()));
        assert_eq!(m.column(3).norm(), 0.0);
    }

    #[test]
    fn vee_rejects_non_algebra() {
        let mut m = hat(&Twist::new(Vector3::new(1.0, 2.0, 3.0), Vector3::x()));
        m[(3, 3)] = 1.0;
        assert!(matches!(vee(&m), Err(Error::NotInLieAlgebra { .. })));
        let mut m = Matrix4::zeros();
        m[(0, 1)] = 1.0;
        assert!(vee(&m).is_err());
    }

    #[test]
    fn exp_cases() {
        let g = exp_se3(&Twist::zero(), 1.0);
        assert_eq!(g, SE3Pose::identity());

        let xi = Twist::new(Vector3::new(0.0, 0.0, PI / 2.0), Vector3::zeros());
        let g = exp_se3(&xi, 1.0);
        assert_relative_eq!(g.rotation, rot_z(PI / 2.0), epsilon = 1e-14);
        assert_relative_eq!(g.translation.norm(), 0.0);
        let oracle = rk4_exp(&xi, 1.0, 1000);
        assert_relative_eq!(g.to_matrix(), oracle, epsilon = 1e-10);

        let g = exp_se3(&Twist::new(Vector3::zeros(), Vector3::z()), 0.5);
        assert_relative_eq!(g.translation, Vector3::new(0.0, 0.0, 0.5));
        assert_eq!(g.rotation, Matrix3::identity());
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let u = Vector3::new(0.3, -0.2, 1.0);
        for w in [0.99e-6, 1.01e-6] {
            let xi = Twist::new(Vector3::new(0.0, w, 0.0), u);
            let g = exp_se3(&xi, 1.0);
            assert_relative_eq!(g.to_matrix(), rk4_exp(&xi, 1.0, 100), epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_cases() {
        assert_eq!(adjoint_rep(&SE3Pose::identity()), Matrix6::identity());
        let r = euler_zyx_rotation(0.1, -0.4, 2.0);
        let ad = adjoint_rep(&SE3Pose::from_rotation(r));
        assert_eq!(ad.fixed_view::<3, 3>(3, 0).norm(), 0.0);
        assert_eq!(ad.fixed_view::<3, 3>(0, 0).into_owned(), r);
        assert_eq!(ad.fixed_view::<3, 3>(3, 3).into_owned(), r);
    }

    #[test]
    fn coadjoint_is_transpose_and_ad_zero() {
        assert_eq!(ad_op(&Twist::zero()), Matrix6::zeros());
        let xi = Twist::new(Vector3::new(0.3, -1.0, 2.0), Vector3::new(4.0, 0.5, -0.1));
        assert_eq!(coadjoint(&xi), ad_op(&xi).transpose());
    }

    #[test]
    fn adjoint_derivative_matches_ad() {
        // d/dt Ad_{g exp(t xi)} at t=0 equals Ad_g ad_xi.
        let g = exp_se3(&Twist::new(Vector3::new(0.2, 0.7, -0.3), Vector3::new(1.0, 0.0, 2.0)), 1.0);
        let xi = Twist::new(Vector3::new(-0.4, 0.1, 0.9), Vector3::new(0.3, -0.8, 0.2));
        let h = 1e-6;
        let plus = adjoint_rep(&(g * exp_se3(&xi, h)));
        let minus = adjoint_rep(&(g * exp_se3(&xi, -h)));
        let fd = (plus - minus) / (2.0 * h);
        assert_relative_eq!(fd, adjoint_rep(&g) * ad_op(&xi), epsilon = 1e-8);
    }

    #[test]
    fn tangent_exp_matches_finite_difference() {
        let omega = Twist::new(Vector3::new(0.4, -0.3, 0.2), Vector3::new(0.1, 0.05, 0.9));
        let t = tangent_exp(&omega);
        let g0 = exp_se3(&omega, 1.0);
        let h = 1e-6;
        for j in 0..6 {
            let mut d = Vector6::zeros();
            d[j] = h;
            let gp = exp_se3(&Twist::from_vector(&(omega.to_vector() + d)), 1.0);
            let gm = exp_se3(&Twist::from_vector(&(omega.to_vector() - d)), 1.0);
            let x = g0.inverse().to_matrix() * (gp.to_matrix() - gm.to_matrix()) / (2.0 * h);
            let col = Vector6::new(x[(2, 1)], x[(0, 2)], x[(1, 0)], x[(0, 3)], x[(1, 3)], x[(2, 3)]);
            assert_relative_eq!(col, t.column(j).into_owned(), epsilon = 1e-8);
        }
    }

    #[test]
    fn euler_cases() {
        assert_eq!(euler_zyx_rotation(0.0, 0.0, 0.0), Matrix3::identity());
        assert_relative_eq!(euler_zyx_rotation(0.0, 0.0, PI / 18.0), rot_z(PI / 18.0));
        assert_eq!(euler_rate_map(0.0, 0.0).unwrap(), Matrix3::identity());
        let t = euler_rate_map(PI / 6.0, PI / 6.0).unwrap();
        let (s, c) = (0.5, 3f64.sqrt() / 2.0);
        let expected = Matrix3::new(1.0, 0.0, -s, 0.0, c, s * c, 0.0, -s, c * c);
        assert_relative_eq!(t, expected, epsilon = 1e-15);
        assert!(matches!(
            euler_rate_map(0.0, PI / 2.0 - 1e-4),
            Err(Error::GimbalLock { .. })
        ));
    }

    #[test]
    fn euler_rate_map_matches_fd_for_random_angles() {
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        let angles = (-PI..PI, -1.3..1.3f64, -PI..PI);
        for _ in 0..100 {
            let (phi, theta, psi) = ValueTree::current(&angles.new_tree(&mut runner).unwrap());
            let t = euler_rate_map(phi, theta).unwrap();
            let r = euler_zyx_rotation(phi, theta, psi);
            let h = 1e-6;
            for j in 0..3 {
                let mut d = [0.0; 3];
                d[j] = h;
                let rp = euler_zyx_rotation(phi + d[0], theta + d[1], psi + d[2]);
                let rm = euler_zyx_rotation(phi - d[0], theta - d[1], psi - d[2]);
                let w = r.transpose() * (rp - rm) / (2.0 * h);
                let col = Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
                assert!((col - t.column(j)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn euler_matches_axis_angle_construction() {
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        for _ in 0..50 {
            let tree = (-PI..PI, -1.5..1.5f64, -PI..PI).new_tree(&mut runner).unwrap();
            let (phi, theta, psi) = ValueTree::current(&tree);
            let axis = |v: Vector3<f64>, a: f64| {
                nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(v), a)
                    .into_inner()
            };
            let oracle = axis(Vector3::z(), psi) * axis(Vector3::y(), theta) * axis(Vector3::x(), phi);
            assert_relative_eq!(euler_zyx_rotation(phi, theta, psi), oracle, epsilon = 1e-14);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn vee_hat_roundtrip(xi in twist()) {
            prop_assert_eq!(vee(&hat(&xi)).unwrap(), xi);
        }

        #[test]
        fn adjoint_of_inverse(g in pose()) {
            let prod = adjoint_rep(&g) * adjoint_rep(&g.inverse());
            prop_assert!((prod - Matrix6::identity()).norm() < 1e-10);
        }

        #[test]
        fn adjoint_is_homomorphism(a in pose(), b in pose()) {
            let lhs = adjoint_rep(&(a * b));
            let rhs = adjoint_rep(&a) * adjoint_rep(&b);
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn bracket_antisymmetry(a in twist(), b in twist()) {
            let lhs = ad_op(&a) * b.to_vector();
            let rhs = -(ad_op(&b) * a.to_vector());
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn exp_matches_rk4(xi in twist(), h in 0.0..1.0f64) {
            let g = exp_se3(&xi, h).to_matrix();
            let oracle = rk4_exp(&xi, h, 1000);
            prop_assert!((g - oracle).norm() < 1e-8);
        }

        #[test]
        fn exp_inverse_pair(xi in twist(), h in 0.0..1.0f64) {
            let neg = Twist::new(-xi.angular, -xi.linear);
            let g = exp_se3(&xi, h) * exp_se3(&neg, h);
            prop_assert!((g.to_matrix() - Matrix4::identity()).norm() < 1e-12);
        }
    }
}
