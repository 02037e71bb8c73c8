//! Synthetic pinhole cameras, fiducial projection, roll/pitch compensation
//! through a virtual camera, and the six image features used by the servo.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{section_pose, uav_pose, Chain, GeneralizedState};
use crate::liegroup::{check_gimbal, exp_se3, rot_z, wrap_angle, SE3Pose, Twist};

/// Pixel margin a corner must keep from the image border to count as visible.
pub const VISIBILITY_MARGIN: f64 = 2.0;
/// Central-difference step for the interaction matrix.
pub const INTERACTION_STEP: f64 = 1e-5;
/// Condition number above which the interaction matrix is rejected.
pub const MAX_INTERACTION_CONDITION: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    /// Tip-mounted camera.
    pub fn local_default() -> Self {
        Self {
            width: 1024,
            height: 1024,
            focal: 886.8,
            cx: 512.0,
            cy: 512.0,
            near: 0.5,
            far: 10.0,
        }
    }

    /// Body-mounted camera.
    pub fn global_default() -> Self {
        Self {
            width: 500,
            height: 500,
            focal: 350.5,
            cx: 250.0,
            cy: 250.0,
            near: 0.01,
            far: 20.0,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let fail = |field: &str, message: String| Error::Validation {
            field: format!("{name}.{field}"),
            message,
        };
        if self.width == 0 || self.height == 0 {
            return Err(fail("width", "image size must be positive".into()));
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(fail("focal", format!("must be finite and > 0 (got {})", self.focal)));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(fail("cx", format!("principal point {} outside the image", self.cx)));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(fail("cy", format!("principal point {} outside the image", self.cy)));
        }
        if !(self.near > 0.0 && self.far > self.near && self.far.is_finite()) {
            return Err(fail("far", format!("need 0 < near < far (got {} / {})", self.near, self.far)));
        }
        Ok(())
    }

    pub fn to_pixel(&self, normalized: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.focal * normalized.x + self.cx,
            self.focal * normalized.y + self.cy,
        )
    }

    pub fn to_normalized(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.focal,
            (pixel.y - self.cy) / self.focal,
            1.0,
        )
    }

    pub fn in_bounds(&self, pixel: &Vector2<f64>) -> bool {
        let m = VISIBILITY_MARGIN;
        pixel.x > m
            && pixel.x < self.width as f64 - m
            && pixel.y > m
            && pixel.y < self.height as f64 - m
    }
}

/// Square planar marker; its outward normal is the local +z axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiducialTarget {
    pub pose: SE3Pose,
    pub side: f64,
}

impl FiducialTarget {
    /// Marker lying face-up on the ground at `center`.
    pub fn on_ground(center: Vector3<f64>, side: f64) -> Self {
        Self {
            pose: SE3Pose::new(rot_z(std::f64::consts::PI), center),
            side,
        }
    }

    /// Corners in the marker frame, counter-clockwise from bottom-left.
    pub fn local_corners(&self) -> [Vector3<f64>; 4] {
        let h = 0.5 * self.side;
        [
            Vector3::new(-h, -h, 0.0),
            Vector3::new(h, -h, 0.0),
            Vector3::new(h, h, 0.0),
            Vector3::new(-h, h, 0.0),
        ]
    }

    pub fn corners(&self) -> [Vector3<f64>; 4] {
        self.local_corners().map(|c| self.pose.transform_point(&c))
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedFeature {
    /// `(u, v, 1)`.
    pub normalized: Vector3<f64>,
    pub depth: f64,
    pub pixel: Vector2<f64>,
    pub visible: bool,
}

pub fn project(
    camera_pose: &SE3Pose,
    intrinsics: &CameraIntrinsics,
    point: &Vector3<f64>,
) -> Result<ProjectedFeature> {
    if !point.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument("point is not finite".into()));
    }
    let r = camera_pose.inverse().transform_point(point);
    if r.z <= intrinsics.near {
        return Err(Error::BehindCamera { depth: r.z });
    }
    let normalized = r / r.z;
    let pixel = intrinsics.to_pixel(&normalized);
    let visible = r.z < intrinsics.far && intrinsics.in_bounds(&pixel);
    Ok(ProjectedFeature {
        normalized,
        depth: r.z,
        pixel,
        visible,
    })
}

/// Projection of the four marker corners; `None` where a corner is not in
/// front of the near plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetView {
    pub corners: [Option<ProjectedFeature>; 4],
}

impl TargetView {
    pub fn all_visible(&self) -> bool {
        self.corners.iter().all(|c| c.is_some_and(|c| c.visible))
    }

    pub fn visible_count(&self) -> usize {
        self.corners.iter().filter(|c| c.is_some_and(|c| c.visible)).count()
    }

    /// Normalized corner coordinates, if all four project.
    pub fn normalized(&self) -> Option<[Vector3<f64>; 4]> {
        let mut out = [Vector3::zeros(); 4];
        for (o, c) in out.iter_mut().zip(&self.corners) {
            *o = c.as_ref()?.normalized;
        }
        Some(out)
    }
}

pub fn observe(
    camera_pose: &SE3Pose,
    intrinsics: &CameraIntrinsics,
    target: &FiducialTarget,
) -> Result<TargetView> {
    let mut corners = [None; 4];
    for (slot, p) in corners.iter_mut().zip(target.corners()) {
        *slot = match project(camera_pose, intrinsics, &p) {
            Ok(f) => Some(f),
            Err(Error::BehindCamera { .. }) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(TargetView { corners })
}

/// `g_CL = g_b g_a^b g_L^a g_CL^L`.
pub fn local_camera_pose(chain: &Chain, state: &GeneralizedState) -> Result<SE3Pose> {
    Ok(section_pose(chain, state, chain.length())? * chain.mounts.local_camera)
}

/// `g_CG = g_b g_CG^b`.
pub fn global_camera_pose(chain: &Chain, state: &GeneralizedState) -> SE3Pose {
    uav_pose(state) * chain.mounts.global_camera
}

/// Camera sharing the local camera's optical centre, with the UAV roll and
/// pitch removed from its orientation.
pub fn virtual_camera_pose(chain: &Chain, state: &GeneralizedState) -> Result<SE3Pose> {
    let e = state.euler();
    check_gimbal(e.y)?;
    let real = local_camera_pose(chain, state)?;
    let body = uav_pose(state);
    let mounted = body.rotation.transpose() * real.rotation;
    Ok(SE3Pose::new(rot_z(e.z) * mounted, real.translation))
}

/// `R_CL^CV = R_CV^T R_CL`.
pub fn virtual_camera_rotation(chain: &Chain, state: &GeneralizedState) -> Result<Matrix3<f64>> {
    let virt = virtual_camera_pose(chain, state)?;
    let real = local_camera_pose(chain, state)?;
    Ok(virt.rotation.transpose() * real.rotation)
}

/// Maps normalized local-camera points into the virtual camera.
pub fn compensate(points: &[Vector3<f64>; 4], rotation: &Matrix3<f64>) -> Result<[Vector3<f64>; 4]> {
    let mut out = [Vector3::zeros(); 4];
    for (o, p) in out.iter_mut().zip(points) {
        let r = rotation * p;
        if r.z < 1e-6 {
            return Err(Error::DegenerateProjection { w: r.z });
        }
        *o = r / r.z;
    }
    Ok(out)
}

/// `(p_phi, p_theta, p_psi, p_x, p_y, p_z)`: angles in rad, the rest in
/// normalized image units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub Vector6<f64>);

impl FeatureVector {
    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

pub fn advanced_features(points: &[Vector3<f64>; 4]) -> Result<FeatureVector> {
    for i in 0..4 {
        for j in (i + 1)..4 {
            let d = (points[i].xy() - points[j].xy()).norm();
            if !(d > 1e-12) {
                return Err(Error::DegenerateQuad);
            }
        }
    }
    let (u, v): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.x, p.y)).unzip();
    let (u1, u2, u3, u4) = (u[0], u[1], u[2], u[3]);
    let (v1, v2, v3, v4) = (v[0], v[1], v[2], v[3]);
    let px = (u1 + u2 + u3 + u4) / 4.0;
    let py = (v1 + v2 + v3 + v4) / 4.0;
    let edge = |du: f64, dv: f64| (du * du + dv * dv).sqrt();
    let pz = edge(u2 - u1, v2 - v1) + edge(u3 - u2, v3 - v2) + edge(u4 - u3, v4 - v3) + edge(u4 - u1, v4 - v1);
    let p_phi = 0.5 * (((u2 - u1) / (v1 - v2)).atan() - ((u3 - u4) / (v4 - v3)).atan());
    let p_theta = 0.5 * (((v3 - v2) / (u3 - u2)).atan() - ((v4 - v1) / (u4 - u1)).atan());
    let p_psi = 0.5 * (((v1 - v4) / (u4 - u1)).atan() + ((v2 - v3) / (u3 - u2)).atan());
    let f = FeatureVector(Vector6::new(p_phi, p_theta, p_psi, px, py, pz));
    if !f.is_finite() {
        return Err(Error::DegenerateQuad);
    }
    Ok(f)
}

/// `p - p_d` with the three angle components wrapped to `(-pi, pi]`.
pub fn feature_error(p: &FeatureVector, desired: &FeatureVector) -> Vector6<f64> {
    let mut e = p.0 - desired.0;
    for i in 0..3 {
        e[i] = wrap_angle(e[i]);
    }
    e
}

/// Features of the marker seen from `camera_pose` (no visibility check).
pub fn features_at(camera_pose: &SE3Pose, target: &FiducialTarget) -> Result<FeatureVector> {
    let inv = camera_pose.inverse();
    let mut pts = [Vector3::zeros(); 4];
    for (p, c) in pts.iter_mut().zip(target.corners()) {
        let r = inv.transform_point(&c);
        if r.z <= 0.0 {
            return Err(Error::BehindCamera { depth: r.z });
        }
        *p = r / r.z;
    }
    advanced_features(&pts)
}

/// Feature Jacobian with respect to the camera body twist, by central
/// differences of the exact feature map.
pub fn feature_jacobian(camera_pose: &SE3Pose, target: &FiducialTarget, step: f64) -> Result<Matrix6<f64>> {
    let mut j = Matrix6::zeros();
    for k in 0..6 {
        let mut e = Vector6::zeros();
        e[k] = step;
        let plus = *camera_pose * exp_se3(&Twist::from_vector(&e), 1.0);
        let minus = *camera_pose * exp_se3(&Twist::from_vector(&(-e)), 1.0);
        let fp = features_at(&plus, target)?;
        let fm = features_at(&minus, target)?;
        let col = feature_error(&fp, &fm) / (2.0 * step);
        j.set_column(k, &col);
    }
    Ok(j)
}

pub fn condition_number(m: &Matrix6<f64>) -> f64 {
    let sv = m.singular_values();
    let lo = sv.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / lo
    }
}

/// Interaction matrix at a pose from which every corner is visible.
pub fn interaction_matrix(
    camera_pose: &SE3Pose,
    intrinsics: &CameraIntrinsics,
    target: &FiducialTarget,
) -> Result<Matrix6<f64>> {
    if !observe(camera_pose, intrinsics, target)?.all_visible() {
        return Err(Error::InvalidArgument("target corners are not all visible".into()));
    }
    let j = feature_jacobian(camera_pose, target, INTERACTION_STEP)?;
    let condition = condition_number(&j);
    if condition > MAX_INTERACTION_CONDITION {
        return Err(Error::SingularInteraction { condition });
    }
    Ok(j)
}

/// Root mean square of the six feature-error components.
pub fn normalized_rmse(e: &Vector6<f64>) -> f64 {
    (e.norm_squared() / 6.0).sqrt()
}
