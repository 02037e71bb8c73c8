//! Visual servo loop: IBVS twist, joint-rate resolution, out-of-view
//! recovery planning and the mode supervisor.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{section_pose, tip_in_attachment, tip_jacobian, Chain, GeneralizedState, UAV_DOF};
use crate::liegroup::{adjoint_rep, Twist};
use crate::vision::{condition_number, virtual_camera_pose, ProjectedFeature, MAX_INTERACTION_CONDITION};

/// Damping used when the interaction matrix is ill-conditioned.
pub const IBVS_DAMPING: f64 = 1e-6;
/// Relative singular-value cutoff of the pseudo-inverse.
pub const PINV_TOLERANCE: f64 = 1e-8;
pub const VISIBLE_FRAMES_TO_ENTER_IBVS: usize = 3;
pub const DONE_ERROR: f64 = 0.01;
pub const DONE_FRAMES: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ServoMode {
    Ibvs,
    Recovery,
    Done,
}

impl fmt::Display for ServoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServoMode::Ibvs => "IBVS",
            ServoMode::Recovery => "RECOVERY",
            ServoMode::Done => "DONE",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServoCommand {
    pub qdot_d: DVector<f64>,
    pub mode: ServoMode,
}

/// `v = -lambda J^-1 e`, with a damped least-squares fallback.
pub fn ibvs_twist(e: &Vector6<f64>, j_img: &Matrix6<f64>, lambda: f64) -> Result<Twist> {
    let condition = condition_number(j_img);
    let v = if condition <= MAX_INTERACTION_CONDITION {
        j_img
            .lu()
            .solve(e)
            .ok_or(Error::SingularInteraction { condition })?
    } else {
        let jjt = j_img * j_img.transpose() + Matrix6::identity() * IBVS_DAMPING;
        let y = jjt
            .cholesky()
            .ok_or(Error::SingularInteraction { condition })?
            .solve(e);
        j_img.transpose() * y
    };
    let v = -v * lambda;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularInteraction { condition });
    }
    Ok(Twist::from_vector(&v))
}

/// Scales the whole twist down so that neither its linear nor its angular
/// part exceeds the given norm.
pub fn saturate_twist(v: &Twist, max_linear: f64, max_angular: f64) -> Twist {
    let ratio = (v.linear.norm() / max_linear).max(v.angular.norm() / max_angular);
    if ratio > 1.0 {
        Twist::new(v.angular / ratio, v.linear / ratio)
    } else {
        *v
    }
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `PINV_TOLERANCE * sigma_max` dropped.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_TOLERANCE * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Tip twist `v_L^L = Ad(g_CV^L) v_CV` for a virtual-camera twist.
pub fn virtual_to_tip_twist(v_cv: &Twist, chain: &Chain, state: &GeneralizedState) -> Result<Vector6<f64>> {
    let tip = section_pose(chain, state, chain.length())?;
    let cv = virtual_camera_pose(chain, state)?;
    let cv_in_tip = tip.inverse() * cv;
    Ok(adjoint_rep(&cv_in_tip) * v_cv.to_vector())
}

/// `qdot_d = (J_L^L)^+ Ad(g_CV^L) v_CV` over all coordinates.
pub fn camera_twist_to_qdot(v_cv: &Twist, chain: &Chain, state: &GeneralizedState) -> Result<DVector<f64>> {
    let all: Vec<usize> = (0..chain.dof()).collect();
    camera_twist_to_qdot_on(v_cv, chain, state, &all)
}

/// As `camera_twist_to_qdot`, restricted to the coordinates in `columns`;
/// the others get zero rate.
pub fn camera_twist_to_qdot_on(
    v_cv: &Twist,
    chain: &Chain,
    state: &GeneralizedState,
    columns: &[usize],
) -> Result<DVector<f64>> {
    let n = chain.dof();
    if let Some(&bad) = columns.iter().find(|&&c| c >= n) {
        return Err(Error::InvalidArgument(format!("coordinate {bad} out of range (n = {n})")));
    }
    let v_l = virtual_to_tip_twist(v_cv, chain, state)?;
    let tj = tip_jacobian(chain, state)?;
    let j = DMatrix::from_column_slice(6, n, tj.as_slice()).select_columns(columns);
    let sol = pseudo_inverse(&j) * DVector::from_column_slice(v_l.as_slice());
    let mut qdot = DVector::zeros(n);
    for (k, &c) in columns.iter().enumerate() {
        qdot[c] = sol[k];
    }
    Ok(qdot)
}

/// Coordinates the visual loop commands directly: everything except roll and
/// pitch, which the attitude loop owns.
pub fn commanded_coordinates(n: usize) -> Vec<usize> {
    (0..n).filter(|&i| i != 0 && i != 1).collect()
}

/// Target point expressed in the local camera frame given its position in the
/// global camera frame, through the rod kinematics alone.
pub fn target_in_local(chain: &Chain, q_s: &DVector<f64>, in_global: &Vector3<f64>) -> Result<Vector3<f64>> {
    let tip = tip_in_attachment(chain, q_s)?;
    let m = &chain.mounts;
    let chain_pose = m.local_camera.inverse() * tip.inverse() * m.attachment.inverse() * m.global_camera;
    Ok(chain_pose.transform_point(in_global))
}

/// `r_p^CL` from a global-camera detection with known depth.
pub fn estimate_target_in_local(
    chain: &Chain,
    state: &GeneralizedState,
    detection: &ProjectedFeature,
) -> Result<Vector3<f64>> {
    if detection.depth <= 0.0 {
        return Err(Error::BehindCamera { depth: detection.depth });
    }
    target_in_local(chain, &state.strain(), &(detection.normalized * detection.depth))
}

/// Search box and resolution of the recovery grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySearch {
    pub bound: f64,
    pub nodes: usize,
    pub refine_steps: usize,
}

impl Default for RecoverySearch {
    fn default() -> Self {
        Self {
            bound: 2.0,
            nodes: 41,
            refine_steps: 20,
        }
    }
}

fn lateral(chain: &Chain, q_s: &DVector<f64>, p: &Vector3<f64>) -> Result<Option<Vector2<f64>>> {
    let r = target_in_local(chain, q_s, p)?;
    Ok((r.z > 0.0).then(|| r.xy()))
}

fn better(a: (f64, &DVector<f64>), b: (f64, &DVector<f64>)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    let (na, nb) = (a.1.norm(), b.1.norm());
    if na != nb {
        return na < nb;
    }
    a.1.iter().zip(b.1.iter()).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Rod configuration that centres the target laterally in the local camera,
/// keeping it in front of the lens. `in_global` is the target point in the
/// global camera frame.
pub fn recovery_target(
    chain: &Chain,
    state: &GeneralizedState,
    in_global: &Vector3<f64>,
    search: &RecoverySearch,
) -> Result<DVector<f64>> {
    if chain.basis.dof() != 2 {
        return Err(Error::InvalidArgument(format!(
            "recovery search needs two rod coordinates (got {})",
            chain.basis.dof()
        )));
    }
    if search.nodes < 2 || !(search.bound > 0.0) {
        return Err(Error::InvalidArgument("recovery grid needs >= 2 nodes and a positive bound".into()));
    }
    let current = state.strain();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |q: DVector<f64>| -> Result<()> {
        if let Some(xy) = lateral(chain, &q, in_global)? {
            let obj = xy.norm();
            if best.as_ref().is_none_or(|(b, bq)| better((obj, &q), (*b, bq))) {
                best = Some((obj, q));
            }
        }
        Ok(())
    };
    consider(current.clone())?;
    let step = 2.0 * search.bound / (search.nodes - 1) as f64;
    for i in 0..search.nodes {
        for j in 0..search.nodes {
            let q = DVector::from_column_slice(&[
                -search.bound + step * i as f64,
                -search.bound + step * j as f64,
            ]);
            consider(q)?;
        }
    }
    let (mut obj, mut q) = best.ok_or(Error::NoFeasibleConfig)?;
    // damped Gauss-Newton on the lateral offset
    let mut mu = 1e-6;
    for _ in 0..search.refine_steps {
        if obj == 0.0 {
            break;
        }
        let r0 = lateral(chain, &q, in_global)?.ok_or(Error::NoFeasibleConfig)?;
        let mut jac = nalgebra::Matrix2::zeros();
        for k in 0..2 {
            let h = 1e-7 * q[k].abs().max(1.0);
            let mut qp = q.clone();
            qp[k] += h;
            let mut qm = q.clone();
            qm[k] -= h;
            let (Some(a), Some(b)) = (lateral(chain, &qp, in_global)?, lateral(chain, &qm, in_global)?) else {
                break;
            };
            jac.set_column(k, &((a - b) / (2.0 * h)));
        }
        let normal = jac.transpose() * jac + nalgebra::Matrix2::identity() * mu;
        let Some(delta) = normal.try_inverse().map(|inv| -(inv * jac.transpose() * r0)) else {
            break;
        };
        let cand = &q + DVector::from_column_slice(delta.as_slice());
        match lateral(chain, &cand, in_global)? {
            Some(xy) if xy.norm() < obj => {
                obj = xy.norm();
                q = cand;
                mu = (mu * 0.1).max(1e-12);
            }
            _ => mu *= 10.0,
        }
    }
    Ok(q)
}

/// Duration of the recovery move, `max(2 s, 4 |dq|)`.
pub fn recovery_duration(from: &DVector<f64>, to: &DVector<f64>) -> f64 {
    (4.0 * (to - from).norm()).max(2.0)
}

/// Rest-to-rest cubic per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicTrajectory {
    pub t0: f64,
    pub tf: f64,
    /// Rows are coordinates, columns `a0..a3` in time shifted by `t0`.
    pub coefficients: DMatrix<f64>,
}

pub fn plan_cubic(q0: &DVector<f64>, qf: &DVector<f64>, t0: f64, tf: f64) -> Result<CubicTrajectory> {
    if !(tf > t0) || !t0.is_finite() || !tf.is_finite() {
        return Err(Error::DegenerateWindow { t0, tf });
    }
    if q0.len() != qf.len() {
        return Err(Error::Dimension(format!("endpoints of lengths {} and {}", q0.len(), qf.len())));
    }
    let t = tf - t0;
    let mut c = DMatrix::zeros(q0.len(), 4);
    for i in 0..q0.len() {
        let d = qf[i] - q0[i];
        c[(i, 0)] = q0[i];
        c[(i, 2)] = 3.0 * d / (t * t);
        c[(i, 3)] = -2.0 * d / (t * t * t);
    }
    Ok(CubicTrajectory {
        t0,
        tf,
        coefficients: c,
    })
}

impl CubicTrajectory {
    /// Position and velocity; held at the endpoints outside the window.
    pub fn sample(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let tau = t.clamp(self.t0, self.tf) - self.t0;
        let c = &self.coefficients;
        let n = c.nrows();
        let q = DVector::from_fn(n, |i, _| c[(i, 0)] + tau * (c[(i, 1)] + tau * (c[(i, 2)] + tau * c[(i, 3)])));
        let qd = if t < self.t0 || t > self.tf {
            DVector::zeros(n)
        } else {
            DVector::from_fn(n, |i, _| c[(i, 1)] + tau * (2.0 * c[(i, 2)] + 3.0 * tau * c[(i, 3)]))
        };
        (q, qd)
    }
}

/// Mode switching with entry hysteresis and a settling window.
#[derive(Clone, Debug, PartialEq)]
pub struct Supervisor {
    mode: ServoMode,
    visible_streak: usize,
    settled_streak: usize,
}

impl Supervisor {
    pub fn new(mode: ServoMode) -> Self {
        Self {
            mode,
            visible_streak: 0,
            settled_streak: 0,
        }
    }

    /// IBVS if the local camera already sees the target, recovery otherwise.
    pub fn initial(local_visible: bool) -> Self {
        let mut s = Self::new(if local_visible { ServoMode::Ibvs } else { ServoMode::Recovery });
        if local_visible {
            s.visible_streak = VISIBLE_FRAMES_TO_ENTER_IBVS;
        }
        s
    }

    pub fn mode(&self) -> ServoMode {
        self.mode
    }

    /// Advances one frame. `error` is the feature error when the local camera
    /// sees every corner.
    pub fn update(
        &mut self,
        local_visible: bool,
        global_visible: bool,
        error: Option<&Vector6<f64>>,
    ) -> Result<ServoMode> {
        if self.mode == ServoMode::Done {
            return Ok(self.mode);
        }
        if !local_visible && !global_visible {
            return Err(Error::TargetLost);
        }
        self.visible_streak = if local_visible { self.visible_streak + 1 } else { 0 };
        match self.mode {
            ServoMode::Recovery => {
                if self.visible_streak >= VISIBLE_FRAMES_TO_ENTER_IBVS {
                    self.mode = ServoMode::Ibvs;
                    self.settled_streak = 0;
                }
            }
            ServoMode::Ibvs => {
                if !local_visible {
                    self.mode = ServoMode::Recovery;
                    self.settled_streak = 0;
                }
            }
            ServoMode::Done => {}
        }
        if self.mode == ServoMode::Ibvs {
            let settled = error.is_some_and(|e| e.norm() < DONE_ERROR);
            self.settled_streak = if settled { self.settled_streak + 1 } else { 0 };
            if self.settled_streak >= DONE_FRAMES {
                self.mode = ServoMode::Done;
            }
        }
        Ok(self.mode)
    }
}

/// Keeps the UAV entries of a recovery command at zero.
pub fn recovery_command(strain_rate: &DVector<f64>) -> DVector<f64> {
    let mut q = DVector::zeros(UAV_DOF + strain_rate.len());
    q.rows_mut(UAV_DOF, strain_rate.len()).copy_from(strain_rate);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::MountTransforms;
    use crate::liegroup::{rot_x, rot_z, SE3Pose};
    use crate::rod::{BasisKind, StrainBasis};
    use crate::vision::{
        advanced_features, compensate, feature_error, feature_jacobian, local_camera_pose, observe,
        project, virtual_camera_rotation, global_camera_pose, CameraIntrinsics, FeatureVector,
        FiducialTarget, INTERACTION_STEP,
    };
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn chain() -> Chain {
        let mounts = MountTransforms {
            attachment: SE3Pose::new(rot_z(-PI / 2.0) * rot_x(PI), Vector3::new(0.0, 0.0, -0.05)),
            local_camera: SE3Pose::identity(),
            global_camera: SE3Pose::new(rot_x(PI), Vector3::new(0.05, 0.0, -0.03)),
        };
        Chain::new(StrainBasis::new(BasisKind::ConstantBending, 1.0), 20, mounts).unwrap()
    }

    fn state(q: [f64; 8]) -> GeneralizedState {
        GeneralizedState::at_rest(DVector::from_column_slice(&q))
    }

    fn marker() -> FiducialTarget {
        FiducialTarget::on_ground(Vector3::zeros(), 0.2)
    }

    fn virtual_features(c: &Chain, s: &GeneralizedState) -> FeatureVector {
        let real = local_camera_pose(c, s).unwrap();
        let pts = observe(&real, &CameraIntrinsics::local_default(), &marker())
            .unwrap()
            .normalized()
            .unwrap();
        let comp = compensate(&pts, &virtual_camera_rotation(c, s).unwrap()).unwrap();
        advanced_features(&comp).unwrap()
    }

    #[test]
    fn ibvs_cases() {
        let j = Matrix6::identity();
        assert_eq!(ibvs_twist(&Vector6::zeros(), &j, 0.8).unwrap().to_vector(), Vector6::zeros());
        let e = Vector6::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.0);
        let v = ibvs_twist(&e, &j, 2.0).unwrap().to_vector();
        assert_relative_eq!(v, Vector6::new(0.0, 0.0, 0.0, -0.2, 0.0, 0.0));
        let mut sing = Matrix6::identity();
        sing[(5, 5)] = 0.0;
        let v = ibvs_twist(&Vector6::repeat(1.0), &sing, 1.0).unwrap().to_vector();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v[5].abs() < 1e-12);
    }

    #[test]
    fn qdot_resolution_cases() {
        let c = chain();
        let s = state([0.05, -0.03, 0.2, 0.1, 0.0, 3.0, 0.3, -0.2]);
        let zero = camera_twist_to_qdot(&Twist::zero(), &c, &s).unwrap();
        assert_eq!(zero.norm(), 0.0);
        let v = Twist::from_vector(&Vector6::new(0.1, -0.2, 0.05, 0.3, 0.1, -0.2));
        let qd = camera_twist_to_qdot(&v, &c, &s).unwrap();
        let tj = tip_jacobian(&c, &s).unwrap();
        let j = DMatrix::from_column_slice(6, 8, tj.as_slice());
        let target = DVector::from_column_slice(virtual_to_tip_twist(&v, &c, &s).unwrap().as_slice());
        let residual = &j * &qd - &target;
        assert!((j.transpose() * &residual).norm() < 1e-8);
        // minimum norm: independent solve via the normal equations of J J^T
        let jjt = &j * j.transpose();
        let y = jjt.lu().solve(&target).unwrap();
        let min_norm = j.transpose() * y;
        assert_relative_eq!(qd, min_norm, epsilon = 1e-8);
        let actuated = camera_twist_to_qdot_on(&v, &c, &s, &commanded_coordinates(8)).unwrap();
        assert_eq!((actuated[0], actuated[1]), (0.0, 0.0));
        assert!(camera_twist_to_qdot_on(&v, &c, &s, &[9]).is_err());
    }

    #[test]
    fn target_estimate_matches_world() {
        let c = chain();
        let target = marker();
        let gcam = CameraIntrinsics::global_default();
        for q in [
            [0.0, 0.0, 0.0, 0.0, 0.0, 5.0, -0.3, -0.4],
            [0.05, -0.04, 0.6, 0.3, -0.2, 4.0, 0.5, 0.1],
        ] {
            let s = state(q);
            let det = project(&global_camera_pose(&c, &s), &gcam, &target.center()).unwrap();
            let est = estimate_target_in_local(&c, &s, &det).unwrap();
            let truth = local_camera_pose(&c, &s).unwrap().inverse().transform_point(&target.center());
            assert_relative_eq!(est, truth, epsilon = 1e-9);
        }
        // rotating the scene about the vertical axis changes nothing
        let s = state([0.0, 0.0, 0.0, 0.2, 0.1, 5.0, -0.3, -0.4]);
        let det = project(&global_camera_pose(&c, &s), &gcam, &target.center()).unwrap();
        let base = estimate_target_in_local(&c, &s, &det).unwrap();
        let yaw = SE3Pose::from_rotation(rot_z(0.7));
        let moved = FiducialTarget {
            pose: yaw * target.pose,
            side: target.side,
        };
        let mut sy = s.clone();
        sy.q[2] += 0.7;
        let p = yaw.transform_point(&s.position());
        sy.q.fixed_rows_mut::<3>(3).copy_from(&p);
        let det2 = project(&global_camera_pose(&c, &sy), &gcam, &moved.center()).unwrap();
        assert_relative_eq!(estimate_target_in_local(&c, &sy, &det2).unwrap(), base, epsilon = 1e-9);
    }

    #[test]
    fn recovery_keeps_centered_incumbent() {
        let c = chain();
        let s = state([0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.37, -0.21]);
        let local = local_camera_pose(&c, &s).unwrap();
        let cam_g = global_camera_pose(&c, &s);
        // place the target on the local optical axis
        let point = local.transform_point(&Vector3::new(0.0, 0.0, 2.0));
        let in_global = cam_g.inverse().transform_point(&point);
        let q = recovery_target(&c, &s, &in_global, &RecoverySearch::default()).unwrap();
        assert_relative_eq!(q, s.strain(), epsilon = 1e-12);
    }

    #[test]
    fn recovery_centers_scenario_two_target() {
        let c = chain();
        let s = state([0.0, 0.0, 0.0, 0.0, 0.0, 5.0, -0.3, -0.4]);
        let cam_g = global_camera_pose(&c, &s);
        let in_global = cam_g.inverse().transform_point(&marker().center());
        let search = RecoverySearch::default();
        let q = recovery_target(&c, &s, &in_global, &search).unwrap();
        let r = target_in_local(&c, &q, &in_global).unwrap();
        assert!(r.z > 0.0);
        assert!(r.xy().norm() < 1e-3, "lateral {}", r.xy().norm());
        let obj = r.xy().norm();
        let step = 4.0 / 40.0;
        for i in 0..41 {
            for j in 0..41 {
                let g = DVector::from_column_slice(&[-2.0 + step * i as f64, -2.0 + step * j as f64]);
                let rg = target_in_local(&c, &g, &in_global).unwrap();
                if rg.z > 0.0 {
                    assert!(obj <= rg.xy().norm());
                }
            }
        }
    }

    #[test]
    fn recovery_infeasible_behind() {
        let c = chain();
        let s = state([0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0]);
        // a point above the UAV is behind the downward camera for every bend in the box
        let in_global = global_camera_pose(&c, &s).inverse().transform_point(&Vector3::new(0.0, 0.0, 9.0));
        let search = RecoverySearch {
            bound: 0.5,
            ..RecoverySearch::default()
        };
        assert!(matches!(
            recovery_target(&c, &s, &in_global, &search),
            Err(Error::NoFeasibleConfig)
        ));
    }

    #[test]
    fn cubic_cases() {
        let q0 = DVector::from_column_slice(&[0.0]);
        let qf = DVector::from_column_slice(&[1.0]);
        let traj = plan_cubic(&q0, &qf, 0.0, 2.0).unwrap();
        let (q, qd) = traj.sample(1.0);
        assert_relative_eq!(q[0], 0.5);
        assert_relative_eq!(qd[0], 0.75);
        assert_eq!(traj.sample(0.0), (q0.clone(), DVector::zeros(1)));
        let (qe, qde) = traj.sample(2.0);
        assert_relative_eq!(qe[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(qde[0], 0.0, epsilon = 1e-15);
        let flat = plan_cubic(&q0, &q0, 1.0, 3.0).unwrap();
        assert_eq!(flat.sample(2.2), (q0.clone(), DVector::zeros(1)));
        assert!(matches!(plan_cubic(&q0, &qf, 1.0, 1.0), Err(Error::DegenerateWindow { .. })));
        // velocity is the derivative of position
        let t = plan_cubic(
            &DVector::from_column_slice(&[-0.3, -0.4]),
            &DVector::from_column_slice(&[0.4, 0.9]),
            0.5,
            3.5,
        )
        .unwrap();
        for k in 1..30 {
            let tt = 0.5 + 0.1 * k as f64;
            let h = 1e-6;
            let fd = (t.sample(tt + h).0 - t.sample(tt - h).0) / (2.0 * h);
            assert_relative_eq!(t.sample(tt).1, fd, epsilon = 1e-8);
        }
        assert_relative_eq!(recovery_duration(&q0, &qf), 4.0);
        assert_relative_eq!(recovery_duration(&q0, &DVector::from_column_slice(&[0.1])), 2.0);
    }

    #[test]
    fn supervisor_rules() {
        let small = Vector6::repeat(1e-3);
        let mut s = Supervisor::initial(true);
        for _ in 0..DONE_FRAMES - 1 {
            assert_eq!(s.update(true, true, Some(&small)).unwrap(), ServoMode::Ibvs);
        }
        assert_eq!(s.update(true, true, Some(&small)).unwrap(), ServoMode::Done);

        let mut s = Supervisor::initial(true);
        assert_eq!(s.update(false, true, None).unwrap(), ServoMode::Recovery);

        let mut s = Supervisor::initial(false);
        for k in 0..20 {
            let m = s.update(k % 2 == 0, true, None).unwrap();
            assert_eq!(m, ServoMode::Recovery);
        }
        for k in 0..3 {
            let m = s.update(true, true, None).unwrap();
            assert_eq!(m, if k < 2 { ServoMode::Recovery } else { ServoMode::Ibvs });
        }
        assert!(matches!(s.update(false, false, None), Err(Error::TargetLost)));
        assert_eq!(recovery_command(&DVector::from_column_slice(&[0.1, 0.2])).rows(0, 6).norm(), 0.0);
    }

    #[test]
    fn one_step_descent() {
        use proptest::strategy::{Strategy, ValueTree};
        use proptest::test_runner::TestRunner;
        let c = chain();
        let reference = state([0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let desired = virtual_features(&c, &reference);
        let mut runner = TestRunner::deterministic();
        let deg = PI / 180.0;
        let draw = (
            proptest::collection::vec(-10.0 * deg..10.0 * deg, 3),
            proptest::collection::vec(-0.15..0.15f64, 2),
            -0.35..0.35f64,
            proptest::collection::vec(-0.15..0.15f64, 2),
        );
        let dt = 0.02;
        let mut count = 0;
        while count < 50 {
            let (ang, xy, dz, bend) = draw.new_tree(&mut runner).unwrap().current();
            let s = state([ang[0], ang[1], ang[2], xy[0], xy[1], 3.0 + dz, bend[0], bend[1]]);
            let real = local_camera_pose(&c, &s).unwrap();
            if !observe(&real, &CameraIntrinsics::local_default(), &marker()).unwrap().all_visible() {
                continue;
            }
            count += 1;
            let e = feature_error(&virtual_features(&c, &s), &desired);
            let cv = virtual_camera_pose(&c, &s).unwrap();
            let j = feature_jacobian(&cv, &marker(), INTERACTION_STEP).unwrap();
            let v = ibvs_twist(&e, &j, 0.8).unwrap();
            let qd = camera_twist_to_qdot_on(&v, &c, &s, &commanded_coordinates(8)).unwrap();
            let next = GeneralizedState::at_rest(&s.q + qd * dt);
            let e1 = feature_error(&virtual_features(&c, &next), &desired);
            assert!(e1.norm() < e.norm(), "{} -> {} at {:?}", e.norm(), e1.norm(), s.q.as_slice());
        }
    }
}
