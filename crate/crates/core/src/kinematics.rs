//! Forward kinematics and body Jacobians of the UAV + rod chain.
//!
//! The rod pose is the product of per-segment exponentials
//! `exp(h xi(s_mid))` over a uniform segmentation of `[0, L]`. Rod Jacobians
//! are the exact derivative of that discrete map: every segment contributes
//! `tangent_exp(Omega) h B_q(s_mid)`, transported to the query section by the
//! inverse adjoint of the remaining segments.

use nalgebra::{DVector, Matrix6xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{
    adjoint_inv, euler_rate_map, euler_zyx_rotation, exp_se3, tangent_exp,
    SE3Pose, Twist,
};
use crate::rod::StrainBasis;

/// Number of UAV coordinates at the front of `q`.
pub const UAV_DOF: usize = 6;

/// Whole-body coordinates `(phi, theta, psi, x, y, z, q_s...)` and their rates.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl GeneralizedState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Result<Self> {
        if q.len() != qdot.len() || q.len() < UAV_DOF {
            return Err(Error::Dimension(format!(
                "q has {} entries and qdot {}; both need the same length >= {UAV_DOF}",
                q.len(),
                qdot.len()
            )));
        }
        Ok(Self { q, qdot })
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::at_rest(DVector::zeros(n))
    }

    pub fn from_parts(euler: Vector3<f64>, position: Vector3<f64>, strain: &[f64]) -> Self {
        let mut q = DVector::zeros(UAV_DOF + strain.len());
        q.fixed_rows_mut::<3>(0).copy_from(&euler);
        q.fixed_rows_mut::<3>(3).copy_from(&position);
        for (i, v) in strain.iter().enumerate() {
            q[UAV_DOF + i] = *v;
        }
        Self::at_rest(q)
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn euler(&self) -> Vector3<f64> {
        self.q.fixed_rows::<3>(0).into_owned()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.q.fixed_rows::<3>(3).into_owned()
    }

    pub fn strain(&self) -> DVector<f64> {
        self.q.rows(UAV_DOF, self.q.len() - UAV_DOF).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|x| x.is_finite())
    }
}

/// Fixed frames of the assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct MountTransforms {
    /// Rod attachment frame in the UAV frame (`g_a^b`).
    pub attachment: SE3Pose,
    /// Local (eye-in-hand) camera in the rod tip frame (`g_CL^L`).
    pub local_camera: SE3Pose,
    /// Global (eye-to-hand) camera in the UAV frame (`g_CG^b`).
    pub global_camera: SE3Pose,
}

impl Default for MountTransforms {
    fn default() -> Self {
        Self {
            attachment: SE3Pose::identity(),
            local_camera: SE3Pose::identity(),
            global_camera: SE3Pose::identity(),
        }
    }
}

/// Uniform midpoint quadrature over `[0, L]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub boundaries: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn uniform(length: f64, segments: usize) -> Result<Self> {
        if segments == 0 || !(length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quadrature needs a positive length and at least one segment (got {length}, {segments})"
            )));
        }
        let h = length / segments as f64;
        let boundaries: Vec<f64> = (0..=segments)
            .map(|i| if i == segments { length } else { i as f64 * h })
            .collect();
        let nodes = boundaries.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let weights = boundaries.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            boundaries,
            nodes,
            weights,
        })
    }

    pub fn segments(&self) -> usize {
        self.weights.len()
    }

    pub fn length(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }
}

/// Everything needed to evaluate poses and Jacobians along the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub basis: StrainBasis,
    pub grid: QuadratureGrid,
    pub mounts: MountTransforms,
}

impl Chain {
    pub fn new(basis: StrainBasis, segments: usize, mounts: MountTransforms) -> Result<Self> {
        let grid = QuadratureGrid::uniform(basis.length, segments)?;
        Ok(Self {
            basis,
            grid,
            mounts,
        })
    }

    pub fn dof(&self) -> usize {
        UAV_DOF + self.basis.dof()
    }

    pub fn length(&self) -> f64 {
        self.basis.length
    }

    fn check_state(&self, state: &GeneralizedState) -> Result<()> {
        if state.dof() != self.dof() {
            return Err(Error::Dimension(format!(
                "state has {} coordinates, chain expects {}",
                state.dof(),
                self.dof()
            )));
        }
        Ok(())
    }
}

pub fn uav_pose(state: &GeneralizedState) -> SE3Pose {
    let e = state.euler();
    SE3Pose::new(euler_zyx_rotation(e.x, e.y, e.z), state.position())
}

/// `J_b^b = [T 0 0; 0 R_b^T 0]`.
pub fn uav_jacobian(state: &GeneralizedState) -> Result<Matrix6xX<f64>> {
    let e = state.euler();
    let t = euler_rate_map(e.x, e.y)?;
    let r = euler_zyx_rotation(e.x, e.y, e.z);
    let mut j = Matrix6xX::zeros(state.dof());
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&t);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&r.transpose());
    Ok(j)
}

/// Rod section pose `g_s^a` and the rod block of its body Jacobian.
#[derive(Clone, Debug)]
pub struct RodSection {
    pub s: f64,
    pub pose: SE3Pose,
    /// 6 x n_s; maps `qdot_s` to the section body twist for a fixed base.
    pub jacobian: Matrix6xX<f64>,
}

struct SweepState {
    pose: SE3Pose,
    jac: Matrix6xX<f64>,
}

fn advance(
    basis: &StrainBasis,
    q_s: &DVector<f64>,
    from: &SweepState,
    start: f64,
    len: f64,
    with_jacobian: bool,
) -> Result<SweepState> {
    if len == 0.0 {
        return Ok(SweepState {
            pose: from.pose,
            jac: from.jac.clone(),
        });
    }
    let mid = start + 0.5 * len;
    let xi = basis.strain_field(q_s, mid)?;
    let omega = xi.scaled(len);
    let step = exp_se3(&omega, 1.0);
    let pose = from.pose * step;
    let jac = if with_jacobian && basis.dof() > 0 {
        let b = basis.matrix(mid)?;
        adjoint_inv(&step) * &from.jac + tangent_exp(&omega) * (b * len)
    } else {
        from.jac.clone()
    };
    Ok(SweepState { pose, jac })
}

/// Evaluates rod poses (and Jacobians when asked) at sorted arc lengths in a
/// single pass along the segmentation.
pub fn rod_sweep(
    basis: &StrainBasis,
    grid: &QuadratureGrid,
    q_s: &DVector<f64>,
    arcs: &[f64],
    with_jacobian: bool,
) -> Result<Vec<RodSection>> {
    let length = grid.length();
    let mut out = Vec::with_capacity(arcs.len());
    let mut seg = 0usize;
    let mut at_boundary = SweepState {
        pose: SE3Pose::identity(),
        jac: Matrix6xX::zeros(basis.dof()),
    };
    let mut prev = f64::NEG_INFINITY;
    for &s in arcs {
        if !(s >= -1e-12 && s <= length + 1e-12) {
            return Err(Error::ArcLengthOutOfRange { s, length });
        }
        if s < prev {
            return Err(Error::InvalidArgument("arc lengths must be sorted".into()));
        }
        prev = s;
        let s = s.clamp(0.0, length);
        while seg < grid.segments() && grid.boundaries[seg + 1] <= s {
            let (a, b) = (grid.boundaries[seg], grid.boundaries[seg + 1]);
            at_boundary = advance(basis, q_s, &at_boundary, a, b - a, with_jacobian)?;
            seg += 1;
        }
        let section = if seg < grid.segments() {
            let a = grid.boundaries[seg];
            advance(basis, q_s, &at_boundary, a, s - a, with_jacobian)?
        } else {
            SweepState {
                pose: at_boundary.pose,
                jac: at_boundary.jac.clone(),
            }
        };
        out.push(RodSection {
            s,
            pose: section.pose,
            jacobian: section.jac,
        });
    }
    Ok(out)
}

/// `g_s^a` for the rod configuration `q_s`.
pub fn rod_fk(
    basis: &StrainBasis,
    grid: &QuadratureGrid,
    q_s: &DVector<f64>,
    s: f64,
) -> Result<SE3Pose> {
    Ok(rod_sweep(basis, grid, q_s, &[s], false)?[0].pose)
}

/// Inertial pose of the section at `s`: `g_b g_a^b g_s^a`.
pub fn section_pose(chain: &Chain, state: &GeneralizedState, s: f64) -> Result<SE3Pose> {
    chain.check_state(state)?;
    let rod = rod_fk(&chain.basis, &chain.grid, &state.strain(), s)?;
    Ok(uav_pose(state) * chain.mounts.attachment * rod)
}

pub fn tip_pose(chain: &Chain, state: &GeneralizedState) -> Result<SE3Pose> {
    section_pose(chain, state, chain.length())
}

/// Tip pose relative to the attachment frame (`g_L^a`).
pub fn tip_in_attachment(chain: &Chain, q_s: &DVector<f64>) -> Result<SE3Pose> {
    rod_fk(&chain.basis, &chain.grid, q_s, chain.length())
}

fn full_section_jacobian(
    chain: &Chain,
    jb: &Matrix6xX<f64>,
    section: &RodSection,
) -> Matrix6xX<f64> {
    let base_to_section = chain.mounts.attachment * section.pose;
    let mut j = adjoint_inv(&base_to_section) * jb;
    if chain.basis.dof() > 0 {
        j.columns_mut(UAV_DOF, chain.basis.dof())
            .copy_from(&section.jacobian);
    }
    j
}

/// Coupled body Jacobian of the section at `s`, expressed in the section frame.
pub fn section_jacobian(
    chain: &Chain,
    state: &GeneralizedState,
    s: f64,
) -> Result<Matrix6xX<f64>> {
    chain.check_state(state)?;
    let jb = uav_jacobian(state)?;
    let section = rod_sweep(&chain.basis, &chain.grid, &state.strain(), &[s], true)?;
    Ok(full_section_jacobian(chain, &jb, &section[0]))
}

pub fn tip_jacobian(chain: &Chain, state: &GeneralizedState) -> Result<Matrix6xX<f64>> {
    section_jacobian(chain, state, chain.length())
}

/// Poses and Jacobians of the UAV and of every quadrature node at one state.
#[derive(Clone, Debug)]
pub struct ChainSnapshot {
    pub uav_pose: SE3Pose,
    pub uav_jacobian: Matrix6xX<f64>,
    /// Inertial poses of the quadrature nodes.
    pub node_poses: Vec<SE3Pose>,
    /// Full 6 x n body Jacobians of the quadrature nodes.
    pub node_jacobians: Vec<Matrix6xX<f64>>,
}

impl ChainSnapshot {
    pub fn at(chain: &Chain, state: &GeneralizedState) -> Result<Self> {
        Self::at_arcs(chain, state, &chain.grid.nodes)
    }

    pub fn at_arcs(chain: &Chain, state: &GeneralizedState, arcs: &[f64]) -> Result<Self> {
        chain.check_state(state)?;
        let gb = uav_pose(state);
        let jb = uav_jacobian(state)?;
        let sections = rod_sweep(&chain.basis, &chain.grid, &state.strain(), arcs, true)?;
        let base = gb * chain.mounts.attachment;
        let node_poses = sections.iter().map(|sec| base * sec.pose).collect();
        let node_jacobians = sections
            .iter()
            .map(|sec| full_section_jacobian(chain, &jb, sec))
            .collect();
        Ok(Self {
            uav_pose: gb,
            uav_jacobian: jb,
            node_poses,
            node_jacobians,
        })
    }
}

/// Central-difference step for coordinate `i`.
pub fn fd_step(q_i: f64) -> f64 {
    1e-6 * q_i.abs().max(1.0)
}

/// Time derivatives of the UAV Jacobian and of the node Jacobians at `arcs`,
/// `sum_i dJ/dq_i qdot_i` by central differences in each coordinate.
pub fn jacobian_rates(
    chain: &Chain,
    state: &GeneralizedState,
    arcs: &[f64],
) -> Result<(Matrix6xX<f64>, Vec<Matrix6xX<f64>>)> {
    chain.check_state(state)?;
    let n = state.dof();
    let mut jb_dot = Matrix6xX::zeros(n);
    let mut nodes_dot = vec![Matrix6xX::zeros(n); arcs.len()];
    for i in 0..n {
        let rate = state.qdot[i];
        if rate == 0.0 {
            continue;
        }
        let h = fd_step(state.q[i]);
        let mut plus = state.clone();
        plus.q[i] += h;
        let mut minus = state.clone();
        minus.q[i] -= h;
        let sp = ChainSnapshot::at_arcs(chain, &plus, arcs)?;
        let sm = ChainSnapshot::at_arcs(chain, &minus, arcs)?;
        let scale = rate / (2.0 * h);
        jb_dot += (&sp.uav_jacobian - &sm.uav_jacobian) * scale;
        for (acc, (a, b)) in nodes_dot
            .iter_mut()
            .zip(sp.node_jacobians.iter().zip(sm.node_jacobians.iter()))
        {
            *acc += (a - b) * scale;
        }
    }
    Ok((jb_dot, nodes_dot))
}

/// `dJ_s^s/dt` at a single arc length.
pub fn jacobian_time_derivative(
    chain: &Chain,
    state: &GeneralizedState,
    s: f64,
) -> Result<Matrix6xX<f64>> {
    Ok(jacobian_rates(chain, state, &[s])?.1.remove(0))
}

/// Body twist of a section, `J_s^s qdot`.
pub fn section_twist(j: &Matrix6xX<f64>, qdot: &DVector<f64>) -> Twist {
    let v: nalgebra::Vector6<f64> = (j * qdot).fixed_rows::<6>(0).into_owned();
    Twist::from_vector(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{rot_x, rot_z};
    use crate::rod::BasisKind;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Vector6};

    fn chain(kind: BasisKind, segments: usize) -> Chain {
        let mounts = MountTransforms {
            attachment: SE3Pose::new(rot_z(-0.4) * rot_x(std::f64::consts::PI), Vector3::new(0.01, 0.02, -0.05)),
            ..Default::default()
        };
        Chain::new(StrainBasis::new(kind, 1.0), segments, mounts).unwrap()
    }

    /// Body twist of `pose(q)` under a perturbation of coordinate `i`.
    pub(crate) fn fd_body_column(
        f: &dyn Fn(&DVector<f64>) -> SE3Pose,
        q: &DVector<f64>,
        i: usize,
    ) -> Vector6<f64> {
        let h = 1e-6;
        let mut qp = q.clone();
        qp[i] += h;
        let mut qm = q.clone();
        qm[i] -= h;
        let g = f(q).inverse().to_matrix();
        let x: Matrix4<f64> = g * (f(&qp).to_matrix() - f(&qm).to_matrix()) / (2.0 * h);
        let w = 0.5 * (x - x.transpose());
        Vector6::new(w[(2, 1)], w[(0, 2)], w[(1, 0)], x[(0, 3)], x[(1, 3)], x[(2, 3)])
    }

    #[test]
    fn grid_weights_sum_to_length() {
        let g = QuadratureGrid::uniform(1.0, 20).unwrap();
        assert_relative_eq!(g.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(QuadratureGrid::uniform(1.0, 0).is_err());
    }

    #[test]
    fn uav_pose_cases() {
        let s = GeneralizedState::zeros(8);
        assert_eq!(uav_pose(&s), SE3Pose::identity());
        let s = GeneralizedState::from_parts(
            Vector3::new(0.0, 0.0, std::f64::consts::PI / 18.0),
            Vector3::new(-0.5, 0.5, 5.0),
            &[0.3, 0.4],
        );
        let g = uav_pose(&s);
        assert_eq!(g.translation, Vector3::new(-0.5, 0.5, 5.0));
        assert_relative_eq!(g.rotation, rot_z(std::f64::consts::PI / 18.0));
    }

    #[test]
    fn uav_jacobian_cases() {
        let j = uav_jacobian(&GeneralizedState::zeros(8)).unwrap();
        let mut expected = Matrix6xX::zeros(8);
        expected.fixed_view_mut::<6, 6>(0, 0).fill_with_identity();
        assert_eq!(j, expected);

        let s = GeneralizedState::from_parts(Vector3::new(0.2, -0.3, 1.1), Vector3::new(1.0, 2.0, 3.0), &[0.3, 0.4]);
        let j = uav_jacobian(&s).unwrap();
        assert_eq!(j.columns(6, 2).norm(), 0.0);
        let f = |q: &DVector<f64>| uav_pose(&GeneralizedState::at_rest(q.clone()));
        for i in 0..6 {
            let fd = fd_body_column(&f, &s.q, i);
            assert!((fd - j.column(i)).norm() < 1e-6);
        }
        let mut locked = s.clone();
        locked.q[1] = std::f64::consts::FRAC_PI_2;
        assert!(matches!(uav_jacobian(&locked), Err(Error::GimbalLock { .. })));
    }

    #[test]
    fn straight_rod_tip() {
        let c = chain(BasisKind::ConstantBending, 20);
        let g = rod_fk(&c.basis, &c.grid, &DVector::zeros(2), 1.0).unwrap();
        assert_relative_eq!(g.translation, Vector3::z(), epsilon = 1e-14);
        assert_relative_eq!(g.rotation, nalgebra::Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn constant_curvature_arc() {
        let c = chain(BasisKind::ConstantBending, 20);
        for k in [0.1, 0.3, 1.0] {
            let g = rod_fk(&c.basis, &c.grid, &DVector::from_vec(vec![k, 0.0]), 1.0).unwrap();
            // Rotation about local x bends the backbone in the y-z plane.
            let expected = Vector3::new(0.0, -(1.0 - k.cos()) / k, k.sin() / k);
            assert!((g.translation - expected).norm() < 1e-6);
            assert_relative_eq!(g.rotation, rot_x(k), epsilon = 1e-12);
        }
    }

    #[test]
    fn arc_length_out_of_range() {
        let c = chain(BasisKind::ConstantBending, 20);
        assert!(matches!(
            rod_fk(&c.basis, &c.grid, &DVector::zeros(2), 1.1),
            Err(Error::ArcLengthOutOfRange { .. })
        ));
        assert!(rod_fk(&c.basis, &c.grid, &DVector::zeros(2), -0.1).is_err());
    }

    #[test]
    fn section_pose_at_base() {
        let mut c = chain(BasisKind::ConstantBending, 20);
        let s = GeneralizedState::from_parts(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, -1.0, 2.0), &[0.4, -0.2]);
        let g = section_pose(&c, &s, 0.0).unwrap();
        assert_relative_eq!(g.to_matrix(), (uav_pose(&s) * c.mounts.attachment).to_matrix(), epsilon = 1e-14);
        c.mounts.attachment = SE3Pose::identity();
        let z = GeneralizedState::zeros(8);
        assert_eq!(section_pose(&c, &z, 0.0).unwrap(), SE3Pose::identity());
    }

    #[test]
    fn jacobian_at_base_is_uav_jacobian() {
        let mut c = chain(BasisKind::ConstantBending, 20);
        c.mounts.attachment = SE3Pose::identity();
        let s = GeneralizedState::from_parts(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, -1.0, 2.0), &[0.4, -0.2]);
        let j = section_jacobian(&c, &s, 0.0).unwrap();
        let jb = uav_jacobian(&s).unwrap();
        assert_relative_eq!(j, jb, epsilon = 1e-14);
        assert_eq!(j.columns(6, 2).norm(), 0.0);
    }

    #[test]
    fn linear_basis_columns_are_causal() {
        // The coefficient of s/L has no effect before it accumulates, and the
        // rod block is zero at s = 0.
        let c = chain(BasisKind::LinearBending, 20);
        let s = GeneralizedState::from_parts(Vector3::zeros(), Vector3::zeros(), &[0.3, 0.2, -0.1, 0.5]);
        let j0 = section_jacobian(&c, &s, 0.0).unwrap();
        assert_eq!(j0.columns(6, 4).norm(), 0.0);
    }

    #[test]
    fn section_jacobian_matches_fd_with_partial_segments() {
        for kind in [BasisKind::ConstantBending, BasisKind::LinearBending] {
            let c = chain(kind, 7);
            let strain: Vec<f64> = match kind {
                BasisKind::ConstantBending => vec![0.7, -0.5],
                _ => vec![0.7, -0.5, 0.2, 1.1],
            };
            let st = GeneralizedState::from_parts(Vector3::new(0.2, -0.1, 0.5), Vector3::new(0.3, 0.2, 1.0), &strain);
            for s in [0.0, 0.13, 0.5, 0.71, 1.0] {
                let j = section_jacobian(&c, &st, s).unwrap();
                let f = |q: &DVector<f64>| section_pose(&c, &GeneralizedState::at_rest(q.clone()), s).unwrap();
                for i in 0..st.dof() {
                    let fd = fd_body_column(&f, &st.q, i);
                    let err = (fd - j.column(i)).norm();
                    assert!(err <= 1e-7 * fd.norm().max(1.0), "kind {kind:?} s {s} col {i}: {err}");
                }
            }
        }
    }

    #[test]
    fn jacobian_rate_cases() {
        let c = chain(BasisKind::ConstantBending, 20);
        let mut st = GeneralizedState::from_parts(Vector3::new(0.1, 0.05, 0.3), Vector3::new(0.0, 0.0, 3.0), &[0.3, 0.4]);
        let jd = jacobian_time_derivative(&c, &st, 0.6).unwrap();
        assert_eq!(jd.norm(), 0.0);

        st.qdot = DVector::from_vec(vec![0.2, -0.1, 0.3, 0.5, 0.1, -0.2, 0.4, -0.6]);
        let jd = jacobian_time_derivative(&c, &st, 0.6).unwrap();
        let dt = 1e-5;
        let mut a = st.clone();
        a.q += &st.qdot * (0.5 * dt);
        let mut b = st.clone();
        b.q -= &st.qdot * (0.5 * dt);
        let alt = (section_jacobian(&c, &a, 0.6).unwrap() - section_jacobian(&c, &b, 0.6).unwrap()) / dt;
        assert!((jd.clone() - alt).norm() < 1e-6 * jd.norm().max(1.0));

        let mut doubled = st.clone();
        doubled.qdot *= 2.0;
        let jd2 = jacobian_time_derivative(&c, &doubled, 0.6).unwrap();
        assert_relative_eq!(jd2, jd * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_is_continuous_in_arc_length() {
        let c = chain(BasisKind::ConstantBending, 20);
        let q = DVector::from_vec(vec![0.8, -0.6]);
        let xi = c.basis.strain_field(&q, 0.0).unwrap();
        let arcs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let poses = rod_sweep(&c.basis, &c.grid, &q, &arcs, false).unwrap();
        for w in poses.windows(2) {
            let rel = w[0].pose.inverse() * w[1].pose;
            let angle = ((rel.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            let dist = (angle * angle + rel.translation.norm_squared()).sqrt();
            let bound = xi.to_vector().norm() * 0.01 * 1.01;
            assert!(dist <= bound + 1e-12, "{dist} > {bound}");
        }
    }
}
