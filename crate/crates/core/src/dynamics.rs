//! Coupled UAV + rod equations of motion
//! `M(q) qdd + (C + D) qd + K = B(q) tau + tau_ext(q)` and their integration.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6xX, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{jacobian_rates, section_twist, Chain, ChainSnapshot, GeneralizedState, UAV_DOF};
use crate::liegroup::{coadjoint, euler_rate_map};
use crate::rod::{tendon_routing, RodProperties, SectionDensities};

/// Condition number above which the mass matrix is treated as singular.
pub const MAX_MASS_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavInertia {
    pub mass: f64,
    pub moments: [f64; 3],
}

impl Default for UavInertia {
    fn default() -> Self {
        Self {
            mass: 0.7331,
            moments: [2.4388e-2, 2.6151e-2, 2.6929e-2],
        }
    }
}

impl UavInertia {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::Validation {
                field: "uav.mass".into(),
                message: format!("must be finite and > 0 (got {})", self.mass),
            });
        }
        for (i, m) in self.moments.iter().enumerate() {
            if !(m.is_finite() && *m > 0.0) {
                return Err(Error::Validation {
                    field: format!("uav.moments[{i}]"),
                    message: format!("must be finite and > 0 (got {m})"),
                });
            }
        }
        Ok(())
    }

    /// `M_b = diag(I1, I2, I3, m, m, m)`.
    pub fn matrix(&self) -> Matrix6<f64> {
        let [a, b, c] = self.moments;
        let m = self.mass;
        Matrix6::from_diagonal(&Vector6::new(a, b, c, m, m, m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixerParams {
    /// Motor arm length, m.
    pub arm: f64,
    /// Yaw drag factor.
    pub drag: f64,
    pub gravity: f64,
}

impl Default for MixerParams {
    fn default() -> Self {
        Self {
            arm: 0.23,
            drag: 0.016,
            gravity: 9.81,
        }
    }
}

impl MixerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("arm", self.arm), ("drag", self.drag)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation {
                    field: format!("mixer.{name}"),
                    message: format!("must be finite and > 0 (got {v})"),
                });
            }
        }
        if !(self.gravity.is_finite() && self.gravity >= 0.0) {
            return Err(Error::Validation {
                field: "mixer.gravity".into(),
                message: format!("must be finite and >= 0 (got {})", self.gravity),
            });
        }
        Ok(())
    }

    /// The 6 x 4 map from rotor thrusts to the body wrench.
    pub fn gamma(&self) -> Matrix6xX<f64> {
        let (r, k) = (self.arm, self.drag);
        Matrix6xX::from_row_slice(&[
            0.0, r, 0.0, -r, //
            -r, 0.0, r, 0.0, //
            k, -k, k, -k, //
            0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 1.0, 1.0, 1.0,
        ])
    }
}

/// Rotor thrusts (N) and tendon tensions (N).
#[derive(Clone, Debug, PartialEq)]
pub struct ActuatorInput {
    pub rotors: nalgebra::Vector4<f64>,
    pub tendons: DVector<f64>,
}

impl ActuatorInput {
    pub fn zeros(tendons: usize) -> Self {
        Self {
            rotors: nalgebra::Vector4::zeros(),
            tendons: DVector::zeros(tendons),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(4 + self.tendons.len());
        v.rows_mut(0, 4).copy_from(&self.rotors);
        v.rows_mut(4, self.tendons.len()).copy_from(&self.tendons);
        v
    }
}

/// Optional wrenches replacing the default gravity loads.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalWrenches {
    /// Point wrench at the UAV CoM, body frame.
    pub uav: Vector6<f64>,
    /// Distributed wrench density per quadrature node, section frame.
    pub rod: Vec<Vector6<f64>>,
}

#[derive(Clone, Debug)]
pub struct DynamicsMatrices {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DVector<f64>,
    pub actuation: DMatrix<f64>,
    pub external: DVector<f64>,
}

impl DynamicsMatrices {
    pub fn dof(&self) -> usize {
        self.stiffness.len()
    }

    /// `tau_a + tau_ext - (C + D) qd - K`.
    pub fn residual_force(&self, qdot: &DVector<f64>, tau_a: &DVector<f64>) -> DVector<f64> {
        tau_a + &self.external - (&self.coriolis + &self.damping) * qdot - &self.stiffness
    }

    /// Accelerations for generalized actuation `tau_a`.
    pub fn acceleration(&self, qdot: &DVector<f64>, tau_a: &DVector<f64>) -> Result<DVector<f64>> {
        solve_spd(&self.mass, self.residual_force(qdot, tau_a))
    }

    /// Accelerations with the `locked` coordinates held at zero acceleration.
    pub fn acceleration_locked(
        &self,
        qdot: &DVector<f64>,
        tau_a: &DVector<f64>,
        locked: &[bool],
    ) -> Result<DVector<f64>> {
        let n = self.dof();
        if locked.len() != n {
            return Err(Error::Dimension(format!(
                "lock mask has length {}, expected {n}",
                locked.len()
            )));
        }
        let free: Vec<usize> = (0..n).filter(|&i| !locked[i]).collect();
        let rhs = self.residual_force(qdot, tau_a);
        let mut qdd = DVector::zeros(n);
        if free.is_empty() {
            return Ok(qdd);
        }
        let m = self.mass.select_rows(&free).select_columns(&free);
        let sol = solve_spd(&m, rhs.select_rows(&free))?;
        for (k, &i) in free.iter().enumerate() {
            qdd[i] = sol[k];
        }
        Ok(qdd)
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 0.0) || hi / lo > MAX_MASS_CONDITION {
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::SingularMass { condition });
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::SingularMass { condition: hi / lo })?;
    Ok(chol.solve(&rhs))
}

/// Everything needed to assemble the equations of motion.
#[derive(Clone, Debug)]
pub struct Model {
    pub chain: Chain,
    pub uav: UavInertia,
    pub rod: RodProperties,
    pub densities: SectionDensities,
    pub mixer: MixerParams,
    /// `B_a`, 6 x n_a.
    pub routing: Matrix6xX<f64>,
}

impl Model {
    pub fn new(chain: Chain, uav: UavInertia, rod: RodProperties, mixer: MixerParams) -> Result<Self> {
        uav.validate()?;
        rod.validate()?;
        mixer.validate()?;
        if (chain.length() - rod.length).abs() > 1e-12 * rod.length.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "chain length {} differs from rod length {}",
                chain.length(),
                rod.length
            )));
        }
        Ok(Self {
            densities: SectionDensities::from_properties(&rod),
            routing: tendon_routing(&rod),
            chain,
            uav,
            rod,
            mixer,
        })
    }

    /// Same model with the rod's inertia, stiffness, damping and weight removed.
    pub fn without_rod_terms(&self) -> Self {
        let mut m = self.clone();
        m.densities = SectionDensities {
            inertia: Matrix6::zeros(),
            stiffness: Matrix6::zeros(),
            damping: Matrix6::zeros(),
        };
        m
    }

    pub fn dof(&self) -> usize {
        self.chain.dof()
    }

    pub fn tendon_count(&self) -> usize {
        self.routing.ncols()
    }

    fn line_weight(&self) -> f64 {
        // rho A is the translational entry of the inertia density
        self.densities.inertia[(3, 3)] * self.mixer.gravity
    }

    fn strain_matrices(&self) -> Result<Vec<Matrix6xX<f64>>> {
        self.chain
            .grid
            .nodes
            .iter()
            .map(|&s| self.chain.basis.matrix(s))
            .collect()
    }

    /// Assembles every term of the equations of motion at `state`.
    pub fn assemble(&self, state: &GeneralizedState) -> Result<DynamicsMatrices> {
        let snap = ChainSnapshot::at(&self.chain, state)?;
        let rates = jacobian_rates(&self.chain, state, &self.chain.grid.nodes)?;
        Ok(DynamicsMatrices {
            mass: self.mass_from(&snap),
            coriolis: self.coriolis_from(&snap, &rates, &state.qdot),
            damping: damping_matrix(self)?,
            stiffness: stiffness_vector(state, self)?,
            actuation: self.actuation_from(state)?,
            external: self.external_from(&snap, None)?,
        })
    }

    fn mass_from(&self, snap: &ChainSnapshot) -> DMatrix<f64> {
        let mb = self.uav.matrix();
        let jb = &snap.uav_jacobian;
        let mut m: DMatrix<f64> = DMatrix::from(jb.transpose() * mb * jb);
        let ms = &self.densities.inertia;
        for (j, w) in snap.node_jacobians.iter().zip(&self.chain.grid.weights) {
            m += DMatrix::from(j.transpose() * ms * j) * *w;
        }
        (&m + m.transpose()) * 0.5
    }

    fn coriolis_from(
        &self,
        snap: &ChainSnapshot,
        rates: &(Matrix6xX<f64>, Vec<Matrix6xX<f64>>),
        qdot: &DVector<f64>,
    ) -> DMatrix<f64> {
        // Body momentum balance reads M vdot - ad_v^T M v = W, hence the minus.
        let term = |j: &Matrix6xX<f64>, jdot: &Matrix6xX<f64>, mi: &Matrix6<f64>| {
            let v = section_twist(j, qdot);
            let inner = -coadjoint(&v) * mi * j + mi * jdot;
            DMatrix::from(j.transpose() * inner)
        };
        let mut c = term(&snap.uav_jacobian, &rates.0, &self.uav.matrix());
        let ms = &self.densities.inertia;
        for ((j, jd), w) in snap
            .node_jacobians
            .iter()
            .zip(&rates.1)
            .zip(&self.chain.grid.weights)
        {
            c += term(j, jd, ms) * *w;
        }
        c
    }

    fn actuation_from(&self, state: &GeneralizedState) -> Result<DMatrix<f64>> {
        let n = self.dof();
        let na = self.tendon_count();
        let e = state.euler();
        let t = euler_rate_map(e.x, e.y)?;
        let r = crate::liegroup::euler_zyx_rotation(e.x, e.y, e.z);
        let gamma = self.mixer.gamma();
        let mut b = DMatrix::zeros(n, 4 + na);
        let top: Matrix3<f64> = t.transpose();
        let rows_ang = top * gamma.fixed_rows::<3>(0);
        let rows_lin = r * gamma.fixed_rows::<3>(3);
        b.view_mut((0, 0), (3, 4)).copy_from(&rows_ang);
        b.view_mut((3, 0), (3, 4)).copy_from(&rows_lin);
        let ns = n - UAV_DOF;
        if ns > 0 {
            let mut bs = DMatrix::zeros(ns, na);
            for (bq, w) in self.strain_matrices()?.iter().zip(&self.chain.grid.weights) {
                bs += DMatrix::from(bq.transpose() * &self.routing) * *w;
            }
            b.view_mut((UAV_DOF, 4), (ns, na)).copy_from(&bs);
        }
        Ok(b)
    }

    fn external_from(
        &self,
        snap: &ChainSnapshot,
        wrenches: Option<&ExternalWrenches>,
    ) -> Result<DVector<f64>> {
        let gravity = Vector3::new(0.0, 0.0, -1.0);
        let jb = &snap.uav_jacobian;
        let uav_w = match wrenches {
            Some(w) => w.uav,
            None => {
                let f = snap.uav_pose.rotation.transpose() * gravity * (self.uav.mass * self.mixer.gravity);
                Vector6::new(0.0, 0.0, 0.0, f.x, f.y, f.z)
            }
        };
        let mut tau: DVector<f64> = jb.transpose() * uav_w;
        if let Some(w) = wrenches {
            if w.rod.len() != snap.node_jacobians.len() {
                return Err(Error::Dimension(format!(
                    "{} rod wrench densities for {} quadrature nodes",
                    w.rod.len(),
                    snap.node_jacobians.len()
                )));
            }
        }
        let weight = self.line_weight();
        for (k, (j, w)) in snap
            .node_jacobians
            .iter()
            .zip(&self.chain.grid.weights)
            .enumerate()
        {
            let density = match wrenches {
                Some(ws) => ws.rod[k],
                None => {
                    let f = snap.node_poses[k].rotation.transpose() * gravity * weight;
                    Vector6::new(0.0, 0.0, 0.0, f.x, f.y, f.z)
                }
            };
            tau += j.transpose() * density * *w;
        }
        Ok(tau)
    }
}

pub fn mass_matrix(state: &GeneralizedState, model: &Model) -> Result<DMatrix<f64>> {
    Ok(model.mass_from(&ChainSnapshot::at(&model.chain, state)?))
}

pub fn coriolis_matrix(state: &GeneralizedState, model: &Model) -> Result<DMatrix<f64>> {
    let snap = ChainSnapshot::at(&model.chain, state)?;
    let rates = jacobian_rates(&model.chain, state, &model.chain.grid.nodes)?;
    Ok(model.coriolis_from(&snap, &rates, &state.qdot))
}

/// Elastic generalized force; zero on the UAV coordinates.
pub fn stiffness_vector(state: &GeneralizedState, model: &Model) -> Result<DVector<f64>> {
    let n = model.dof();
    if state.dof() != n {
        return Err(Error::Dimension(format!(
            "state has {} coordinates, model expects {n}",
            state.dof()
        )));
    }
    let mut k = DVector::zeros(n);
    let ns = n - UAV_DOF;
    if ns == 0 {
        return Ok(k);
    }
    let q_s = state.strain();
    let h = &model.densities.stiffness;
    let mut ks = DVector::zeros(ns);
    for (bq, w) in model.strain_matrices()?.iter().zip(&model.chain.grid.weights) {
        let dev = bq * &q_s;
        ks += bq.transpose() * (h * dev) * *w;
    }
    k.rows_mut(UAV_DOF, ns).copy_from(&ks);
    Ok(k)
}

pub fn damping_matrix(model: &Model) -> Result<DMatrix<f64>> {
    let n = model.dof();
    let ns = n - UAV_DOF;
    let mut d = DMatrix::zeros(n, n);
    if ns == 0 {
        return Ok(d);
    }
    let dd = &model.densities.damping;
    let mut ds = DMatrix::zeros(ns, ns);
    for (bq, w) in model.strain_matrices()?.iter().zip(&model.chain.grid.weights) {
        ds += DMatrix::from(bq.transpose() * dd * bq) * *w;
    }
    d.view_mut((UAV_DOF, UAV_DOF), (ns, ns)).copy_from(&ds);
    Ok(d)
}

/// `B(q)`, n x (4 + n_a).
pub fn actuation_matrix(state: &GeneralizedState, model: &Model) -> Result<DMatrix<f64>> {
    model.actuation_from(state)
}

/// Generalized external force; gravity when `wrenches` is `None`.
pub fn external_forces(
    state: &GeneralizedState,
    model: &Model,
    wrenches: Option<&ExternalWrenches>,
) -> Result<DVector<f64>> {
    let snap = ChainSnapshot::at(&model.chain, state)?;
    model.external_from(&snap, wrenches)
}

fn check_input(model: &Model, input: &ActuatorInput) -> Result<()> {
    if input.tendons.len() != model.tendon_count() {
        return Err(Error::Dimension(format!(
            "{} tendon tensions for {} tendons",
            input.tendons.len(),
            model.tendon_count()
        )));
    }
    Ok(())
}

pub fn forward_dynamics(
    state: &GeneralizedState,
    model: &Model,
    input: &ActuatorInput,
) -> Result<DVector<f64>> {
    check_input(model, input)?;
    let mats = model.assemble(state)?;
    let tau_a = &mats.actuation * input.to_vector();
    mats.acceleration(&state.qdot, &tau_a)
}

/// What is held constant over one integration step.
#[derive(Clone, Debug)]
pub enum Forcing<'a> {
    /// Actuator inputs; `B(q)` is re-evaluated at every stage.
    Actuators(&'a ActuatorInput),
    /// Generalized forces applied directly.
    Generalized(&'a DVector<f64>),
}

fn derivative(
    model: &Model,
    state: &GeneralizedState,
    forcing: &Forcing,
    locked: Option<&[bool]>,
) -> Result<DVector<f64>> {
    let mats = model.assemble(state)?;
    let tau_a = match forcing {
        Forcing::Actuators(u) => &mats.actuation * u.to_vector(),
        Forcing::Generalized(t) => (*t).clone(),
    };
    match locked {
        Some(mask) => mats.acceleration_locked(&state.qdot, &tau_a, mask),
        None => mats.acceleration(&state.qdot, &tau_a),
    }
}

fn rk4(
    model: &Model,
    state: &GeneralizedState,
    forcing: Forcing,
    dt: f64,
    locked: Option<&[bool]>,
) -> Result<GeneralizedState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be > 0 (got {dt})")));
    }
    if let Forcing::Actuators(u) = &forcing {
        check_input(model, u)?;
    }
    if let Forcing::Generalized(t) = &forcing {
        if t.len() != model.dof() {
            return Err(Error::Dimension(format!(
                "generalized force has length {}, expected {}",
                t.len(),
                model.dof()
            )));
        }
    }
    let mut start = state.clone();
    if let Some(mask) = locked {
        for (i, &l) in mask.iter().enumerate() {
            if l && i < start.qdot.len() {
                start.qdot[i] = 0.0;
            }
        }
    }
    let shifted = |dq: &DVector<f64>, dv: &DVector<f64>, h: f64| GeneralizedState {
        q: &start.q + dq * h,
        qdot: &start.qdot + dv * h,
    };
    let a1 = derivative(model, &start, &forcing, locked)?;
    let v1 = start.qdot.clone();
    let s2 = shifted(&v1, &a1, 0.5 * dt);
    let a2 = derivative(model, &s2, &forcing, locked)?;
    let v2 = s2.qdot.clone();
    let s3 = shifted(&v2, &a2, 0.5 * dt);
    let a3 = derivative(model, &s3, &forcing, locked)?;
    let v3 = s3.qdot.clone();
    let s4 = shifted(&v3, &a3, dt);
    let a4 = derivative(model, &s4, &forcing, locked)?;
    let v4 = s4.qdot.clone();
    let q = &start.q + (v1 + &v2 * 2.0 + &v3 * 2.0 + v4) * (dt / 6.0);
    let qdot = &start.qdot + (a1 + &a2 * 2.0 + &a3 * 2.0 + a4) * (dt / 6.0);
    let next = GeneralizedState { q, qdot };
    if !next.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(next)
}

/// One classical RK4 step with the actuator input held constant.
pub fn step(
    state: &GeneralizedState,
    model: &Model,
    input: &ActuatorInput,
    dt: f64,
) -> Result<GeneralizedState> {
    rk4(model, state, Forcing::Actuators(input), dt, None)
}

/// RK4 step with a general forcing and an optional mask of coordinates held
/// fixed (zero velocity and acceleration).
pub fn step_with(
    state: &GeneralizedState,
    model: &Model,
    forcing: Forcing,
    dt: f64,
    locked: Option<&[bool]>,
) -> Result<GeneralizedState> {
    if let Some(mask) = locked {
        if mask.len() != model.dof() {
            return Err(Error::Dimension(format!(
                "lock mask has length {}, expected {}",
                mask.len(),
                model.dof()
            )));
        }
    }
    rk4(model, state, forcing, dt, locked)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub elastic: f64,
    pub gravitational: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic + self.gravitational
    }
}

/// Kinetic, elastic and gravitational energy; the potentials are exact
/// antiderivatives of the stiffness and default gravity forces.
pub fn energy(state: &GeneralizedState, model: &Model) -> Result<Energy> {
    let snap = ChainSnapshot::at(&model.chain, state)?;
    let m = model.mass_from(&snap);
    let kinetic = 0.5 * state.qdot.dot(&(&m * &state.qdot));
    let mut elastic = 0.0;
    if model.dof() > UAV_DOF {
        let q_s = state.strain();
        for (bq, w) in model.strain_matrices()?.iter().zip(&model.chain.grid.weights) {
            let dev = bq * &q_s;
            elastic += 0.5 * w * dev.dot(&(model.densities.stiffness * &dev));
        }
    }
    let g = model.mixer.gravity;
    let mut gravitational = model.uav.mass * g * snap.uav_pose.translation.z;
    let weight = model.line_weight();
    for (pose, w) in snap.node_poses.iter().zip(&model.chain.grid.weights) {
        gravitational += weight * w * pose.translation.z;
    }
    Ok(Energy {
        kinetic,
        elastic,
        gravitational,
    })
}
