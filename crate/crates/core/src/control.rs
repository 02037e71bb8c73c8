//! Adaptive sliding-variable controller, attitude references for the
//! underactuated UAV, actuator allocation and Lyapunov diagnostics.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ActuatorInput, DynamicsMatrices, MixerParams};
use crate::error::{Error, Result};
use crate::kinematics::{GeneralizedState, UAV_DOF};
use crate::liegroup::{euler_rate_map, euler_zyx_rotation};

/// Diagonal gain matrices (stored as their diagonals) plus the servo gain.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerGains {
    pub beta: DVector<f64>,
    pub a_d: DVector<f64>,
    pub a_p: DVector<f64>,
    pub a_a: DVector<f64>,
    pub lambda: f64,
    pub epsilon: f64,
}

impl ControllerGains {
    pub fn new(
        beta: DVector<f64>,
        a_d: DVector<f64>,
        a_p: DVector<f64>,
        a_a: DVector<f64>,
        lambda: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let n = beta.len();
        for (name, v) in [("a_d", &a_d), ("a_p", &a_p), ("a_a", &a_a)] {
            if v.len() != n {
                return Err(Error::InvalidGains(format!("{name} has length {}, beta has {n}", v.len())));
            }
        }
        for (name, v) in [("beta", &beta), ("a_d", &a_d), ("a_p", &a_p), ("a_a", &a_a)] {
            if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::InvalidGains(format!("{name}[{i}] = {x} must be positive")));
            }
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidGains(format!("epsilon = {epsilon} must lie in (0, 1)")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidGains(format!("lambda = {lambda} must be positive")));
        }
        for i in 0..n {
            let bound = a_d[i] * beta[i] / (2.0 * epsilon);
            if !(a_p[i] > bound) {
                return Err(Error::InvalidGains(format!(
                    "a_p[{i}] = {} must exceed a_d*beta/(2 epsilon) = {bound}",
                    a_p[i]
                )));
            }
        }
        Ok(Self {
            beta,
            a_d,
            a_p,
            a_a,
            lambda,
            epsilon,
        })
    }

    /// Same scalar gain on every coordinate.
    pub fn uniform(n: usize, beta: f64, a_d: f64, a_p: f64, a_a: f64, lambda: f64, epsilon: f64) -> Result<Self> {
        Self::new(
            DVector::repeat(n, beta),
            DVector::repeat(n, a_d),
            DVector::repeat(n, a_p),
            DVector::repeat(n, a_a),
            lambda,
            epsilon,
        )
    }

    pub fn dof(&self) -> usize {
        self.beta.len()
    }
}

/// Seeded multiplicative perturbation of the model used by the controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatedModel {
    pub factor: f64,
    pub seed: u64,
}

impl Default for EstimatedModel {
    fn default() -> Self {
        Self { factor: 0.0, seed: 0 }
    }
}

impl EstimatedModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.factor) {
            return Err(Error::Validation {
                field: "perturbation.factor".into(),
                message: format!("must lie in [0, 0.5] (got {})", self.factor),
            });
        }
        Ok(())
    }

    /// Scales for `(M, C, D, K)`, one uniform(-1, 1) draw each.
    pub fn scales(&self) -> [f64; 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = [1.0; 4];
        for s in out.iter_mut() {
            let u: f64 = rng.random_range(-1.0..1.0);
            *s = 1.0 + self.factor * u;
        }
        out
    }
}

/// Controller-side matrices. `static_force` is the estimate of `K - tau_ext`
/// (elastic plus gravity load).
#[derive(Clone, Debug)]
pub struct EstimatedMatrices {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub static_force: DVector<f64>,
}

pub fn perturb_model(nominal: &DynamicsMatrices, model: &EstimatedModel) -> Result<EstimatedMatrices> {
    model.validate()?;
    let [sm, sc, sd, sk] = model.scales();
    let m = &nominal.mass * sm;
    let mass = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(mass.clone()).eigenvalues;
    if !(eig.min() > 0.0) {
        return Err(Error::PerturbationBreaksPD);
    }
    Ok(EstimatedMatrices {
        mass,
        coriolis: &nominal.coriolis * sc,
        damping: &nominal.damping * sd,
        static_force: (&nominal.stiffness - &nominal.external) * sk,
    })
}

/// `qdot_r = qdot_d - beta e`.
pub fn reference_velocity(qdot_d: &DVector<f64>, e: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    qdot_d - beta.component_mul(e)
}

/// `s_q = qdot - qdot_r`.
pub fn sliding_variable(qdot: &DVector<f64>, qdot_r: &DVector<f64>) -> DVector<f64> {
    qdot - qdot_r
}

/// Reference signals for one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct References {
    pub q_d: DVector<f64>,
    pub qdot_d: DVector<f64>,
}

/// Tracking errors, with the angle entries of `e` wrapped.
pub fn tracking_errors(state: &GeneralizedState, refs: &References) -> (DVector<f64>, DVector<f64>) {
    let mut e = &state.q - &refs.q_d;
    for i in 0..3.min(e.len()) {
        e[i] = crate::liegroup::wrap_angle(e[i]);
    }
    (e, &state.qdot - &refs.qdot_d)
}

/// `tau_a = M qdd_r + (C + D) qd_r + K - A_d edot - A_p e + Delta`.
#[allow(clippy::too_many_arguments)]
pub fn control_law(
    est: &EstimatedMatrices,
    qdot_r: &DVector<f64>,
    qddot_r: &DVector<f64>,
    e: &DVector<f64>,
    e_dot: &DVector<f64>,
    gains: &ControllerGains,
    delta_hat: &DVector<f64>,
) -> DVector<f64> {
    &est.mass * qddot_r + (&est.coriolis + &est.damping) * qdot_r + &est.static_force
        - gains.a_d.component_mul(e_dot)
        - gains.a_p.component_mul(e)
        + delta_hat
}

/// Explicit Euler step of `Delta' = -A_a s`, clamped to `|Delta|_inf <= clamp`.
pub fn adaptation_update(
    delta_hat: &DVector<f64>,
    s: &DVector<f64>,
    a_a: &DVector<f64>,
    dt: f64,
    clamp: Option<f64>,
) -> DVector<f64> {
    let mut next = delta_hat - a_a.component_mul(s) * dt;
    if let Some(c) = clamp {
        next.iter_mut().for_each(|x| *x = x.clamp(-c, c));
    }
    next
}

/// `V = 1/2 s^T M s + 1/2 e^T (beta A_d + A_p) e + 1/2 Dt^T A_a^-1 Dt`.
pub fn lyapunov_value(
    s: &DVector<f64>,
    e: &DVector<f64>,
    delta_tilde: &DVector<f64>,
    gains: &ControllerGains,
    mass: &DMatrix<f64>,
) -> f64 {
    let kinetic = 0.5 * s.dot(&(mass * s));
    let weights = gains.beta.component_mul(&gains.a_d) + &gains.a_p;
    let position = 0.5 * e.component_mul(e).dot(&weights);
    let adaptive = 0.5 * delta_tilde.component_mul(delta_tilde).component_div(&gains.a_a).sum();
    kinetic + position + adaptive
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttitudeReference {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub thrust: f64,
}

/// Roll and pitch that point the thrust along the demanded force.
pub fn attitude_references(tau_a: &DVector<f64>, yaw: f64) -> Result<AttitudeReference> {
    if tau_a.len() < UAV_DOF {
        return Err(Error::Dimension(format!("force vector of length {}", tau_a.len())));
    }
    let (t4, t5, t6) = (tau_a[3], tau_a[4], tau_a[5]);
    let f = (t4 * t4 + t5 * t5 + t6 * t6).sqrt();
    if !(f > 1e-6) {
        return Err(Error::DegenerateThrust { force: f });
    }
    let (s, c) = yaw.sin_cos();
    Ok(AttitudeReference {
        pitch: ((t4 * c + t5 * s) / f).atan(),
        roll: ((t4 * s - t5 * c) / f).atan(),
        yaw,
        thrust: f,
    })
}

/// Tension floor and mixer used by `allocate`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocationParams {
    pub mixer: MixerParams,
    pub tendon_floor: f64,
}

fn actuated_rows(mixer: &MixerParams) -> Matrix4<f64> {
    let g = mixer.gamma();
    let mut m = Matrix4::zeros();
    for (r, src) in [0usize, 1, 2, 5].iter().enumerate() {
        for c in 0..4 {
            m[(r, c)] = g[(*src, c)];
        }
    }
    m
}

/// Splits generalized forces into rotor thrusts and tendon tensions.
pub fn allocate(
    tau_a: &DVector<f64>,
    b: &DMatrix<f64>,
    state: &GeneralizedState,
    params: &AllocationParams,
) -> Result<ActuatorInput> {
    let n = tau_a.len();
    if b.nrows() != n || b.ncols() < 4 || n < UAV_DOF {
        return Err(Error::Dimension(format!(
            "actuation map {}x{} for {n} forces",
            b.nrows(),
            b.ncols()
        )));
    }
    let e = state.euler();
    let t = euler_rate_map(e.x, e.y)?;
    let r = euler_zyx_rotation(e.x, e.y, e.z);
    // generalized UAV forces back to the body wrench
    let torque = t
        .transpose()
        .lu()
        .solve(&tau_a.fixed_rows::<3>(0).into_owned())
        .ok_or(Error::InfeasibleAllocation { residual: f64::INFINITY })?;
    let force = r.transpose() * tau_a.fixed_rows::<3>(3);
    let demand = Vector4::new(torque.x, torque.y, torque.z, force.z);
    let gamma = actuated_rows(&params.mixer);
    let rotors = gamma
        .lu()
        .solve(&demand)
        .ok_or(Error::InfeasibleAllocation { residual: f64::INFINITY })?;
    let residual = (gamma * rotors - demand).norm();
    if residual > 1e-6 * tau_a.norm().max(1e-300) {
        return Err(Error::InfeasibleAllocation { residual });
    }
    let rotors = rotors.map(|x| x.max(0.0));

    let na = b.ncols() - 4;
    let ns = n - UAV_DOF;
    let mut tendons = DVector::zeros(na);
    if na > 0 {
        if ns > 0 {
            let bs = b.view((UAV_DOF, 4), (ns, na)).into_owned();
            let rod = tau_a.rows(UAV_DOF, ns).into_owned();
            tendons = crate::servoing::pseudo_inverse(&bs) * &rod;
            let residual = (&bs * &tendons - &rod).norm();
            if residual > 1e-6 * tau_a.norm().max(1e-300) {
                return Err(Error::InfeasibleAllocation { residual });
            }
        }
        co_contract(&mut tendons, params.tendon_floor);
    }
    Ok(ActuatorInput { rotors, tendons })
}

/// Raises antagonistic tendon pairs (`i`, `i + n/2`) by the smallest common
/// amount that keeps both at or above `floor`; odd counts shift all tendons.
fn co_contract(t: &mut DVector<f64>, floor: f64) {
    let n = t.len();
    let lift = |v: &[f64]| (floor - v.iter().cloned().fold(f64::INFINITY, f64::min)).max(0.0);
    if n % 2 == 0 {
        for i in 0..n / 2 {
            let j = i + n / 2;
            let c = lift(&[t[i], t[j]]);
            t[i] += c;
            t[j] += c;
        }
    } else {
        let c = lift(t.as_slice());
        t.add_scalar_mut(c);
    }
}

/// Controller memory carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveState {
    pub delta_hat: DVector<f64>,
    pub e: DVector<f64>,
    pub s: DVector<f64>,
    pub lyapunov: f64,
    pub qdot_r: Option<DVector<f64>>,
    pub qddot_r: DVector<f64>,
}

impl AdaptiveState {
    pub fn new(n: usize) -> Self {
        Self {
            delta_hat: DVector::zeros(n),
            e: DVector::zeros(n),
            s: DVector::zeros(n),
            lyapunov: 0.0,
            qdot_r: None,
            qddot_r: DVector::zeros(n),
        }
    }
}

/// Output of one controller evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    pub tau_a: DVector<f64>,
    pub e: DVector<f64>,
    pub s: DVector<f64>,
    pub qdot_r: DVector<f64>,
    pub qddot_r: DVector<f64>,
}

/// Evaluates the law at the current state; `memory.qdot_r` supplies the
/// backward difference for `qddot_r` (zero on the first call).
///
/// Coordinates listed in `passive` have no direct actuation; the Coriolis
/// feedforward uses their measured rate instead of the reference rate.
pub fn evaluate(
    state: &GeneralizedState,
    refs: &References,
    est: &EstimatedMatrices,
    gains: &ControllerGains,
    memory: &AdaptiveState,
    dt: f64,
    passive: &[usize],
) -> ControlOutput {
    let (e, e_dot) = tracking_errors(state, refs);
    let qdot_r = reference_velocity(&refs.qdot_d, &e, &gains.beta);
    let qddot_r = match &memory.qdot_r {
        Some(prev) => (&qdot_r - prev) / dt,
        None => DVector::zeros(qdot_r.len()),
    };
    let s = sliding_variable(&state.qdot, &qdot_r);
    let mut tau_a = control_law(est, &qdot_r, &qddot_r, &e, &e_dot, gains, &memory.delta_hat);
    if !passive.is_empty() {
        let mut shift = DVector::zeros(qdot_r.len());
        for &i in passive {
            shift[i] = state.qdot[i] - qdot_r[i];
        }
        tau_a += &est.coriolis * shift;
    }
    ControlOutput {
        tau_a,
        e,
        s,
        qdot_r,
        qddot_r,
    }
}

/// Commits a step: stores `qdot_r`, errors and the adapted estimate.
pub fn commit(memory: &mut AdaptiveState, out: &ControlOutput, gains: &ControllerGains, dt: f64, clamp: Option<f64>) {
    memory.delta_hat = adaptation_update(&memory.delta_hat, &out.s, &gains.a_a, dt, clamp);
    memory.qdot_r = Some(out.qdot_r.clone());
    memory.qddot_r = out.qddot_r.clone();
    memory.e = out.e.clone();
    memory.s = out.s.clone();
}
