//! Scenario files, world construction and the closed-loop runner.

mod config;
mod runlog;

pub use config::*;
pub use runlog::*;

use nalgebra::{DVector, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{
    allocate, attitude_references, commit, evaluate, lyapunov_value, perturb_model, AdaptiveState,
    AllocationParams, ControllerGains, References,
};
use crate::dynamics::{step, Model};
use crate::error::{Error, Result};
use crate::kinematics::{Chain, GeneralizedState, UAV_DOF};
use crate::rod::StrainBasis;
use crate::servoing::{
    camera_twist_to_qdot_on, commanded_coordinates, ibvs_twist, plan_cubic, recovery_duration, recovery_target, saturate_twist,
    CubicTrajectory, ServoMode, Supervisor,
};
use crate::vision::{
    advanced_features, compensate, feature_error, feature_jacobian, global_camera_pose, local_camera_pose,
    normalized_rmse, observe, project, virtual_camera_pose, virtual_camera_rotation, CameraIntrinsics,
    FeatureVector, FiducialTarget, TargetView, INTERACTION_STEP,
};

/// Everything the simulation needs besides the controller state.
#[derive(Clone, Debug)]
pub struct World {
    pub model: Model,
    pub local: CameraIntrinsics,
    pub global: CameraIntrinsics,
    pub target: FiducialTarget,
}

impl World {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let basis = StrainBasis::new(cfg.basis_kind()?, cfg.rod.length);
        let chain = Chain::new(basis, cfg.simulation.segments, cfg.mounts.transforms())?;
        let model = Model::new(chain, cfg.uav, cfg.rod.clone(), cfg.mixer)?;
        Ok(Self {
            model,
            local: cfg.camera.local,
            global: cfg.camera.global,
            target: FiducialTarget::on_ground(Vector3::from(cfg.target.center), cfg.target.side),
        })
    }

    pub fn chain(&self) -> &Chain {
        &self.model.chain
    }
}

/// Compensated local-camera features of the marker, if all corners project.
fn view_features(world: &World, state: &GeneralizedState, view: &TargetView) -> Result<Option<FeatureVector>> {
    let Some(points) = view.normalized() else {
        return Ok(None);
    };
    let rot = virtual_camera_rotation(world.chain(), state)?;
    match compensate(&points, &rot).and_then(|p| advanced_features(&p)) {
        Ok(f) => Ok(Some(f)),
        Err(Error::DegenerateProjection { .. } | Error::DegenerateQuad) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Desired features: explicit values, or those seen from the reference
/// snapshot configuration.
pub fn desired_features(cfg: &ScenarioConfig, world: &World) -> Result<FeatureVector> {
    if let Some(f) = cfg.reference.features {
        return Ok(FeatureVector(Vector6::from(f)));
    }
    let st = cfg.reference.state();
    let pose = local_camera_pose(world.chain(), &st)?;
    let view = observe(&pose, &world.local, &world.target)?;
    if !view.all_visible() {
        return Err(Error::ReferenceNotVisible);
    }
    view_features(world, &st, &view)?.ok_or(Error::ReferenceNotVisible)
}

/// World x and y: driven only through roll and pitch.
const LATERAL: [usize; 2] = [3, 4];

struct Frame {
    local_visible: bool,
    global_visible: bool,
    features: Option<FeatureVector>,
    /// Marker centre in the global camera frame.
    global_target: Option<Vector3<f64>>,
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    world: World,
    desired: FeatureVector,
    gains: ControllerGains,
    alloc: AllocationParams,
    dt: f64,
    state: GeneralizedState,
    q_d: DVector<f64>,
    supervisor: Supervisor,
    trajectory: Option<CubicTrajectory>,
    memory: AdaptiveState,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
    prev_rmse: Option<f64>,
    /// Recovery trajectory still blended in after a hand-off to IBVS, with
    /// the hand-off time.
    handoff: Option<(CubicTrajectory, f64)>,
}

enum Outcome {
    Continue,
    Stop(TerminationReason),
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let world = World::from_config(cfg)?;
        let desired = desired_features(cfg, &world)?;
        let gains = cfg.control.gains()?;
        let state = cfg.initial.state();
        let n = state.dof();
        let noise = if cfg.noise.pixel_std > 0.0 {
            let normal = Normal::new(0.0, cfg.noise.pixel_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Some((ChaCha8Rng::seed_from_u64(cfg.perturbation.seed ^ 0x5eed_0f_c0ffee), normal))
        } else {
            None
        };
        let local_pose = local_camera_pose(world.chain(), &state)?;
        let visible = observe(&local_pose, &world.local, &world.target)?.all_visible();
        Ok(Self {
            cfg,
            alloc: AllocationParams {
                mixer: cfg.mixer,
                tendon_floor: cfg.control.tendon_floor,
            },
            dt: cfg.dt(),
            q_d: state.q.clone(),
            state,
            supervisor: Supervisor::initial(visible),
            trajectory: None,
            memory: AdaptiveState::new(n),
            noise,
            prev_rmse: None,
            handoff: None,
            world,
            desired,
            gains,
        })
    }

    fn sense(&mut self) -> Result<Frame> {
        let chain = self.world.chain();
        let pose = local_camera_pose(chain, &self.state)?;
        let mut view = observe(&pose, &self.world.local, &self.world.target)?;
        if let Some((rng, normal)) = self.noise.as_mut() {
            let intr = &self.world.local;
            for c in view.corners.iter_mut().flatten() {
                c.pixel.x += normal.sample(rng);
                c.pixel.y += normal.sample(rng);
                c.normalized = intr.to_normalized(&c.pixel);
                c.visible = c.depth < intr.far && intr.in_bounds(&c.pixel);
            }
        }
        let features = view_features(&self.world, &self.state, &view)?;
        let gpose = global_camera_pose(chain, &self.state);
        let gview = observe(&gpose, &self.world.global, &self.world.target)?;
        let global_visible = gview.all_visible();
        let global_target = if global_visible {
            let center = project(&gpose, &self.world.global, &self.world.target.center())?;
            let depth = if self.cfg.recovery.depth_from_size {
                let pts = gview.normalized().expect("all corners visible");
                let perimeter: f64 = (0..4).map(|i| (pts[(i + 1) % 4] - pts[i]).norm()).sum();
                4.0 * self.world.target.side / perimeter
            } else {
                center.depth
            };
            Some(center.normalized * depth)
        } else {
            None
        };
        Ok(Frame {
            local_visible: view.all_visible(),
            global_visible,
            features,
            global_target,
        })
    }

    /// IBVS rates. Right after a hand-off from recovery the IBVS gain ramps
    /// up while the recovery trajectory's rod rate fades out.
    fn ibvs_rate(&self, t: f64, e: &Vector6<f64>) -> Result<DVector<f64>> {
        let chain = self.world.chain();
        let pose = virtual_camera_pose(chain, &self.state)?;
        let j = feature_jacobian(&pose, &self.world.target, INTERACTION_STEP)?;
        let c = &self.cfg.control;
        let w = match &self.handoff {
            Some((_, t0)) if c.ibvs_ramp > 0.0 => 1.0 - (-(t - t0 + self.dt) / c.ibvs_ramp).exp(),
            _ => 1.0,
        };
        let v = saturate_twist(&ibvs_twist(e, &j, c.lambda * w)?, c.max_linear_speed, c.max_angular_speed);
        let mut qdot = camera_twist_to_qdot_on(&v, chain, &self.state, &commanded_coordinates(self.state.dof()))?;
        if let Some((tr, _)) = &self.handoff {
            let ns = self.state.dof() - UAV_DOF;
            let mut rows = qdot.rows_mut(UAV_DOF, ns);
            rows += tr.sample(t).1 * (1.0 - w);
        }
        Ok(qdot)
    }

    fn recovery_rate(&mut self, t: f64, frame: &Frame) -> Result<DVector<f64>> {
        let ns = self.state.dof() - UAV_DOF;
        let stale = self.trajectory.as_ref().is_some_and(|tr| t > tr.tf + 0.5);
        if self.trajectory.is_none() || stale {
            self.trajectory = None;
            if let Some(p) = frame.global_target {
                let from = self.state.strain();
                let to = recovery_target(self.world.chain(), &self.state, &p, &self.cfg.recovery.search())?;
                let tf = t + recovery_duration(&from, &to);
                self.trajectory = Some(plan_cubic(&from, &to, t, tf)?);
            }
        }
        let mut qdot = DVector::zeros(UAV_DOF + ns);
        if let Some(tr) = &self.trajectory {
            let (q, qd) = tr.sample(t);
            self.q_d.rows_mut(UAV_DOF, ns).copy_from(&q);
            qdot.rows_mut(UAV_DOF, ns).copy_from(&qd);
        }
        Ok(qdot)
    }

    fn step(&mut self, k: usize, log: &mut RunLog, modes: &mut Vec<ServoMode>) -> Result<Outcome> {
        let t = k as f64 * self.dt;
        let frame = self.sense()?;
        let e_feat = frame.features.map(|f| feature_error(&f, &self.desired));
        let rmse = e_feat.as_ref().map(normalized_rmse).unwrap_or(f64::NAN);
        let prev_mode = self.supervisor.mode();
        let settled_error = if frame.local_visible { e_feat.as_ref() } else { None };
        let mode = match self.supervisor.update(frame.local_visible, frame.global_visible, settled_error) {
            Ok(m) => m,
            Err(Error::TargetLost) => return Ok(Outcome::Stop(TerminationReason::TargetLost)),
            Err(e) => return Err(e),
        };
        if modes.last() != Some(&mode) {
            modes.push(mode);
        }
        if mode == ServoMode::Done && self.cfg.termination.stop_on_done {
            return Ok(Outcome::Stop(TerminationReason::Converged));
        }
        if mode != prev_mode || k == 0 {
            // re-anchor the integrated reference on every mode switch
            self.q_d.copy_from(&self.state.q);
            let tr = self.trajectory.take();
            self.handoff = match (prev_mode, mode) {
                (ServoMode::Recovery, ServoMode::Ibvs) => tr.map(|tr| (tr, t)),
                _ => None,
            };
            self.memory.qdot_r = None;
        }

        let qdot_d = match (mode, e_feat) {
            (ServoMode::Ibvs, Some(e)) => {
                let qd = self.ibvs_rate(t, &e)?;
                self.q_d += &qd * self.dt;
                qd
            }
            (ServoMode::Recovery, _) => self.recovery_rate(t, &frame)?,
            _ => DVector::zeros(self.state.dof()),
        };

        let model = &self.world.model;
        let mats = model.assemble(&self.state)?;
        let est = perturb_model(&mats, &self.cfg.perturbation)?;
        let mut refs = References {
            q_d: self.q_d.clone(),
            qdot_d,
        };
        let first = evaluate(&self.state, &refs, &est, &self.gains, &self.memory, self.dt, &LATERAL);
        let att = attitude_references(&first.tau_a, refs.q_d[2])?;
        let tilt = self.cfg.control.max_tilt;
        refs.q_d[0] = att.roll.clamp(-tilt, tilt);
        refs.q_d[1] = att.pitch.clamp(-tilt, tilt);
        self.q_d[0] = refs.q_d[0];
        self.q_d[1] = refs.q_d[1];
        let out = evaluate(&self.state, &refs, &est, &self.gains, &self.memory, self.dt, &LATERAL);
        let input = allocate(&out.tau_a, &mats.actuation, &self.state, &self.alloc)?;

        // model mismatch seen along the reference; the lateral force the rotors
        // cannot produce directly is underactuation, not uncertainty, and is left out
        let delta = (&mats.mass - &est.mass) * &out.qddot_r
            + (&mats.coriolis + &mats.damping - &est.coriolis - &est.damping) * &out.qdot_r
            + (&mats.stiffness - &mats.external - &est.static_force);
        let v = lyapunov_value(&out.s, &out.e, &(&self.memory.delta_hat - &delta), &self.gains, &est.mass);

        log.records.push(StepRecord {
            t,
            q: self.state.q.clone(),
            qdot: self.state.qdot.clone(),
            e: out.e.clone(),
            features: frame.features.map(|f| f.0).unwrap_or_else(|| Vector6::repeat(f64::NAN)),
            feature_error: e_feat.unwrap_or_else(|| Vector6::repeat(f64::NAN)),
            mode,
            rotors: input.rotors,
            tendons: input.tendons.clone(),
            delta_hat: self.memory.delta_hat.clone(),
            lyapunov: v,
            rmse,
            local_visible: frame.local_visible,
        });

        commit(&mut self.memory, &out, &self.gains, self.dt, self.cfg.control.clamp());
        self.state = step(&self.state, model, &input, self.dt)?;

        let term = &self.cfg.termination;
        if mode == ServoMode::Ibvs && prev_mode == ServoMode::Ibvs {
            if let Some(prev) = self.prev_rmse {
                if rmse > term.growth_ratio * prev && rmse > term.growth_floor {
                    return Ok(Outcome::Stop(TerminationReason::ErrorGrowth));
                }
            }
        }
        self.prev_rmse = (mode == ServoMode::Ibvs && rmse.is_finite()).then_some(rmse);
        Ok(Outcome::Continue)
    }
}

fn classify(err: &Error) -> TerminationReason {
    match err {
        Error::TargetLost => TerminationReason::TargetLost,
        Error::NonFiniteState | Error::SingularMass { .. } | Error::GimbalLock { .. } => TerminationReason::NonFinite,
        _ => TerminationReason::Failed,
    }
}

/// Closed-loop simulation. Failures end the run and are reported in the
/// summary.
pub fn run(cfg: &ScenarioConfig) -> (RunLog, RunSummary) {
    let mut log = RunLog::default();
    let mut modes = Vec::new();
    let mut detail = None;
    let reason = match Runner::new(cfg) {
        Err(e) => {
            detail = Some(e.to_string());
            classify(&e)
        }
        Ok(mut runner) => {
            let dt = cfg.dt();
            let steps = (cfg.simulation.horizon / dt).round() as usize;
            let mut reason = TerminationReason::Horizon;
            for k in 0..steps {
                match runner.step(k, &mut log, &mut modes) {
                    Ok(Outcome::Continue) => {}
                    Ok(Outcome::Stop(r)) => {
                        reason = r;
                        break;
                    }
                    Err(e) => {
                        detail = Some(e.to_string());
                        reason = classify(&e);
                        break;
                    }
                }
            }
            reason
        }
    };
    let finite: Vec<f64> = log.records.iter().map(|r| r.rmse).filter(|x| x.is_finite()).collect();
    let summary = RunSummary {
        schema: SCHEMA.into(),
        name: cfg.name.clone(),
        perturbation: cfg.perturbation.factor,
        seed: cfg.perturbation.seed,
        initial_rmse: finite.first().copied().unwrap_or(f64::NAN),
        final_rmse: finite.last().copied().unwrap_or(f64::NAN),
        steps: log.records.len(),
        reason,
        detail,
        modes,
        local_fov_reached: log.records.iter().any(|r| r.local_visible),
    };
    (log, summary)
}
