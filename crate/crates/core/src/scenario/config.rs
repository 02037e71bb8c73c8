//! Scenario configuration files (TOML).

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerGains, EstimatedModel};
use crate::dynamics::{MixerParams, UavInertia};
use crate::error::{Error, Result};
use crate::kinematics::{GeneralizedState, MountTransforms, UAV_DOF};
use crate::liegroup::{euler_zyx_rotation, SE3Pose};
use crate::rod::{BasisKind, RodProperties};
use crate::servoing::RecoverySearch;
use crate::vision::CameraIntrinsics;

pub const DEFAULT_DT: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub rod: RodProperties,
    pub uav: UavInertia,
    #[serde(default)]
    pub mixer: MixerParams,
    #[serde(default)]
    pub mounts: MountsConfig,
    #[serde(default)]
    pub camera: CamerasConfig,
    #[serde(default)]
    pub target: TargetConfig,
    pub initial: StateConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub perturbation: EstimatedModel,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub termination: TerminationConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Step, s. Falls back to `DEFAULT_DT` with a notice when absent.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub segments: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: None,
            horizon: 5.0,
            segments: 20,
        }
    }
}

/// Rigid offset given as a translation and ZYX angles `(roll, pitch, yaw)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountConfig {
    pub translation: [f64; 3],
    pub rpy: [f64; 3],
}

impl MountConfig {
    pub fn pose(&self) -> SE3Pose {
        let [r, p, y] = self.rpy;
        SE3Pose::new(euler_zyx_rotation(r, p, y), Vector3::from(self.translation))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountsConfig {
    pub attachment: MountConfig,
    pub local_camera: MountConfig,
    pub global_camera: MountConfig,
}

impl Default for MountsConfig {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            attachment: MountConfig {
                translation: [0.0, 0.0, -0.05],
                rpy: [PI, 0.0, -PI / 2.0],
            },
            local_camera: MountConfig {
                translation: [0.0; 3],
                rpy: [0.0; 3],
            },
            global_camera: MountConfig {
                translation: [0.05, 0.0, -0.03],
                rpy: [PI, 0.0, 0.0],
            },
        }
    }
}

impl MountsConfig {
    pub fn transforms(&self) -> MountTransforms {
        MountTransforms {
            attachment: self.attachment.pose(),
            local_camera: self.local_camera.pose(),
            global_camera: self.global_camera.pose(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasConfig {
    pub local: CameraIntrinsics,
    pub global: CameraIntrinsics,
}

impl Default for CamerasConfig {
    fn default() -> Self {
        Self {
            local: CameraIntrinsics::local_default(),
            global: CameraIntrinsics::global_default(),
        }
    }
}

/// Square marker lying on the ground.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub center: [f64; 3],
    pub side: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            side: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub position: [f64; 3],
    /// `(roll, pitch, yaw)`, rad.
    pub euler: [f64; 3],
    pub strain: Vec<f64>,
}

impl StateConfig {
    pub fn state(&self) -> GeneralizedState {
        GeneralizedState::from_parts(Vector3::from(self.euler), Vector3::from(self.position), &self.strain)
    }
}

/// Either a snapshot configuration or explicit desired features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub position: [f64; 3],
    pub euler: [f64; 3],
    pub strain: Vec<f64>,
    #[serde(default)]
    pub features: Option<[f64; 6]>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0, 3.0],
            euler: [0.0; 3],
            strain: vec![0.0, 0.0],
            features: None,
        }
    }
}

impl ReferenceConfig {
    pub fn state(&self) -> GeneralizedState {
        GeneralizedState::from_parts(Vector3::from(self.euler), Vector3::from(self.position), &self.strain)
    }
}

/// Per-coordinate gains in `(phi, theta, psi, x, y, z, q_s...)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub beta: Vec<f64>,
    pub a_d: Vec<f64>,
    pub a_p: Vec<f64>,
    pub a_a: Vec<f64>,
    pub lambda: f64,
    pub epsilon: f64,
    /// Infinity disables the clamp.
    pub adaptation_clamp: f64,
    pub tendon_floor: f64,
    /// Bounds on the virtual-camera twist, m/s and rad/s.
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    /// Bound on the roll and pitch references, rad.
    pub max_tilt: f64,
    /// Time constant of the blend from the recovery trajectory into IBVS
    /// after a hand-off, s. Zero switches at once.
    pub ibvs_ramp: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            beta: vec![6.0, 6.0, 6.0, 1.5, 1.5, 2.0, 5.0, 5.0],
            a_d: vec![0.32, 0.32, 0.32, 1.5, 1.5, 3.0, 0.02, 0.02],
            a_p: vec![1.9, 1.9, 1.9, 2.26, 2.26, 7.5, 0.1, 0.1],
            a_a: vec![0.05, 0.05, 0.05, 0.5, 0.5, 0.5, 0.001, 0.001],
            lambda: 0.8,
            epsilon: 0.9,
            adaptation_clamp: 50.0,
            tendon_floor: 0.0,
            max_linear_speed: 1.0,
            max_angular_speed: 0.5,
            max_tilt: 0.35,
            ibvs_ramp: 3.0,
        }
    }
}

impl ControlConfig {
    pub fn gains(&self) -> Result<ControllerGains> {
        ControllerGains::new(
            DVector::from_vec(self.beta.clone()),
            DVector::from_vec(self.a_d.clone()),
            DVector::from_vec(self.a_p.clone()),
            DVector::from_vec(self.a_a.clone()),
            self.lambda,
            self.epsilon,
        )
    }

    pub fn clamp(&self) -> Option<f64> {
        self.adaptation_clamp.is_finite().then_some(self.adaptation_clamp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub bound: f64,
    pub nodes: usize,
    pub refine_steps: usize,
    /// Estimate target depth from its apparent size instead of the true range.
    pub depth_from_size: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        let s = RecoverySearch::default();
        Self {
            bound: s.bound,
            nodes: s.nodes,
            refine_steps: s.refine_steps,
            depth_from_size: false,
        }
    }
}

impl RecoveryConfig {
    pub fn search(&self) -> RecoverySearch {
        RecoverySearch {
            bound: self.bound,
            nodes: self.nodes,
            refine_steps: self.refine_steps,
        }
    }
}

/// Error-growth rule: stop when `rmse > growth_ratio * previous` and
/// `rmse > growth_floor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    pub growth_ratio: f64,
    pub growth_floor: f64,
    pub stop_on_done: bool,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            growth_ratio: 1.05,
            growth_floor: 0.05,
            stop_on_done: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gaussian pixel noise on the local camera, px.
    pub pixel_std: f64,
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        message: message.into(),
    }
}

fn finite_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0 (got {v})")))
    }
}

fn all_finite(field: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(invalid(&format!("{field}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if cfg.simulation.dt.is_none() {
            log::info!("simulation.dt not set; using {DEFAULT_DT} s");
            cfg.simulation.dt = Some(DEFAULT_DT);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn dt(&self) -> f64 {
        self.simulation.dt.unwrap_or(DEFAULT_DT)
    }

    pub fn rod_dof(&self) -> usize {
        self.initial.strain.len()
    }

    pub fn basis_kind(&self) -> Result<BasisKind> {
        match self.rod_dof() {
            0 => Ok(BasisKind::Rigid),
            2 => Ok(BasisKind::ConstantBending),
            4 => Ok(BasisKind::LinearBending),
            n => Err(invalid("initial.strain", format!("expected 0, 2 or 4 rod coordinates (got {n})"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.simulation.dt {
            finite_positive("simulation.dt", dt)?;
        }
        let h = self.simulation.horizon;
        if !(h.is_finite() && h >= 0.0) {
            return Err(invalid("simulation.horizon", format!("must be finite and >= 0 (got {h})")));
        }
        if self.simulation.segments == 0 {
            return Err(invalid("simulation.segments", "must be at least 1"));
        }
        self.rod.validate()?;
        self.uav.validate()?;
        self.mixer.validate()?;
        for (name, m) in [
            ("mounts.attachment", &self.mounts.attachment),
            ("mounts.local_camera", &self.mounts.local_camera),
            ("mounts.global_camera", &self.mounts.global_camera),
        ] {
            all_finite(&format!("{name}.translation"), &m.translation)?;
            all_finite(&format!("{name}.rpy"), &m.rpy)?;
        }
        self.camera.local.validate("camera.local")?;
        self.camera.global.validate("camera.global")?;
        all_finite("target.center", &self.target.center)?;
        finite_positive("target.side", self.target.side)?;

        self.basis_kind()?;
        let ns = self.rod_dof();
        all_finite("initial.position", &self.initial.position)?;
        all_finite("initial.euler", &self.initial.euler)?;
        all_finite("initial.strain", &self.initial.strain)?;
        all_finite("reference.position", &self.reference.position)?;
        all_finite("reference.euler", &self.reference.euler)?;
        all_finite("reference.strain", &self.reference.strain)?;
        if self.reference.strain.len() != ns {
            return Err(invalid(
                "reference.strain",
                format!("expected {ns} entries to match initial.strain"),
            ));
        }
        if let Some(f) = &self.reference.features {
            all_finite("reference.features", f)?;
        }

        let n = UAV_DOF + ns;
        let c = &self.control;
        for (name, v) in [("beta", &c.beta), ("a_d", &c.a_d), ("a_p", &c.a_p), ("a_a", &c.a_a)] {
            if v.len() != n {
                return Err(invalid(&format!("control.{name}"), format!("expected {n} entries (got {})", v.len())));
            }
        }
        c.gains().map_err(|e| invalid("control", e.to_string()))?;
        if !(c.adaptation_clamp > 0.0) {
            return Err(invalid("control.adaptation_clamp", "must be > 0 (inf disables)"));
        }
        for (name, v) in [
            ("max_linear_speed", c.max_linear_speed),
            ("max_angular_speed", c.max_angular_speed),
        ] {
            if !(v > 0.0) {
                return Err(invalid(&format!("control.{name}"), "must be > 0 (inf disables)"));
            }
        }
        if !(c.max_tilt > 0.0 && c.max_tilt < std::f64::consts::FRAC_PI_2) {
            return Err(invalid("control.max_tilt", "must lie in (0, pi/2)"));
        }
        if !(c.ibvs_ramp.is_finite() && c.ibvs_ramp >= 0.0) {
            return Err(invalid("control.ibvs_ramp", "must be finite and >= 0"));
        }
        if !(c.tendon_floor.is_finite() && c.tendon_floor >= 0.0) {
            return Err(invalid("control.tendon_floor", "must be finite and >= 0"));
        }
        self.perturbation.validate()?;
        let r = &self.recovery;
        finite_positive("recovery.bound", r.bound)?;
        if r.nodes < 2 {
            return Err(invalid("recovery.nodes", "must be at least 2"));
        }
        let t = &self.termination;
        if !(t.growth_ratio.is_finite() && t.growth_ratio >= 1.0) {
            return Err(invalid("termination.growth_ratio", "must be finite and >= 1"));
        }
        if !(t.growth_floor.is_finite() && t.growth_floor >= 0.0) {
            return Err(invalid("termination.growth_floor", "must be finite and >= 0"));
        }
        let s = self.noise.pixel_std;
        if !(s.is_finite() && s >= 0.0) {
            return Err(invalid("noise.pixel_std", "must be finite and >= 0"));
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    ScenarioConfig::parse(&text)
}
