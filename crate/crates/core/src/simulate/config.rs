use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::machine::Thresholds;
use super::SimError;
use crate::control::Gains;
use crate::coupled::ContactSpec;
use crate::multibody::{load_model, MultibodyModel};

/// Scenario file contents. Model paths are relative to the scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub human_model: String,
    pub robot_model: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub initial: InitialConfig,
    pub contacts: StateContacts,
    pub machine: MachineConfig,
    pub com_waypoints: ComWaypoints,
    pub gains: GainsConfig,
    pub posture: PostureConfig,
    pub partner: PartnerConfig,
    #[serde(default)]
    pub stabilization: StabilizationConfig,
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub robot_base_xyz: [f64; 3],
    #[serde(default)]
    pub robot_base_rpy: [f64; 3],
    pub robot_joints: Vec<f64>,
    pub human_joints: Vec<f64>,
    /// Half-width of the uniform random velocity kick (before projection onto the constraints).
    #[serde(default)]
    pub velocity_perturbation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateContacts {
    pub s1: ContactSpec,
    pub s2: ContactSpec,
    pub s3: ContactSpec,
    pub s4: ContactSpec,
}

impl StateContacts {
    pub fn as_array(&self) -> [ContactSpec; 4] {
        [self.s1.clone(), self.s2.clone(), self.s3.clone(), self.s4.clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineConfig {
    pub hand_wrench_threshold: f64,
    pub feet_threshold_1: f64,
    pub feet_threshold_2: f64,
    #[serde(default = "default_hysteresis")]
    pub hysteresis: f64,
    /// Robot frame whose initial position marks the seat.
    pub seat_frame: String,
    /// Robot frame carrying the feet contact.
    pub feet_frame: String,
}

fn default_hysteresis() -> f64 {
    0.05
}

impl MachineConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            hand_wrench_threshold: self.hand_wrench_threshold,
            feet_threshold_1: self.feet_threshold_1,
            feet_threshold_2: self.feet_threshold_2,
            hysteresis: self.hysteresis,
        }
    }
}

/// Centre-of-mass displacement started on entry to a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub offset: [f64; 3],
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComWaypoints {
    pub s2: Segment,
    pub s3: Segment,
    pub s4: Segment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub kd: [f64; 6],
    pub kp: [f64; 6],
    pub k_damp: [f64; 6],
    #[serde(default = "default_eps_chi")]
    pub eps_chi: f64,
    #[serde(default = "default_max_condition")]
    pub max_delta_condition: f64,
    #[serde(default)]
    pub reset_integral_on_transition: bool,
}

fn default_eps_chi() -> f64 {
    1e-9
}

fn default_max_condition() -> f64 {
    1e6
}

impl GainsConfig {
    pub fn gains(&self) -> Result<Gains, SimError> {
        Gains::diagonal(&self.kd, &self.kp, &self.k_damp, self.eps_chi).map_err(|e| SimError::Config(e.to_string()))
    }
}

/// Joint-space PD in the task null space toward the posture held when the
/// current state began. The gains set a desired joint acceleration, which is
/// turned into torque through the constrained dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostureConfig {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartnerMode {
    /// Zero joint torques.
    Passive,
    /// PD servo on joint references, optional gravity compensation and assistance.
    Servo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartnerConfig {
    pub mode: PartnerMode,
    #[serde(default)]
    pub kp: f64,
    #[serde(default)]
    pub kd: f64,
    #[serde(default)]
    pub gravity_compensation: bool,
    /// Gain of the assistance torque `−k Ωᵀ χ̃`.
    #[serde(default)]
    pub assist_gain: f64,
    /// Joint reference: the initial posture plus a min-jerk offset.
    #[serde(default)]
    pub pull: Option<PullConfig>,
    /// Servo and gravity-compensation torques fade out over this window,
    /// leaving only joint damping.
    #[serde(default)]
    pub release: Option<ReleaseConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseConfig {
    pub start: f64,
    pub duration: f64,
    /// Joint damping (N·m·s/rad) of the relaxed arm.
    #[serde(default)]
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullConfig {
    pub offset: Vec<f64>,
    pub start: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizationConfig {
    pub zeta: f64,
    pub omega: f64,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self { zeta: 1.0, omega: 20.0 }
    }
}

/// A validated scenario with its models loaded.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// The configuration as it was actually used (after any overrides).
    pub effective: serde_json::Value,
    pub human: Arc<MultibodyModel>,
    pub robot: Arc<MultibodyModel>,
}

impl Scenario {
    /// Builds a scenario from a JSON value; model paths resolve against `base_dir`.
    pub fn from_value(value: serde_json::Value, base_dir: &Path) -> Result<Self, SimError> {
        let config: ScenarioConfig =
            serde_json::from_value(value.clone()).map_err(|e| SimError::Config(e.to_string()))?;
        let load = |rel: &str| -> Result<Arc<MultibodyModel>, SimError> {
            let path = resolve(base_dir, rel);
            let text =
                std::fs::read_to_string(&path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
            load_model(&text)
                .map(Arc::new)
                .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
        };
        let human = load(&config.human_model)?;
        let robot = load(&config.robot_model)?;
        let sc = Self {
            config,
            effective: value,
            human,
            robot,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<(), SimError> {
        let c = &self.config;
        let bad = |m: String| Err(SimError::Config(m));
        if !(c.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", c.dt));
        }
        if !(c.duration >= 0.0) {
            return bad(format!("duration must be non-negative, got {}", c.duration));
        }
        if c.initial.robot_joints.len() != self.robot.dof() {
            return bad(format!(
                "initial.robot_joints has {} entries, robot has {} joints",
                c.initial.robot_joints.len(),
                self.robot.dof()
            ));
        }
        if c.initial.human_joints.len() != self.human.dof() {
            return bad(format!(
                "initial.human_joints has {} entries, human has {} joints",
                c.initial.human_joints.len(),
                self.human.dof()
            ));
        }
        if self.robot.dof() < 6 {
            return bad("the momentum task needs at least 6 robot joints".into());
        }
        c.machine.thresholds().validate().map_err(SimError::Config)?;
        for f in [&c.machine.seat_frame, &c.machine.feet_frame] {
            if !self.robot.has_frame(f) {
                return bad(format!("robot has no frame '{f}'"));
            }
        }
        for seg in [&c.com_waypoints.s2, &c.com_waypoints.s3, &c.com_waypoints.s4] {
            if !(seg.duration > 0.0) {
                return bad("waypoint durations must be positive".into());
            }
        }
        c.gains.gains()?;
        if let Some(pull) = &c.partner.pull {
            if pull.offset.len() != self.human.dof() || !(pull.duration > 0.0) {
                return bad("partner.pull needs one offset per human joint and a positive duration".into());
            }
        }
        if let Some(r) = &c.partner.release {
            if !(r.duration > 0.0) || !(r.start >= 0.0) || !(r.damping >= 0.0) {
                return bad("partner.release needs a non-negative start and damping and a positive duration".into());
            }
        }
        if c.contacts.s1.mutual.is_none() {
            return bad("contacts.s1 must declare the mutual contact".into());
        }
        for (i, spec) in c.contacts.as_array().iter().enumerate() {
            crate::coupled::CoupledSystem::assemble(self.human.clone(), self.robot.clone(), spec.clone())
                .map_err(|e| SimError::Config(format!("contacts.s{}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
