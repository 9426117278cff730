//! Small models and random states shared by unit tests.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{load_model, AgentState, MultibodyModel};
use crate::spatial::{exp_so3, Motion6, Vec3};

/// Branched tree with revolute, prismatic and fixed joints and offset frames.
pub const BRANCHED: &str = r#"{
  "name": "branched",
  "links": [
    {"name": "torso", "parent": null,
     "inertia": {"mass": 4.0, "com": [0.01, -0.02, 0.1], "ixx": 0.2, "iyy": 0.15, "izz": 0.1, "ixy": 0.01}},
    {"name": "arm1", "parent": "torso",
     "joint": {"kind": "revolute", "axis": [0, 1, 0], "origin": {"xyz": [0.1, 0.2, 0.3], "rpy": [0.2, 0, 0.1]}},
     "inertia": {"mass": 1.2, "com": [0.15, 0.01, 0], "ixx": 0.01, "iyy": 0.03, "izz": 0.03}},
    {"name": "arm2", "parent": "arm1",
     "joint": {"kind": "prismatic", "axis": [0.6, 0, 0.8], "origin": {"xyz": [0.3, 0, 0]}},
     "inertia": {"mass": 0.8, "com": [0.1, 0, 0.02], "ixx": 0.005, "iyy": 0.02, "izz": 0.02, "iyz": 0.001},
     "frames": [{"name": "hand", "xyz": [0.2, 0.05, 0], "rpy": [0, 0.3, 0]}]},
    {"name": "sensor", "parent": "arm2",
     "joint": {"kind": "fixed", "origin": {"xyz": [0.05, 0, 0.05], "rpy": [0.1, 0.2, 0.3]}},
     "inertia": {"mass": 0.2, "com": [0.01, 0, 0], "ixx": 0.001, "iyy": 0.001, "izz": 0.001}},
    {"name": "leg", "parent": "torso",
     "joint": {"kind": "revolute", "axis": [1, 0, 0], "origin": {"xyz": [0, -0.1, -0.2]}},
     "inertia": {"mass": 2.0, "com": [0, 0, -0.2], "ixx": 0.05, "iyy": 0.05, "izz": 0.01}},
    {"name": "shin", "parent": "leg",
     "joint": {"kind": "revolute", "axis": [0, 0.6, 0.8], "origin": {"xyz": [0, 0, -0.4]}},
     "inertia": {"mass": 1.5, "com": [0, 0.02, -0.2], "ixx": 0.04, "iyy": 0.04, "izz": 0.005},
     "frames": [{"name": "foot", "xyz": [0.05, 0, -0.4]}]}
  ]
}"#;

pub fn branched() -> MultibodyModel {
    load_model(BRANCHED).unwrap()
}

pub fn random_state(model: &MultibodyModel, seed: u64) -> AgentState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |s: f64| rng.gen_range(-s..s);
    let mut st = AgentState::zero(model);
    st.base_pos = Vec3::new(u(1.0), u(1.0), u(1.0));
    st.base_rot = exp_so3(&Vec3::new(u(2.0), u(2.0), u(2.0)));
    let n = model.dof();
    st.s = DVector::from_fn(n, |_, _| u(1.5));
    st.base_vel = Motion6::new(Vec3::new(u(1.0), u(1.0), u(1.0)), Vec3::new(u(1.0), u(1.0), u(1.0)));
    st.s_dot = DVector::from_fn(n, |_, _| u(2.0));
    st
}
