//! Identification of an articulated object's joint models from its motion
//! and the wrenches applied at the grasps.
//!
//! Each joint has two candidate models, so `n` joints give `2ⁿ` hypotheses.
//! For every hypothesis the total momentum of the object is rebuilt from the
//! per-candidate joint coordinates, differentiated in time and compared with
//! the net external wrench; the hypothesis with the smallest accumulated
//! mismatch wins.

mod io;
mod synth;

pub use io::{read_observations, write_observations, ObservationColumns};
pub use synth::{synthesize, JointMotion, SynthSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multibody::{model_from_spec, JointKind, JointSpec, LinkSpec, ModelError, ModelSpec, MultibodyModel};
use crate::spatial::{transform_force, transform_motion, Force6, Motion6, SpatialInertia, Transform, Vec3};

/// Largest number of joints accepted for exhaustive enumeration.
pub const MAX_JOINTS: usize = 12;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("timestamps must be strictly increasing (sample {0})")]
    NonMonotoneTime(usize),
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("observation file: {0}")]
    Io(String),
}

/// The object: rigid links (no joints; those come from the catalog) and the
/// frames where wrenches are measured.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    #[serde(default)]
    pub gravity: Option<[f64; 3]>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub grasps: Vec<String>,
}

/// Two candidate joint models for the joint above `link`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogJoint {
    pub link: String,
    pub candidates: [JointSpec; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub joints: Vec<CatalogJoint>,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// All `2ⁿ` assignments in lexicographic order.
    pub fn assignments(&self) -> Vec<Vec<u8>> {
        let n = self.joints.len();
        (0..1usize << n)
            .map(|code| (0..n).map(|j| ((code >> (n - 1 - j)) & 1) as u8).collect())
            .collect()
    }

    pub fn label(&self, assignment: &[u8]) -> String {
        self.joints
            .iter()
            .zip(assignment)
            .map(|(j, &c)| kind_name(j.candidates[c as usize].kind))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn kind_name(kind: JointKind) -> &'static str {
    match kind {
        JointKind::Revolute => "revolute",
        JointKind::Prismatic => "prismatic",
        JointKind::Fixed => "fixed",
    }
}

/// One time sample. Joint coordinates are given for both candidates of every
/// joint; grasp wrenches are in grasp-frame coordinates, in the order of
/// [`ObjectSpec::grasps`].
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectObservation {
    pub t: f64,
    pub base_pose: Transform,
    /// Base origin velocity and angular velocity, world axes.
    pub base_twist: Motion6,
    pub q: Vec<[f64; 2]>,
    pub qd: Vec<[f64; 2]>,
    pub grasp_wrenches: Vec<Force6>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopologyHypothesis {
    pub assignment: Vec<u8>,
    pub label: String,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifyResult {
    /// Best first.
    pub ranking: Vec<TopologyHypothesis>,
    /// The two best residuals cannot be told apart.
    pub ambiguous: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifyOptions {
    /// Centered moving-average width applied to the momentum before
    /// differentiation (1 disables it).
    pub smoothing_window: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { smoothing_window: 1 }
    }
}

/// `h = M v` for a body-frame twist and inertia.
pub fn link_momentum(inertia: &SpatialInertia, twist: &Motion6) -> Force6 {
    let h = inertia.matrix() * twist.to_vector();
    Force6::from_vector(&h)
}

/// The object with one joint hypothesis plugged in.
#[derive(Clone, Debug)]
pub struct ObjectModel {
    pub model: MultibodyModel,
    /// Link index of each catalog joint.
    pub joint_links: Vec<usize>,
    pub grasp_frames: Vec<crate::multibody::FrameRef>,
    pub assignment: Vec<u8>,
}

impl ObjectModel {
    pub fn build(object: &ObjectSpec, catalog: &Catalog, assignment: &[u8]) -> Result<Self, TopologyError> {
        if assignment.len() != catalog.len() {
            return Err(TopologyError::Dimension(format!(
                "assignment has {} entries, catalog has {} joints",
                assignment.len(),
                catalog.len()
            )));
        }
        if catalog.len() > MAX_JOINTS {
            return Err(TopologyError::Catalog(format!(
                "at most {MAX_JOINTS} joints, got {}",
                catalog.len()
            )));
        }
        let mut links = object.links.clone();
        for l in &links {
            if l.joint.is_some() {
                return Err(TopologyError::Catalog(format!(
                    "link '{}' declares a joint; joints come from the catalog",
                    l.name
                )));
            }
        }
        for (j, &c) in catalog.joints.iter().zip(assignment) {
            if c > 1 {
                return Err(TopologyError::Dimension(format!(
                    "candidate index {c} for joint '{}'",
                    j.link
                )));
            }
            let link = links
                .iter_mut()
                .find(|l| l.name == j.link)
                .ok_or_else(|| TopologyError::Catalog(format!("unknown link '{}'", j.link)))?;
            if link.parent.is_none() {
                return Err(TopologyError::Catalog(format!("'{}' is the base link", j.link)));
            }
            if link.joint.is_some() {
                return Err(TopologyError::Catalog(format!("joint '{}' listed twice", j.link)));
            }
            link.joint = Some(j.candidates[c as usize].clone());
        }
        let model = model_from_spec(&ModelSpec {
            name: object.name.clone(),
            gravity: object.gravity,
            links,
        })?;
        let joint_links = catalog
            .joints
            .iter()
            .map(|j| model.link_index(&j.link).expect("checked above"))
            .collect();
        let grasp_frames = object
            .grasps
            .iter()
            .map(|g| model.frame(g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            model,
            joint_links,
            grasp_frames,
            assignment: assignment.to_vec(),
        })
    }

    fn check(&self, obs: &ObjectObservation) -> Result<(), TopologyError> {
        let n = self.joint_links.len();
        if obs.q.len() != n || obs.qd.len() != n {
            return Err(TopologyError::Dimension(format!(
                "sample at t = {} has {}/{} joint entries, expected {n}",
                obs.t,
                obs.q.len(),
                obs.qd.len()
            )));
        }
        if obs.grasp_wrenches.len() != self.grasp_frames.len() {
            return Err(TopologyError::Dimension(format!(
                "sample at t = {} has {} grasp wrenches, expected {}",
                obs.t,
                obs.grasp_wrenches.len(),
                self.grasp_frames.len()
            )));
        }
        Ok(())
    }

    /// Link poses and body-frame twists by outward recursion
    /// `vᵢ = ⁱX_λ v_λ + Sᵢ q̇ᵢ`.
    fn link_states(&self, obs: &ObjectObservation) -> (Vec<Transform>, Vec<Motion6>) {
        let links = &self.model.links;
        let mut coord = vec![(0.0, 0.0); links.len()];
        for (j, &li) in self.joint_links.iter().enumerate() {
            let c = self.assignment[j] as usize;
            coord[li] = (obs.q[j][c], obs.qd[j][c]);
        }
        let rt = obs.base_pose.rotation.transpose();
        let base_body = Motion6::new(rt * obs.base_twist.linear, rt * obs.base_twist.angular);
        let mut poses: Vec<Transform> = Vec::with_capacity(links.len());
        let mut twists: Vec<Motion6> = Vec::with_capacity(links.len());
        for (i, link) in links.iter().enumerate() {
            match link.parent {
                None => {
                    poses.push(obs.base_pose);
                    twists.push(base_body);
                }
                Some(p) => {
                    let (q, qd) = coord[i];
                    let x = link.joint.child_in_parent(q);
                    let carried = transform_motion(&x.inverse(), &twists[p]);
                    let joint = match link.joint.kind {
                        JointKind::Revolute => Motion6::new(Vec3::zeros(), link.joint.axis * qd),
                        JointKind::Prismatic => Motion6::new(link.joint.axis * qd, Vec3::zeros()),
                        JointKind::Fixed => Motion6::zero(),
                    };
                    poses.push(poses[p] * x);
                    twists.push(Motion6::new(
                        carried.linear + joint.linear,
                        carried.angular + joint.angular,
                    ));
                }
            }
        }
        (poses, twists)
    }
}

/// Total momentum about the world origin, world axes.
pub fn total_momentum(model: &ObjectModel, obs: &ObjectObservation) -> Result<Force6, TopologyError> {
    model.check(obs)?;
    let (poses, twists) = model.link_states(obs);
    Ok(model
        .model
        .links
        .iter()
        .zip(poses.iter().zip(&twists))
        .map(|(link, (pose, twist))| transform_force(pose, &link_momentum(&link.inertia, twist)))
        .sum())
}

/// Grasp wrenches plus gravity on every link, about the world origin.
pub fn net_wrench(model: &ObjectModel, obs: &ObjectObservation) -> Result<Force6, TopologyError> {
    model.check(obs)?;
    let (poses, _) = model.link_states(obs);
    let mut total = Force6::zero();
    for (frame, f) in model.grasp_frames.iter().zip(&obs.grasp_wrenches) {
        total = total + transform_force(&(poses[frame.link] * frame.offset), f);
    }
    let g = model.model.gravity;
    for (link, pose) in model.model.links.iter().zip(&poses) {
        let c = pose.apply(&link.inertia.com);
        let w = link.inertia.mass * g;
        total = total + Force6::new(w, c.cross(&w));
    }
    Ok(total)
}

fn check_times(observations: &[ObjectObservation]) -> Result<(), TopologyError> {
    if observations.len() < 3 {
        return Err(TopologyError::TooFewSamples(observations.len()));
    }
    for (k, w) in observations.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(TopologyError::NonMonotoneTime(k + 1));
        }
    }
    Ok(())
}

/// `Σₜ ‖W − ḣ‖` over the interior samples, each mismatch expressed in the
/// base frame so the score does not depend on where the world frame sits.
pub fn hypothesis_residual(
    model: &ObjectModel,
    observations: &[ObjectObservation],
    options: &IdentifyOptions,
) -> Result<f64, TopologyError> {
    check_times(observations)?;
    let h = observations
        .iter()
        .map(|o| total_momentum(model, o).map(|f| f.to_vector()))
        .collect::<Result<Vec<_>, _>>()?;
    let h = moving_average(&h, options.smoothing_window.max(1));
    let mut sum = 0.0;
    for k in 1..observations.len() - 1 {
        let dt = observations[k + 1].t - observations[k - 1].t;
        let hdot = Force6::from_vector(&((h[k + 1] - h[k - 1]) / dt));
        let w = net_wrench(model, &observations[k])?;
        let err = transform_force(&observations[k].base_pose.inverse(), &(w - hdot));
        sum += err.norm();
    }
    Ok(sum)
}

fn moving_average(h: &[nalgebra::Vector6<f64>], width: usize) -> Vec<nalgebra::Vector6<f64>> {
    if width <= 1 {
        return h.to_vec();
    }
    let half = width / 2;
    (0..h.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(h.len());
            h[lo..hi].iter().sum::<nalgebra::Vector6<f64>>() / (hi - lo) as f64
        })
        .collect()
}

/// Scores every hypothesis and sorts best first; ties keep lexicographic
/// assignment order.
pub fn identify_topology(
    object: &ObjectSpec,
    catalog: &Catalog,
    observations: &[ObjectObservation],
    options: &IdentifyOptions,
) -> Result<IdentifyResult, TopologyError> {
    if catalog.len() > MAX_JOINTS {
        return Err(TopologyError::Catalog(format!(
            "at most {MAX_JOINTS} joints, got {}",
            catalog.len()
        )));
    }
    for j in &catalog.joints {
        let [a, b] = &j.candidates;
        if serde_json::to_value(a).ok() == serde_json::to_value(b).ok() {
            return Err(TopologyError::Catalog(format!(
                "joint '{}' has two identical candidates",
                j.link
            )));
        }
    }
    check_times(observations)?;
    let mut ranking = catalog
        .assignments()
        .into_par_iter()
        .map(|a| {
            let model = ObjectModel::build(object, catalog, &a)?;
            let residual = hypothesis_residual(&model, observations, options)?;
            Ok(TopologyHypothesis {
                label: catalog.label(&a),
                assignment: a,
                residual,
            })
        })
        .collect::<Result<Vec<_>, TopologyError>>()?;
    ranking.sort_by(|x, y| {
        x.residual
            .total_cmp(&y.residual)
            .then_with(|| x.assignment.cmp(&y.assignment))
    });
    let ambiguous = match ranking.as_slice() {
        [a, b, ..] => b.residual - a.residual <= 1e-9 * b.residual.abs() + 1e-12,
        _ => false,
    };
    Ok(IdentifyResult { ranking, ambiguous })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::multibody::{center_of_mass, centroidal_momentum_matrix, forward_kinematics, AgentState};
    use crate::spatial::{exp_so3, Mat3};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix6, Vector6};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const OBJECT: &str = r#"{
      "name": "tongs",
      "links": [
        {"name": "grip", "parent": null,
         "inertia": {"mass": 0.6, "com": [0.02, 0, 0.01], "ixx": 0.002, "iyy": 0.003, "izz": 0.002},
         "frames": [{"name": "left", "xyz": [-0.05, 0, 0]}]},
        {"name": "arm_a", "parent": "grip",
         "inertia": {"mass": 0.4, "com": [0.1, 0, 0], "ixx": 0.0005, "iyy": 0.002, "izz": 0.002}},
        {"name": "arm_b", "parent": "arm_a",
         "inertia": {"mass": 0.3, "com": [0.08, 0.01, 0], "ixx": 0.0004, "iyy": 0.0015, "izz": 0.0015}},
        {"name": "tip", "parent": "arm_b",
         "inertia": {"mass": 0.2, "com": [0.05, 0, 0], "ixx": 0.0002, "iyy": 0.0006, "izz": 0.0006},
         "frames": [{"name": "right", "xyz": [0.1, 0, 0], "rpy": [0.3, 0, 0]}]}
      ],
      "grasps": ["left", "right"]
    }"#;

    pub const CATALOG: &str = r#"{"joints": [
      {"link": "arm_a", "candidates": [
        {"kind": "revolute", "axis": [0, 0, 1], "origin": {"xyz": [0.1, 0, 0]}},
        {"kind": "prismatic", "axis": [0, 0, 1], "origin": {"xyz": [0.1, 0, 0]}}]},
      {"link": "arm_b", "candidates": [
        {"kind": "revolute", "axis": [1, 0, 0], "origin": {"xyz": [0.2, 0, 0]}},
        {"kind": "prismatic", "axis": [1, 0, 0], "origin": {"xyz": [0.2, 0, 0]}}]},
      {"link": "tip", "candidates": [
        {"kind": "revolute", "axis": [0, 1, 0], "origin": {"xyz": [0.16, 0, 0]}},
        {"kind": "prismatic", "axis": [0, 1, 0], "origin": {"xyz": [0.16, 0, 0]}}]}
    ]}"#;

    pub fn object() -> ObjectSpec {
        serde_json::from_str(OBJECT).unwrap()
    }

    pub fn catalog() -> Catalog {
        serde_json::from_str(CATALOG).unwrap()
    }

    fn random_obs(model: &ObjectModel, seed: u64) -> ObjectObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |s: f64| rng.gen_range(-s..s);
        let n = model.joint_links.len();
        ObjectObservation {
            t: 0.0,
            base_pose: Transform::new(
                exp_so3(&Vec3::new(u(2.0), u(2.0), u(2.0))),
                Vec3::new(u(1.0), u(1.0), u(1.0)),
            ),
            base_twist: Motion6::new(Vec3::new(u(1.0), u(1.0), u(1.0)), Vec3::new(u(1.0), u(1.0), u(1.0))),
            q: (0..n).map(|_| [u(1.0), u(0.1)]).collect(),
            qd: (0..n).map(|_| [u(2.0), u(0.5)]).collect(),
            grasp_wrenches: (0..model.grasp_frames.len())
                .map(|_| Force6::new(Vec3::new(u(5.0), u(5.0), u(5.0)), Vec3::new(u(1.0), u(1.0), u(1.0))))
                .collect(),
        }
    }

    /// The same configuration as a multibody state.
    fn agent_state(model: &ObjectModel, obs: &ObjectObservation) -> AgentState {
        let mut st = AgentState::zero(&model.model);
        st.set_base_pose(&obs.base_pose);
        st.base_vel = obs.base_twist;
        for (j, &li) in model.joint_links.iter().enumerate() {
            let k = model.model.dof_index(li).unwrap();
            let c = model.assignment[j] as usize;
            st.s[k] = obs.q[j][c];
            st.s_dot[k] = obs.qd[j][c];
        }
        st
    }

    #[test]
    fn link_momentum_special_cases() {
        let inertia = SpatialInertia::new(2.0, Vec3::zeros(), Mat3::identity() * 0.1).unwrap();
        assert_eq!(link_momentum(&inertia, &Motion6::zero()), Force6::zero());
        let v = Vec3::new(1.0, -2.0, 0.5);
        let h = link_momentum(&inertia, &Motion6::new(v, Vec3::zeros()));
        assert_relative_eq!(h.force, 2.0 * v, epsilon = 1e-15);
        assert_relative_eq!(h.moment, Vec3::zeros(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn link_momentum_matches_dense_operator(
            m in 0.1f64..5.0, c in prop::array::uniform3(-0.5f64..0.5),
            d in prop::array::uniform3(0.01f64..0.1), w in prop::array::uniform6(-3.0f64..3.0),
        ) {
            let ic = Mat3::from_diagonal(&Vec3::new(d[1] + d[2], d[0] + d[2], d[0] + d[1]));
            let inertia = SpatialInertia::new(m, Vec3::from(c), ic).unwrap();
            let twist = Motion6::from_vector(&Vector6::from_row_slice(&w));
            // dense operator from the textbook blocks
            let cx = crate::spatial::hat(&Vec3::from(c));
            let mut dense = Matrix6::zeros();
            dense.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * m));
            dense.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m * cx));
            dense.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * cx));
            dense.fixed_view_mut::<3, 3>(3, 3).copy_from(&(ic + m * cx * cx.transpose()));
            let expect = dense * twist.to_vector();
            let got = link_momentum(&inertia, &twist).to_vector();
            for k in 0..6 {
                prop_assert!((got[k] - expect[k]).abs() <= 1e-12 * (1.0 + expect[k].abs()));
            }
        }
    }

    #[test]
    fn total_momentum_matches_centroidal_momentum() {
        let (obj, cat) = (object(), catalog());
        for a in cat.assignments() {
            let model = ObjectModel::build(&obj, &cat, &a).unwrap();
            for seed in 0..5 {
                let obs = random_obs(&model, seed);
                let st = agent_state(&model, &obs);
                let hc = centroidal_momentum_matrix(&model.model, &st) * st.nu();
                let com = center_of_mass(&model.model, &forward_kinematics(&model.model, &st));
                let about_origin = Force6::from_vector(&Vector6::from_column_slice(hc.as_slice())).shifted(&-com);
                let h = total_momentum(&model, &obs).unwrap();
                assert_relative_eq!(h.to_vector(), about_origin.to_vector(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn static_object_has_no_momentum() {
        let (obj, cat) = (object(), catalog());
        let model = ObjectModel::build(&obj, &cat, &[0, 1, 0]).unwrap();
        let mut obs = random_obs(&model, 3);
        obs.base_twist = Motion6::zero();
        obs.qd.iter_mut().for_each(|x| *x = [0.0, 0.0]);
        assert_eq!(total_momentum(&model, &obs).unwrap(), Force6::zero());
    }

    #[test]
    fn rigid_object_collapses_to_one_body() {
        let text = r#"{"name": "brick", "links": [
            {"name": "b", "parent": null,
             "inertia": {"mass": 1.5, "com": [0.1, 0.02, 0], "ixx": 0.01, "iyy": 0.02, "izz": 0.02}}]}"#;
        let obj: ObjectSpec = serde_json::from_str(text).unwrap();
        let cat = Catalog { joints: vec![] };
        let model = ObjectModel::build(&obj, &cat, &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = Transform::new(exp_so3(&Vec3::new(0.3, -0.2, 1.0)), Vec3::new(rng.gen(), 0.4, -0.2));
        let twist = Motion6::new(Vec3::new(0.1, 0.5, -0.3), Vec3::new(1.0, -0.4, 0.2));
        let obs = ObjectObservation {
            t: 0.0,
            base_pose: pose,
            base_twist: twist,
            q: vec![],
            qd: vec![],
            grasp_wrenches: vec![],
        };
        let rt = pose.rotation.transpose();
        let body = Motion6::new(rt * twist.linear, rt * twist.angular);
        let expect = transform_force(&pose, &link_momentum(&model.model.links[0].inertia, &body));
        assert_relative_eq!(
            total_momentum(&model, &obs).unwrap().to_vector(),
            expect.to_vector(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn net_wrench_superposes_transformed_terms() {
        let (obj, cat) = (object(), catalog());
        let model = ObjectModel::build(&obj, &cat, &[1, 0, 1]).unwrap();
        let obs = random_obs(&model, 9);
        let mut no_grasp = obs.clone();
        no_grasp.grasp_wrenches = vec![Force6::zero(); 2];
        let gravity = net_wrench(&model, &no_grasp).unwrap();
        let st = agent_state(&model, &obs);
        let kin = forward_kinematics(&model.model, &st);
        let mut expect = gravity;
        for (frame, f) in model.grasp_frames.iter().zip(&obs.grasp_wrenches) {
            let pose = kin.frame_pose(frame);
            let world = Force6::new(pose.rotation * f.force, pose.rotation * f.moment);
            expect = expect + world.shifted(&-pose.translation);
        }
        let got = net_wrench(&model, &obs).unwrap();
        assert_relative_eq!(got.to_vector(), expect.to_vector(), epsilon = 1e-12);
        // gravity term: total weight through the centre of mass
        let com = center_of_mass(&model.model, &kin);
        let w = model.model.total_mass() * model.model.gravity;
        assert_relative_eq!(gravity.force, w, epsilon = 1e-12);
        assert_relative_eq!(gravity.moment, com.cross(&w), epsilon = 1e-12);
    }

    #[test]
    fn free_object_without_gravity_has_zero_net_wrench() {
        let mut obj = object();
        obj.gravity = Some([0.0; 3]);
        obj.grasps.clear();
        let cat = catalog();
        let model = ObjectModel::build(&obj, &cat, &[0, 0, 0]).unwrap();
        let obs = random_obs(&model, 1);
        assert_eq!(net_wrench(&model, &obs).unwrap(), Force6::zero());
    }

    #[test]
    fn static_observations_are_ambiguous() {
        let (obj, cat) = (object(), catalog());
        let model = ObjectModel::build(&obj, &cat, &[0, 0, 0]).unwrap();
        let mut base = random_obs(&model, 2);
        base.base_twist = Motion6::zero();
        base.q.iter_mut().for_each(|x| *x = [0.0, 0.0]);
        base.qd.iter_mut().for_each(|x| *x = [0.0, 0.0]);
        let obs: Vec<_> = (0..5)
            .map(|k| ObjectObservation {
                t: k as f64 * 0.01,
                ..base.clone()
            })
            .collect();
        let result = identify_topology(&obj, &cat, &obs, &IdentifyOptions::default()).unwrap();
        assert!(result.ambiguous);
        assert_eq!(result.ranking.len(), 8);
        // ties fall back to lexicographic order
        assert_eq!(result.ranking[0].assignment, vec![0, 0, 0]);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let (obj, cat) = (object(), catalog());
        let model = ObjectModel::build(&obj, &cat, &[0, 0, 0]).unwrap();
        let o = random_obs(&model, 0);
        let two = vec![o.clone(), ObjectObservation { t: 1.0, ..o.clone() }];
        assert!(matches!(
            identify_topology(&obj, &cat, &two, &IdentifyOptions::default()),
            Err(TopologyError::TooFewSamples(2))
        ));
        let back = vec![o.clone(), ObjectObservation { t: 1.0, ..o.clone() }, o.clone()];
        assert!(matches!(
            identify_topology(&obj, &cat, &back, &IdentifyOptions::default()),
            Err(TopologyError::NonMonotoneTime(2))
        ));
        let mut short = o.clone();
        short.q.pop();
        assert!(matches!(
            total_momentum(&model, &short),
            Err(TopologyError::Dimension(_))
        ));
        let mut dup = cat.clone();
        dup.joints[0].candidates[1] = dup.joints[0].candidates[0].clone();
        let three: Vec<_> = (0..3)
            .map(|k| ObjectObservation {
                t: k as f64,
                ..o.clone()
            })
            .collect();
        assert!(matches!(
            identify_topology(&obj, &dup, &three, &IdentifyOptions::default()),
            Err(TopologyError::Catalog(_))
        ));
        let mut bad_grasp = obj.clone();
        bad_grasp.grasps.push("nowhere".into());
        assert!(matches!(
            ObjectModel::build(&bad_grasp, &cat, &[0, 0, 0]),
            Err(TopologyError::Model(ModelError::UnknownFrame(_)))
        ));
    }

    #[test]
    fn assignments_enumerate_in_order() {
        let a = catalog().assignments();
        assert_eq!(a.len(), 8);
        assert_eq!(a[0], vec![0, 0, 0]);
        assert_eq!(a[1], vec![0, 0, 1]);
        assert_eq!(a[7], vec![1, 1, 1]);
        assert_eq!(catalog().label(&[0, 1, 0]), "revolute,prismatic,revolute");
    }

    #[test]
    fn total_momentum_matches_world_frame_link_sum() {
        let (obj, cat) = (object(), catalog());
        let model = ObjectModel::build(&obj, &cat, &[1, 1, 0]).unwrap();
        let obs = random_obs(&model, 21);
        let st = agent_state(&model, &obs);
        let sum: Force6 = crate::multibody::link_momenta(&model.model, &st)
            .into_iter()
            .map(|(o, h)| h.shifted(&-o))
            .sum();
        assert_relative_eq!(
            total_momentum(&model, &obs).unwrap().to_vector(),
            sum.to_vector(),
            epsilon = 1e-10
        );
    }
}
