use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, ObjectModel, ObjectObservation, ObjectSpec, TopologyError};
use crate::multibody::{dynamics, forward_kinematics, AgentState, JointKind};
use crate::spatial::{exp_so3, log_so3, transform_force, Force6, Motion6, Transform, Vec3};

/// `q(t) = offset + amplitude · sin(frequency · t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMotion {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl JointMotion {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let arg = self.frequency * t + self.phase;
        let w = self.frequency;
        (
            self.offset + self.amplitude * arg.sin(),
            self.amplitude * w * arg.cos(),
            -self.amplitude * w * w * arg.sin(),
        )
    }
}

/// Smooth synthetic manipulation of an object under a known joint assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub assignment: Vec<u8>,
    /// Time of the first sample.
    #[serde(default)]
    pub start: f64,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// Base translation amplitude (m) and rotation amplitude (rad).
    #[serde(default = "default_base_amplitude")]
    pub base_amplitude: [f64; 2],
    /// Amplitude for revolute (rad) and prismatic (m) joints.
    #[serde(default = "default_joint_amplitude")]
    pub joint_amplitude: [f64; 2],
}

fn default_base_amplitude() -> [f64; 2] {
    [0.1, 0.4]
}

fn default_joint_amplitude() -> [f64; 2] {
    [0.6, 0.05]
}

/// Samples the motion and the grasp wrenches that produce it exactly.
///
/// The grasp wrenches come from inverse dynamics of the true model: the base
/// rows of `M ν̇ + h` are the total non-gravitational wrench. With two grasps
/// the second one carries a smooth arbitrary share and the first the rest.
/// Every candidate's coordinates are the projections of the true relative
/// motion onto that candidate's axis.
pub fn synthesize(
    object: &ObjectSpec,
    catalog: &Catalog,
    spec: &SynthSpec,
) -> Result<Vec<ObjectObservation>, TopologyError> {
    if !(spec.dt > 0.0) || !(spec.duration > 0.0) {
        return Err(TopologyError::Dimension("dt and duration must be positive".into()));
    }
    if object.grasps.is_empty() {
        return Err(TopologyError::Dimension(
            "synthetic data needs at least one grasp".into(),
        ));
    }
    let truth = ObjectModel::build(object, catalog, &spec.assignment)?;
    let model = &truth.model;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut motion = |amp: f64| JointMotion {
        offset: 0.0,
        amplitude: amp * rng.gen_range(0.5..1.0),
        frequency: rng.gen_range(1.5..4.0),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
    };
    let base_lin: Vec<JointMotion> = (0..3).map(|_| motion(spec.base_amplitude[0])).collect();
    let base_rot = motion(spec.base_amplitude[1]);
    let joints: Vec<JointMotion> = truth
        .joint_links
        .iter()
        .map(|&li| match model.links[li].joint.kind {
            JointKind::Prismatic => motion(spec.joint_amplitude[1]),
            _ => motion(spec.joint_amplitude[0]),
        })
        .collect();
    let share: Vec<JointMotion> = (0..6).map(|_| motion(1.0)).collect();
    let axis = {
        let a = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        a.normalize()
    };
    let r0 = exp_so3(&Vec3::new(0.2, -0.3, 0.5));
    let p0 = Vec3::new(0.5, 0.1, 1.0);

    let steps = (spec.duration / spec.dt).round() as usize;
    let nv = model.nv();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = spec.start + k as f64 * spec.dt;
        let mut st = AgentState::zero(model);
        let mut acc = DVector::zeros(nv);
        let mut p = p0;
        for d in 0..3 {
            let (x, v, a) = base_lin[d].eval(t);
            p[d] += x;
            st.base_vel.linear[d] = v;
            acc[d] = a;
        }
        let (th, thd, thdd) = base_rot.eval(t);
        st.set_base_pose(&Transform::new(exp_so3(&(axis * th)) * r0, p));
        st.base_vel.angular = axis * thd;
        acc.fixed_rows_mut::<3>(3).copy_from(&(axis * thdd));
        for (j, &li) in truth.joint_links.iter().enumerate() {
            let k = model.dof_index(li).expect("catalog joints move");
            let (q, qd, qdd) = joints[j].eval(t);
            st.s[k] = q;
            st.s_dot[k] = qd;
            acc[6 + k] = qdd;
        }

        let d = dynamics(model, &st);
        let gen = &d.mass_matrix * &acc + &d.bias;
        let force = Vec3::new(gen[0], gen[1], gen[2]);
        let moment_base = Vec3::new(gen[3], gen[4], gen[5]);
        let total = Force6::new(force, moment_base + st.base_pos.cross(&force));

        let kin = forward_kinematics(model, &st);
        let mut world = vec![Force6::zero(); truth.grasp_frames.len()];
        if world.len() > 1 {
            let s: Vec<f64> = share.iter().map(|m| m.eval(t).0).collect();
            let pose = kin.frame_pose(&truth.grasp_frames[1]);
            // arbitrary wrench at the second grasp point
            world[1] = Force6::new(Vec3::new(s[0], s[1], s[2]) * 5.0, Vec3::new(s[3], s[4], s[5]) * 0.5)
                .shifted(&-pose.translation);
        }
        world[0] = total - world.iter().skip(1).copied().sum();
        let grasp_wrenches = world
            .iter()
            .zip(&truth.grasp_frames)
            .map(|(w, f)| transform_force(&kin.frame_pose(f).inverse(), w))
            .collect();

        let (q, qd) = candidate_coordinates(&truth, catalog, &st, &kin);
        out.push(ObjectObservation {
            t,
            base_pose: st.base_pose(),
            base_twist: st.base_vel,
            q,
            qd,
            grasp_wrenches,
        });
    }
    Ok(out)
}

type Coordinates = (Vec<[f64; 2]>, Vec<[f64; 2]>);

fn candidate_coordinates(
    truth: &ObjectModel,
    catalog: &Catalog,
    st: &AgentState,
    kin: &crate::multibody::Kinematics,
) -> Coordinates {
    let model = &truth.model;
    let nu = st.nu();
    let twist = |li: usize| {
        let o = kin.poses[li].translation;
        let v = kin.point_jacobian(model, li, &o) * &nu;
        Motion6::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    };
    let mut q = Vec::with_capacity(catalog.len());
    let mut qd = Vec::with_capacity(catalog.len());
    for (j, &li) in truth.joint_links.iter().enumerate() {
        let p = model.links[li].parent.expect("joint links have parents");
        let (tp, tc) = (twist(p), twist(li));
        let mut qj = [0.0; 2];
        let mut qdj = [0.0; 2];
        for (c, cand) in catalog.joints[j].candidates.iter().enumerate() {
            let joint = cand.to_joint();
            let frame = kin.poses[p] * joint.origin;
            let rel = frame.inverse() * kin.poses[li];
            let rt = frame.rotation.transpose();
            let a = joint.axis;
            match joint.kind {
                JointKind::Revolute => {
                    qj[c] = a.dot(&log_so3(&rel.rotation));
                    qdj[c] = a.dot(&(rt * (tc.angular - tp.angular)));
                }
                JointKind::Prismatic => {
                    qj[c] = a.dot(&rel.translation);
                    let r = kin.poses[li].translation - frame.translation;
                    let v_rel = tc.linear
                        - tp.linear
                        - tp.angular.cross(&(frame.translation - kin.poses[p].translation))
                        - tp.angular.cross(&r);
                    qdj[c] = a.dot(&(rt * v_rel));
                }
                JointKind::Fixed => {}
            }
        }
        q.push(qj);
        qd.push(qdj);
    }
    (q, qd)
}
