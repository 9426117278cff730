use nalgebra::DMatrix;

use super::{AgentState, FrameRef, JointKind, ModelError, MultibodyModel};
use crate::spatial::{Mat3, Motion6, Transform, Vec3};

/// World poses of every link for one configuration.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub poses: Vec<Transform>,
    /// World joint axis of each link's joint (zero for the base and fixed joints).
    pub axes: Vec<Vec3>,
    pub base_pos: Vec3,
}

pub fn forward_kinematics(model: &MultibodyModel, state: &AgentState) -> Kinematics {
    let n = model.links.len();
    let mut poses = Vec::with_capacity(n);
    let mut axes = Vec::with_capacity(n);
    for (i, link) in model.links.iter().enumerate() {
        match link.parent {
            None => {
                poses.push(state.base_pose());
                axes.push(Vec3::zeros());
            }
            Some(p) => {
                let q = model.dof_index(i).map(|k| state.s[k]).unwrap_or(0.0);
                let joint_frame = poses[p] * link.joint.origin;
                let axis = if link.joint.has_dof() {
                    joint_frame.rotation * link.joint.axis
                } else {
                    Vec3::zeros()
                };
                poses.push(joint_frame * link.joint.motion(q));
                axes.push(axis);
            }
        }
    }
    Kinematics {
        poses,
        axes,
        base_pos: state.base_pos,
    }
}

impl Kinematics {
    pub fn frame_pose(&self, frame: &FrameRef) -> Transform {
        self.poses[frame.link] * frame.offset
    }

    /// 6×(n+6) Jacobian of the world-aligned twist of a point rigidly attached to `link`.
    pub fn point_jacobian(&self, model: &MultibodyModel, link: usize, point: &Vec3) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(6, model.nv());
        self.fill_point_jacobian(model, link, point, &mut jac);
        jac
    }

    pub(crate) fn fill_point_jacobian(
        &self,
        model: &MultibodyModel,
        link: usize,
        point: &Vec3,
        jac: &mut DMatrix<f64>,
    ) {
        jac.fill(0.0);
        let r = point - self.base_pos;
        for k in 0..3 {
            jac[(k, k)] = 1.0;
            jac[(3 + k, 3 + k)] = 1.0;
        }
        // −S(r) block
        jac[(0, 4)] = r.z;
        jac[(0, 5)] = -r.y;
        jac[(1, 3)] = -r.z;
        jac[(1, 5)] = r.x;
        jac[(2, 3)] = r.y;
        jac[(2, 4)] = -r.x;

        let mut cur = Some(link);
        while let Some(i) = cur {
            if let Some(k) = model.dof_index(i) {
                let a = self.axes[i];
                let col = 6 + k;
                match model.links[i].joint.kind {
                    JointKind::Revolute => {
                        let lin = a.cross(&(point - self.poses[i].translation));
                        for d in 0..3 {
                            jac[(d, col)] = lin[d];
                            jac[(3 + d, col)] = a[d];
                        }
                    }
                    JointKind::Prismatic => {
                        for d in 0..3 {
                            jac[(d, col)] = a[d];
                        }
                    }
                    JointKind::Fixed => {}
                }
            }
            cur = model.links[i].parent;
        }
    }
}

/// 6×(n+6) Jacobian of a named frame: `J ν` is the frame's twist with world axes,
/// linear part taken at the frame origin.
pub fn frame_jacobian(model: &MultibodyModel, state: &AgentState, frame: &str) -> Result<DMatrix<f64>, ModelError> {
    let f = model.frame(frame)?;
    let kin = forward_kinematics(model, state);
    let p = kin.frame_pose(&f).translation;
    Ok(kin.point_jacobian(model, f.link, &p))
}

/// Per-link velocity and velocity-product acceleration (the part of the
/// acceleration present when `ν̇ = 0`), all in world axes at link origins.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LinkMotion {
    pub omega: Vec3,
    pub vel: Vec3,
    pub domega_bias: Vec3,
    pub acc_bias: Vec3,
}

pub(crate) fn link_motions(model: &MultibodyModel, state: &AgentState, kin: &Kinematics) -> Vec<LinkMotion> {
    let mut out: Vec<LinkMotion> = Vec::with_capacity(model.links.len());
    for (i, link) in model.links.iter().enumerate() {
        let m = match link.parent {
            None => LinkMotion {
                omega: state.base_vel.angular,
                vel: state.base_vel.linear,
                domega_bias: Vec3::zeros(),
                acc_bias: Vec3::zeros(),
            },
            Some(p) => {
                let par = out[p];
                let qd = model.dof_index(i).map(|k| state.s_dot[k]).unwrap_or(0.0);
                let a = kin.axes[i];
                let r = kin.poses[i].translation - kin.poses[p].translation;
                let base_acc = par.acc_bias + par.domega_bias.cross(&r) + par.omega.cross(&par.omega.cross(&r));
                match link.joint.kind {
                    JointKind::Revolute => LinkMotion {
                        omega: par.omega + a * qd,
                        vel: par.vel + par.omega.cross(&r),
                        domega_bias: par.domega_bias + par.omega.cross(&(a * qd)),
                        acc_bias: base_acc,
                    },
                    JointKind::Prismatic => LinkMotion {
                        omega: par.omega,
                        vel: par.vel + par.omega.cross(&r) + a * qd,
                        domega_bias: par.domega_bias,
                        acc_bias: base_acc + 2.0 * par.omega.cross(&(a * qd)),
                    },
                    JointKind::Fixed => LinkMotion {
                        omega: par.omega,
                        vel: par.vel + par.omega.cross(&r),
                        domega_bias: par.domega_bias,
                        acc_bias: base_acc,
                    },
                }
            }
        };
        out.push(m);
    }
    out
}

/// World-aligned twist of a named frame, computed by outward velocity propagation.
pub fn frame_twist(model: &MultibodyModel, state: &AgentState, frame: &str) -> Result<Motion6, ModelError> {
    let f = model.frame(frame)?;
    let kin = forward_kinematics(model, state);
    let lm = link_motions(model, state, &kin)[f.link];
    let r = kin.frame_pose(&f).translation - kin.poses[f.link].translation;
    Ok(Motion6::new(lm.vel + lm.omega.cross(&r), lm.omega))
}

/// `J̇ ν` for a named frame: its classical acceleration when `ν̇ = 0`.
pub fn frame_bias_acceleration(model: &MultibodyModel, state: &AgentState, frame: &str) -> Result<Motion6, ModelError> {
    let f = model.frame(frame)?;
    let kin = forward_kinematics(model, state);
    let lm = link_motions(model, state, &kin)[f.link];
    let r = kin.frame_pose(&f).translation - kin.poses[f.link].translation;
    let lin = lm.acc_bias + lm.domega_bias.cross(&r) + lm.omega.cross(&lm.omega.cross(&r));
    Ok(Motion6::new(lin, lm.domega_bias))
}

/// World position of the total centre of mass.
pub fn center_of_mass(model: &MultibodyModel, kin: &Kinematics) -> Vec3 {
    let mut acc = Vec3::zeros();
    for (link, pose) in model.links.iter().zip(&kin.poses) {
        acc += link.inertia.mass * pose.apply(&link.inertia.com);
    }
    acc / model.total_mass()
}

pub(crate) fn world_rotation(kin: &Kinematics, link: usize) -> &Mat3 {
    &kin.poses[link].rotation
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multibody::fixtures::{branched, random_state};
    use crate::spatial::log_so3;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    const FRAMES: [&str; 4] = ["hand", "foot", "sensor", "torso"];

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = branched();
        for seed in 0..5 {
            let st = random_state(&model, seed);
            for name in FRAMES {
                let jac = frame_jacobian(&model, &st, name).unwrap();
                let f = model.frame(name).unwrap();
                let eps = 1e-6;
                for k in 0..model.nv() {
                    let mut dir = DVector::zeros(model.nv());
                    dir[k] = 1.0;
                    let plus = forward_kinematics(&model, &st.advance_configuration(&dir, eps)).frame_pose(&f);
                    let minus = forward_kinematics(&model, &st.advance_configuration(&dir, -eps)).frame_pose(&f);
                    let dp = (plus.translation - minus.translation) / (2.0 * eps);
                    let dw = log_so3(&(plus.rotation * minus.rotation.transpose())) / (2.0 * eps);
                    for d in 0..3 {
                        assert_relative_eq!(jac[(d, k)], dp[d], epsilon = 1e-7);
                        assert_relative_eq!(jac[(3 + d, k)], dw[d], epsilon = 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn twist_propagation_agrees_with_jacobian() {
        let model = branched();
        let st = random_state(&model, 11);
        for name in FRAMES {
            let twist = frame_twist(&model, &st, name).unwrap().to_vector();
            let jv = frame_jacobian(&model, &st, name).unwrap() * st.nu();
            for d in 0..6 {
                assert_relative_eq!(twist[d], jv[d], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bias_acceleration_is_time_derivative_of_jacobian() {
        let model = branched();
        for seed in 0..4 {
            let st = random_state(&model, 100 + seed);
            let nu = st.nu();
            let eps = 1e-5;
            for name in FRAMES {
                let jp = frame_jacobian(&model, &st.advance_configuration(&nu, eps), name).unwrap();
                let jm = frame_jacobian(&model, &st.advance_configuration(&nu, -eps), name).unwrap();
                let fd = (jp - jm) * &nu / (2.0 * eps);
                let acc = frame_bias_acceleration(&model, &st, name).unwrap().to_vector();
                for d in 0..6 {
                    assert_relative_eq!(acc[d], fd[d], epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn zero_configuration_places_frames_at_offsets() {
        let model = branched();
        let st = AgentState::zero(&model);
        let kin = forward_kinematics(&model, &st);
        let foot = kin.frame_pose(&model.frame("foot").unwrap()).translation;
        // torso -> leg (0,-0.1,-0.2) -> shin (0,0,-0.4) -> foot (0.05,0,-0.4)
        assert_relative_eq!(foot, Vec3::new(0.05, -0.1, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn unknown_frame_is_an_error() {
        let model = branched();
        let st = AgentState::zero(&model);
        assert!(matches!(
            frame_jacobian(&model, &st, "nope"),
            Err(ModelError::UnknownFrame(_))
        ));
    }
}
