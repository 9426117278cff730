use nalgebra::{DMatrix, DVector, Matrix6xX, Vector6};

use super::kinematics::{forward_kinematics, link_motions, world_rotation};
use super::{center_of_mass, AgentState, MultibodyModel};
use crate::spatial::{hat, Force6, Vec3};

/// Mass matrix `M(q)` and bias vector `h = C(q, ν) ν + G(q)` of one agent.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Computes `M` and `h` in one sweep.
///
/// Each link contributes `Jᵢᵀ Iᵢ Jᵢ` to `M` and `Jᵢᵀ wᵢ` to `h`, where `Jᵢ`
/// is the Jacobian of the link origin and `wᵢ` the wrench needed to sustain
/// the velocity-product acceleration against gravity.
pub fn dynamics(model: &MultibodyModel, state: &AgentState) -> Dynamics {
    let nv = model.nv();
    let kin = forward_kinematics(model, state);
    let motions = link_motions(model, state, &kin);
    let mut m = DMatrix::zeros(nv, nv);
    let mut h = DVector::zeros(nv);
    let mut jac = DMatrix::zeros(6, nv);
    for (i, link) in model.links.iter().enumerate() {
        let origin = kin.poses[i].translation;
        kin.fill_point_jacobian(model, i, &origin, &mut jac);
        let rot = world_rotation(&kin, i);
        let inertia = link.inertia.rotated_matrix(rot);
        let weighted = inertia * &jac;
        m.gemm_tr(1.0, &jac, &weighted, 1.0);

        let lm = motions[i];
        let mass = link.inertia.mass;
        let c = rot * link.inertia.com;
        let ic = rot * link.inertia.inertia_at_com * rot.transpose();
        let w = lm.omega;
        let acc_com = lm.acc_bias + lm.domega_bias.cross(&c) + w.cross(&w.cross(&c));
        let force = mass * (acc_com - model.gravity);
        let moment = ic * lm.domega_bias + w.cross(&(ic * w)) + c.cross(&force);
        let mut wrench = Vector6::zeros();
        wrench.fixed_rows_mut::<3>(0).copy_from(&force);
        wrench.fixed_rows_mut::<3>(3).copy_from(&moment);
        h.gemv_tr(1.0, &jac, &wrench, 1.0);
    }
    // symmetrize away rounding
    let mt = m.transpose();
    m += mt;
    m *= 0.5;
    Dynamics {
        mass_matrix: m,
        bias: h,
    }
}

pub fn mass_matrix(model: &MultibodyModel, state: &AgentState) -> DMatrix<f64> {
    dynamics(model, state).mass_matrix
}

pub fn bias_forces(model: &MultibodyModel, state: &AgentState) -> DVector<f64> {
    dynamics(model, state).bias
}

/// 6×(n+6) centroidal momentum matrix: `J_cmm ν` is the total momentum
/// `[linear; angular]` about the instantaneous centre of mass, world axes.
pub fn centroidal_momentum_matrix(model: &MultibodyModel, state: &AgentState) -> DMatrix<f64> {
    let nv = model.nv();
    let kin = forward_kinematics(model, state);
    let com = center_of_mass(model, &kin);
    let mut out = Matrix6xX::zeros(nv);
    let mut jac = DMatrix::zeros(6, nv);
    for (i, link) in model.links.iter().enumerate() {
        let origin = kin.poses[i].translation;
        kin.fill_point_jacobian(model, i, &origin, &mut jac);
        let inertia = link.inertia.rotated_matrix(world_rotation(&kin, i));
        let mut momentum = inertia * &jac;
        let lever = hat(&(origin - com));
        let lin = momentum.fixed_rows::<3>(0).into_owned();
        let mut ang = momentum.fixed_rows_mut::<3>(3);
        ang += lever * lin;
        out += momentum;
    }
    DMatrix::from_iterator(6, nv, out.iter().copied())
}

/// Momentum of every link about its own origin with world axes, from outward
/// velocity propagation (no Jacobians involved).
pub fn link_momenta(model: &MultibodyModel, state: &AgentState) -> Vec<(Vec3, Force6)> {
    let kin = forward_kinematics(model, state);
    let motions = link_motions(model, state, &kin);
    model
        .links
        .iter()
        .enumerate()
        .map(|(i, link)| {
            let pose = &kin.poses[i];
            let c = pose.rotation * link.inertia.com;
            let ic = pose.rotation * link.inertia.inertia_at_com * pose.rotation.transpose();
            let lm = motions[i];
            let v_com = lm.vel + lm.omega.cross(&c);
            let lin = link.inertia.mass * v_com;
            let ang = ic * lm.omega + c.cross(&lin);
            (pose.translation, Force6::new(lin, ang))
        })
        .collect()
}
