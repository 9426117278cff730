//! Floating-base kinematic trees: model files, kinematics, frame Jacobians,
//! mass matrix, bias forces and the centroidal momentum matrix.
//!
//! Generalized velocities use the mixed representation `ν = [v_B; ω_B; ṡ]`:
//! `v_B` is the world velocity of the base origin and `ω_B` the world angular
//! velocity, so every frame Jacobian has the base block
//! `[1, −S(p_c − p_B); 0, 1]`.

mod dynamics;
mod kinematics;
mod model;

pub use dynamics::{bias_forces, centroidal_momentum_matrix, dynamics, link_momenta, mass_matrix, Dynamics};
pub use kinematics::{
    center_of_mass, forward_kinematics, frame_bias_acceleration, frame_jacobian, frame_twist, Kinematics,
};
pub use model::{
    load_model, model_from_spec, FrameRef, FrameSpec, InertiaSpec, JointKind, JointModel, JointSpec, Link, LinkSpec,
    ModelError, ModelSpec, MultibodyModel, OriginSpec, STANDARD_GRAVITY,
};

use nalgebra::DVector;

use crate::spatial::{exp_so3, orthonormalize, Mat3, Motion6, Transform, Vec3};

/// Configuration and mixed-representation velocity of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub base_pos: Vec3,
    pub base_rot: Mat3,
    pub s: DVector<f64>,
    pub base_vel: Motion6,
    pub s_dot: DVector<f64>,
}

impl AgentState {
    /// Base at the origin, identity orientation, all joints at zero and at rest.
    pub fn zero(model: &MultibodyModel) -> Self {
        Self {
            base_pos: Vec3::zeros(),
            base_rot: Mat3::identity(),
            s: DVector::zeros(model.dof()),
            base_vel: Motion6::zero(),
            s_dot: DVector::zeros(model.dof()),
        }
    }

    pub fn base_pose(&self) -> Transform {
        Transform::new(self.base_rot, self.base_pos)
    }

    pub fn set_base_pose(&mut self, pose: &Transform) {
        self.base_rot = pose.rotation;
        self.base_pos = pose.translation;
    }

    /// Generalized velocity `ν = [v_B; ω_B; ṡ]`.
    pub fn nu(&self) -> DVector<f64> {
        let n = self.s_dot.len();
        let mut nu = DVector::zeros(n + 6);
        nu.fixed_rows_mut::<3>(0).copy_from(&self.base_vel.linear);
        nu.fixed_rows_mut::<3>(3).copy_from(&self.base_vel.angular);
        nu.rows_mut(6, n).copy_from(&self.s_dot);
        nu
    }

    pub fn set_nu(&mut self, nu: &DVector<f64>) {
        let n = self.s_dot.len();
        assert_eq!(nu.len(), n + 6, "velocity dimension mismatch");
        self.base_vel = Motion6::new(nu.fixed_rows::<3>(0).into_owned(), nu.fixed_rows::<3>(3).into_owned());
        self.s_dot.copy_from(&nu.rows(6, n));
    }

    /// Moves the configuration along `velocity` for time `dt`, with the exact
    /// exponential for the base rotation. Velocities are left untouched.
    pub fn advance_configuration(&self, velocity: &DVector<f64>, dt: f64) -> Self {
        let n = self.s.len();
        let mut out = self.clone();
        let v = velocity.fixed_rows::<3>(0).into_owned();
        let w = velocity.fixed_rows::<3>(3).into_owned();
        out.base_pos += v * dt;
        out.base_rot = exp_so3(&(w * dt)) * self.base_rot;
        out.s += velocity.rows(6, n) * dt;
        out
    }

    pub fn reorthonormalize(&mut self) {
        self.base_rot = orthonormalize(&self.base_rot);
    }

    pub fn check(&self, model: &MultibodyModel) -> Result<(), ModelError> {
        if self.s.len() != model.dof() || self.s_dot.len() != model.dof() {
            return Err(ModelError::Invalid(format!(
                "state dimension {} / {} does not match model dof {}",
                self.s.len(),
                self.s_dot.len(),
                model.dof()
            )));
        }
        if !self.base_pose().is_valid() {
            return Err(ModelError::Invalid("base rotation is not in SO(3)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures;
