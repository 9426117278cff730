//! Task-space torque control of the robot inside the coupled system: the
//! partner-aware law with its α/β decomposition, a feedback-linearization
//! baseline, and the Lyapunov monitor.
//!
//! With `χ̃ = χ − χ_d` and `I = ∫χ̃`, the Lyapunov function is
//! `V = ½ χ̃ᵀK_d χ̃ + ½ IᵀK_p I` and its rate is affine in the torques:
//! `V̇ = χ̃ᵀ(Ω τ_H + Δ τ_R + Λ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupled::{CoupledError, CoupledEval, WrenchSolution};
use crate::linalg::{condition_number, damped_pinv, null_space_projector, pinv};
use crate::multibody::{centroidal_momentum_matrix, AgentState, MultibodyModel};

/// Relative damping of the task pseudo-inverse.
pub const PINV_DAMPING: f64 = 1e-8;
/// Step of the central difference used for `J̇_χ ν`.
pub const JDOT_STEP: f64 = 1e-6;

/// Relative singular-value cut of the null-space projector `N_Δ`.
pub const NULL_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("task matrix is rank deficient (condition number {condition:.3e} > {limit:.1e})")]
    RankDeficient { condition: f64, limit: f64 },
    #[error("invalid gains: {0}")]
    Gains(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Coupled(#[from] CoupledError),
}

/// Lyapunov weights `K_d`, `K_p`, the damping `K_D` of the law and the
/// guard below which `χ̃` counts as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Gains {
    pub kd: DMatrix<f64>,
    pub kp: DMatrix<f64>,
    pub k_damp: DMatrix<f64>,
    pub eps_chi: f64,
}

impl Gains {
    pub fn diagonal(kd: &[f64], kp: &[f64], k_damp: &[f64], eps_chi: f64) -> Result<Self, ControlError> {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let g = Self {
            kd: diag(kd),
            kp: diag(kp),
            k_damp: diag(k_damp),
            eps_chi,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.kd.nrows()
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let p = self.kd.nrows();
        for (name, m) in [("K_d", &self.kd), ("K_p", &self.kp), ("K_D", &self.k_damp)] {
            if m.shape() != (p, p) {
                return Err(ControlError::Gains(format!("{name} must be {p}x{p}")));
            }
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(ControlError::Gains(format!("{name} is not symmetric")));
            }
            if m.clone().symmetric_eigenvalues().min() <= 0.0 {
                return Err(ControlError::Gains(format!("{name} is not positive definite")));
            }
        }
        if !(self.eps_chi > 0.0) {
            return Err(ControlError::Gains("eps_chi must be positive".into()));
        }
        Ok(())
    }
}

/// Task value, Jacobian and velocity-product term at one state.
#[derive(Clone, Debug)]
pub struct TaskEval {
    pub chi: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// `J̇_χ ν`.
    pub jdot_nu: DVector<f64>,
}

/// Desired task value and rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskReference {
    pub chi_d: DVector<f64>,
    pub chi_d_dot: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Centroidal momentum of the robot, `χ = J_cmm ν`.
    Momentum,
}

/// A task together with its running integral `∫χ̃ ds`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub integral: DVector<f64>,
}

/// Centroidal momentum task (`p = 6`).
pub fn momentum_task() -> TaskSpec {
    TaskSpec {
        kind: TaskKind::Momentum,
        integral: DVector::zeros(6),
    }
}

impl TaskSpec {
    pub fn dim(&self) -> usize {
        match self.kind {
            TaskKind::Momentum => 6,
        }
    }

    pub fn jacobian(&self, model: &MultibodyModel, state: &AgentState) -> DMatrix<f64> {
        match self.kind {
            TaskKind::Momentum => centroidal_momentum_matrix(model, state),
        }
    }

    pub fn evaluate(&self, model: &MultibodyModel, state: &AgentState) -> TaskEval {
        let nu = state.nu();
        let jacobian = self.jacobian(model, state);
        let jdot_nu = if nu.norm() == 0.0 {
            DVector::zeros(self.dim())
        } else {
            let jp = self.jacobian(model, &state.advance_configuration(&nu, JDOT_STEP));
            let jm = self.jacobian(model, &state.advance_configuration(&nu, -JDOT_STEP));
            (jp - jm) * &nu / (2.0 * JDOT_STEP)
        };
        TaskEval {
            chi: &jacobian * nu,
            jacobian,
            jdot_nu,
        }
    }
}

/// Momentum reference from a desired centre-of-mass velocity and acceleration:
/// linear momentum `m v_d`, zero angular momentum.
pub fn momentum_reference(mass: f64, com_vel: &[f64; 3], com_acc: &[f64; 3]) -> TaskReference {
    let mut chi_d = DVector::zeros(6);
    let mut chi_d_dot = DVector::zeros(6);
    for k in 0..3 {
        chi_d[k] = mass * com_vel[k];
        chi_d_dot[k] = mass * com_acc[k];
    }
    TaskReference { chi_d, chi_d_dot }
}

/// Task-rate map of the robot inside the coupled dynamics:
/// `χ̇ = A τ_R + Ω₀ τ_H + c`.
#[derive(Clone, Debug)]
pub struct TaskDynamics {
    /// `J_χ M⁻¹ (B + Jᵀ Ḡ2)`.
    pub a: DMatrix<f64>,
    /// `J_χ M⁻¹ Jᵀ Ḡ1`.
    pub omega0: DMatrix<f64>,
    /// `J_χ M⁻¹ (Jᵀ Ḡ3 − h) + J̇_χ ν`.
    pub c: DVector<f64>,
}

impl TaskDynamics {
    pub fn new(eval: &CoupledEval, sol: &WrenchSolution, task: &TaskEval) -> Result<Self, ControlError> {
        let nr = eval.nv_robot();
        if task.jacobian.ncols() != nr {
            return Err(ControlError::Dimension(format!(
                "task Jacobian has {} columns, robot has {nr} velocities",
                task.jacobian.ncols()
            )));
        }
        let jr_t = eval.robot_wrench_jacobian().transpose();
        let mut b_plus = &jr_t * &sol.gbar2;
        for k in 0..nr - 6 {
            b_plus[(6 + k, k)] += 1.0;
        }
        let a = &task.jacobian * eval.robot_minv(&b_plus);
        let omega0 = &task.jacobian * eval.robot_minv(&(&jr_t * &sol.gbar1));
        let free = &jr_t * &sol.gbar3 - &eval.robot.bias;
        let free = eval.robot_minv(&DMatrix::from_column_slice(nr, 1, free.as_slice()));
        let c = (&task.jacobian * free).column(0) + &task.jdot_nu;
        Ok(Self { a, omega0, c })
    }

    /// Realized task rate for the given torques.
    pub fn chi_dot(&self, tau_h: &DVector<f64>, tau_r: &DVector<f64>) -> DVector<f64> {
        &self.a * tau_r + &self.omega0 * tau_h + &self.c
    }
}

/// `Δ`, `Λ`, `Ω` of the Lyapunov rate `V̇ = χ̃ᵀ(Ω τ_H + Δ τ_R + Λ)`.
#[derive(Clone, Debug)]
pub struct DeltaLambda {
    pub delta: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub omega: DMatrix<f64>,
}

pub fn compute_delta_lambda(
    td: &TaskDynamics,
    reference: &TaskReference,
    integral: &DVector<f64>,
    gains: &Gains,
) -> DeltaLambda {
    DeltaLambda {
        delta: &gains.kd * &td.a,
        lambda: &gains.kd * (&td.c - &reference.chi_d_dot) + &gains.kp * integral,
        omega: &gains.kd * &td.omega0,
    }
}

/// Splits `Ω τ_H = α χ̂ + β` with `χ̂ = χ̃/‖χ̃‖` and `β ⊥ χ̃`; returns `(α, ‖β‖)`.
pub fn alpha_decomposition(omega_tau_h: &DVector<f64>, chi_err: &DVector<f64>, eps_chi: f64) -> (f64, f64) {
    let n = chi_err.norm();
    if n < eps_chi {
        return (0.0, omega_tau_h.norm());
    }
    let unit = chi_err / n;
    let alpha = unit.dot(omega_tau_h);
    (alpha, (omega_tau_h - alpha * unit).norm())
}

/// `(V, V̇)` with `V̇ = −χ̃ᵀK_Dχ̃ + min(0, α)‖χ̃‖`, the rate under the partner-aware law.
pub fn lyapunov_eval(gains: &Gains, chi_err: &DVector<f64>, integral: &DVector<f64>, alpha: f64) -> (f64, f64) {
    let v = 0.5 * chi_err.dot(&(&gains.kd * chi_err)) + 0.5 * integral.dot(&(&gains.kp * integral));
    let vdot = -chi_err.dot(&(&gains.k_damp * chi_err)) + alpha.min(0.0) * chi_err.norm();
    (v, vdot)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlDiagnostics {
    pub tau_r: DVector<f64>,
    pub alpha: f64,
    pub beta_norm: f64,
    pub chi_err: DVector<f64>,
    pub v: f64,
    pub vdot_predicted: f64,
    pub delta_cond: f64,
}

/// `τ_R = −Δ†[Λ + K_D χ̃ + max(0, α) χ̂] + N_Δ τ₀`.
pub fn partner_aware_torques(
    dl: &DeltaLambda,
    chi_err: &DVector<f64>,
    integral: &DVector<f64>,
    gains: &Gains,
    tau_h: &DVector<f64>,
    tau0: &DVector<f64>,
    max_condition: f64,
) -> Result<ControlDiagnostics, ControlError> {
    let (p, nr) = dl.delta.shape();
    if chi_err.len() != p || tau0.len() != nr || tau_h.len() != dl.omega.ncols() {
        return Err(ControlError::Dimension(format!(
            "expected chi {p}, tau0 {nr}, tau_h {}",
            dl.omega.ncols()
        )));
    }
    let delta_cond = condition_number(&dl.delta);
    if !(delta_cond <= max_condition) || p > nr {
        return Err(ControlError::RankDeficient {
            condition: delta_cond,
            limit: max_condition,
        });
    }
    let (alpha, beta_norm) = alpha_decomposition(&(&dl.omega * tau_h), chi_err, gains.eps_chi);
    let n = chi_err.norm();
    let mut target = &dl.lambda + &gains.k_damp * chi_err;
    if alpha > 0.0 {
        target += chi_err * (alpha / n);
    }
    let tau_r = -damped_pinv(&dl.delta, PINV_DAMPING) * target + null_space_projector(&dl.delta, NULL_RTOL) * tau0;
    let (v, vdot_predicted) = lyapunov_eval(gains, chi_err, integral, alpha);
    Ok(ControlDiagnostics {
        tau_r,
        alpha,
        beta_norm,
        chi_err: chi_err.clone(),
        v,
        vdot_predicted,
        delta_cond,
    })
}

/// Torques imposing `χ̇ = χ̇_d − k_d χ̃ − k_p ∫χ̃` in the minimum-norm
/// least-squares sense, given the partner torques.
#[allow(clippy::too_many_arguments)]
pub fn feedback_linearization_torques(
    td: &TaskDynamics,
    reference: &TaskReference,
    chi_err: &DVector<f64>,
    integral: &DVector<f64>,
    k_d: f64,
    k_p: f64,
    tau_h: &DVector<f64>,
    max_condition: f64,
) -> Result<DVector<f64>, ControlError> {
    let condition = condition_number(&td.a);
    if !(condition <= max_condition) {
        return Err(ControlError::RankDeficient {
            condition,
            limit: max_condition,
        });
    }
    let target = &reference.chi_d_dot - k_d * chi_err - k_p * integral;
    let rhs = target - &td.omega0 * tau_h - &td.c;
    Ok(pinv(&td.a, 1e-12) * rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gains() -> Gains {
        Gains::diagonal(&[1.0; 6], &[2.0; 6], &[3.0, 3.0, 3.0, 4.0, 4.0, 4.0], 1e-9).unwrap()
    }

    #[test]
    fn gains_validation() {
        assert!(Gains::diagonal(&[1.0; 6], &[1.0; 6], &[0.0; 6], 1e-9).is_err());
        assert!(Gains::diagonal(&[1.0; 6], &[1.0; 6], &[1.0; 6], 0.0).is_err());
        let mut g = gains();
        g.kp[(0, 1)] = 0.5;
        assert!(g.validate().is_err());
    }

    #[test]
    fn alpha_parallel_orthogonal_and_zero() {
        let chi = DVector::from_vec(vec![3.0, 0.0, 4.0, 0.0, 0.0, 0.0]);
        let unit = &chi / 5.0;
        let (a, b) = alpha_decomposition(&(2.0 * &unit), &chi, 1e-9);
        assert_relative_eq!(a, 2.0, epsilon = 1e-15);
        assert_relative_eq!(b, 0.0, epsilon = 1e-15);
        let ortho = DVector::from_vec(vec![0.0, 7.0, 0.0, 0.0, 0.0, 0.0]);
        let (a, b) = alpha_decomposition(&ortho, &chi, 1e-9);
        assert_eq!(a, 0.0);
        assert_relative_eq!(b, 7.0, epsilon = 1e-15);
        let (a, b) = alpha_decomposition(&ortho, &DVector::zeros(6), 1e-9);
        assert_eq!((a, b), (0.0, 7.0));
    }

    #[test]
    fn lyapunov_cases() {
        let g = gains();
        let z = DVector::zeros(6);
        assert_eq!(lyapunov_eval(&g, &z, &z, 0.0), (0.0, 0.0));
        let mut chi = DVector::zeros(6);
        chi[0] = 1.0;
        let (v, vdot) = lyapunov_eval(&g, &chi, &z, 5.0);
        assert_eq!(v, 0.5);
        assert_eq!(vdot, -3.0);
        let (_, vdot) = lyapunov_eval(&g, &chi, &z, -5.0);
        assert_eq!(vdot, -3.0 - 5.0);
    }

    proptest! {
        #[test]
        fn alpha_reconstruction_and_scaling(
            w in prop::collection::vec(-5.0..5.0f64, 6),
            e in prop::collection::vec(-5.0..5.0f64, 6),
            c in -4.0..4.0f64,
        ) {
            let w = DVector::from_vec(w);
            let e = DVector::from_vec(e);
            prop_assume!(e.norm() > 1e-6);
            let (a, b) = alpha_decomposition(&w, &e, 1e-9);
            let unit = &e / e.norm();
            let beta = &w - a * &unit;
            prop_assert!(beta.dot(&unit).abs() <= 1e-12 * (1.0 + w.norm()));
            prop_assert!((beta.norm() - b).abs() <= 1e-12 * (1.0 + w.norm()));
            let (ac, _) = alpha_decomposition(&(c * &w), &e, 1e-9);
            prop_assert!((ac - c * a).abs() <= 1e-12 * (1.0 + a.abs() * c.abs()));
        }

        #[test]
        fn lyapunov_rate_never_positive(
            e in prop::collection::vec(-5.0..5.0f64, 6),
            i in prop::collection::vec(-5.0..5.0f64, 6),
            alpha in -10.0..10.0f64,
        ) {
            let g = gains();
            let (v, vdot) = lyapunov_eval(&g, &DVector::from_vec(e), &DVector::from_vec(i), alpha);
            prop_assert!(v >= 0.0);
            prop_assert!(vdot <= 0.0);
        }
    }

    #[test]
    fn law_is_exact_on_synthetic_matrices() {
        // Δ 6×9 full row rank, arbitrary Λ, Ω
        let delta = DMatrix::from_fn(6, 9, |r, c| {
            ((r * 9 + c) as f64 * 0.7).sin() + if r == c { 2.0 } else { 0.0 }
        });
        let omega = DMatrix::from_fn(6, 4, |r, c| ((r + 3 * c) as f64).cos());
        let lambda = DVector::from_fn(6, |r, _| r as f64 - 2.5);
        let dl = DeltaLambda {
            delta: delta.clone(),
            lambda: lambda.clone(),
            omega: omega.clone(),
        };
        let g = gains();
        let chi = DVector::from_fn(6, |r, _| 0.3 * r as f64 - 0.4);
        let integral = DVector::from_element(6, 0.1);
        let tau_h = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let tau0 = DVector::from_fn(9, |r, _| (r as f64).sqrt());
        let d = partner_aware_torques(&dl, &chi, &integral, &g, &tau_h, &tau0, 1e6).unwrap();
        // V̇ = χ̃ᵀ(Ωτ_H + Δτ_R + Λ)
        let vdot = chi.dot(&(&omega * &tau_h + &delta * &d.tau_r + &lambda));
        assert_relative_eq!(vdot, d.vdot_predicted, epsilon = 1e-9, max_relative = 1e-9);
        // null-space torque leaves Δτ unchanged
        let d0 = partner_aware_torques(&dl, &chi, &integral, &g, &tau_h, &DVector::zeros(9), 1e6).unwrap();
        assert!((&delta * (&d.tau_r - &d0.tau_r)).norm() < 1e-10);
        // α > 0 vs α = 0 differ by −Δ†(α χ̂)
        let unit = &chi / chi.norm();
        let th0 = DVector::zeros(4);
        let without = partner_aware_torques(&dl, &chi, &integral, &g, &th0, &tau0, 1e6).unwrap();
        let sign = if d.alpha > 0.0 { 1.0 } else { -1.0 };
        let th = sign * &tau_h;
        let with = partner_aware_torques(&dl, &chi, &integral, &g, &th, &tau0, 1e6).unwrap();
        assert!(with.alpha > 0.0);
        let diff = &with.tau_r - &without.tau_r;
        let expect = -damped_pinv(&delta, PINV_DAMPING) * (with.alpha * unit);
        assert_relative_eq!(diff, expect, epsilon = 1e-10);
    }

    #[test]
    fn zero_error_gives_pure_feedforward() {
        let delta = DMatrix::from_fn(6, 8, |r, c| {
            if r == c {
                1.0 + r as f64
            } else {
                0.1 * (r as f64 - c as f64)
            }
        });
        let lambda = DVector::from_fn(6, |r, _| 1.0 + r as f64);
        let dl = DeltaLambda {
            delta: delta.clone(),
            lambda: lambda.clone(),
            omega: DMatrix::zeros(6, 2),
        };
        let z = DVector::zeros(6);
        let d = partner_aware_torques(&dl, &z, &z, &gains(), &DVector::zeros(2), &DVector::zeros(8), 1e6).unwrap();
        assert_relative_eq!(d.tau_r, -damped_pinv(&delta, PINV_DAMPING) * lambda, epsilon = 1e-12);
        assert_eq!(d.alpha, 0.0);
    }

    #[test]
    fn rank_deficient_delta_is_rejected() {
        let mut delta = DMatrix::from_fn(6, 8, |r, c| if r == c { 1.0 } else { 0.0 });
        delta.row_mut(5).fill(0.0);
        let dl = DeltaLambda {
            delta,
            lambda: DVector::zeros(6),
            omega: DMatrix::zeros(6, 1),
        };
        let z = DVector::zeros(6);
        let err = partner_aware_torques(&dl, &z, &z, &gains(), &DVector::zeros(1), &DVector::zeros(8), 1e6);
        assert!(matches!(err, Err(ControlError::RankDeficient { .. })));
    }
}
