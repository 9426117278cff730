//! Two agents in rigid contact: composite dynamics, constraint Jacobians and
//! closed-form resolution of the interaction and environment wrenches.
//!
//! Composite velocity is `V = [ν_H; ν_R]`. Constraint rows are stacked as
//! `[human-env; robot-env; mutual]` with the mutual block `[J_H, −J_R]`.
//! Wrenches are stacked as `f* = [mutual; human-env; robot-env]`, where the
//! mutual wrench acts on the human and its opposite on the robot.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{damped_pinv, symmetric_eigen_range};
use crate::multibody::{dynamics, forward_kinematics, frame_bias_acceleration, AgentState, Dynamics, MultibodyModel};
use crate::spatial::{log_so3, Transform};

/// Largest accepted condition number of `Q M⁻¹ Qᵀ`.
pub const MAX_GAMMA_CONDITION: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    Human,
    Robot,
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Agent::Human => "human",
            Agent::Robot => "robot",
        })
    }
}

#[derive(Debug, Error)]
pub enum CoupledError {
    #[error("{agent} model has no frame '{frame}'")]
    UnknownFrame { agent: Agent, frame: String },
    #[error("contact '{0}' is declared twice")]
    DuplicateContact(String),
    #[error("contact set [{}] is singular (condition number {condition:.3e})", contacts.join(", "))]
    Singular { contacts: Vec<String>, condition: f64 },
    #[error("{0} mass matrix is not positive definite")]
    MassMatrix(Agent),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Which frames are rigidly attached to the environment or to each other.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    #[serde(default)]
    pub env_contacts_human: Vec<String>,
    #[serde(default)]
    pub env_contacts_robot: Vec<String>,
    /// `(human frame, robot frame)`.
    #[serde(default)]
    pub mutual: Option<(String, String)>,
}

impl ContactSpec {
    pub fn count(&self) -> usize {
        self.env_contacts_human.len() + self.env_contacts_robot.len() + usize::from(self.mutual.is_some())
    }

    /// Contact names in constraint-row order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.env_contacts_human.iter().map(|f| format!("human:{f}")).collect();
        out.extend(self.env_contacts_robot.iter().map(|f| format!("robot:{f}")));
        if let Some((h, r)) = &self.mutual {
            out.push(format!("mutual:{h}/{r}"));
        }
        out
    }

    pub fn layout(&self) -> WrenchLayout {
        WrenchLayout {
            human_env: self.env_contacts_human.len(),
            robot_env: self.env_contacts_robot.len(),
            mutual: usize::from(self.mutual.is_some()),
        }
    }
}

/// Contact counts and the row ranges they occupy in `f*` and in `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WrenchLayout {
    pub human_env: usize,
    pub robot_env: usize,
    pub mutual: usize,
}

impl WrenchLayout {
    pub fn rows(&self) -> usize {
        6 * (self.human_env + self.robot_env + self.mutual)
    }

    pub fn f_mutual(&self) -> Range<usize> {
        0..6 * self.mutual
    }

    pub fn f_human_env(&self) -> Range<usize> {
        let s = 6 * self.mutual;
        s..s + 6 * self.human_env
    }

    pub fn f_robot_env(&self) -> Range<usize> {
        let s = 6 * (self.mutual + self.human_env);
        s..s + 6 * self.robot_env
    }

    pub fn q_human_env(&self) -> Range<usize> {
        0..6 * self.human_env
    }

    pub fn q_robot_env(&self) -> Range<usize> {
        let s = 6 * self.human_env;
        s..s + 6 * self.robot_env
    }

    pub fn q_mutual(&self) -> Range<usize> {
        let s = 6 * (self.human_env + self.robot_env);
        s..s + 6 * self.mutual
    }

    /// Reorders rows from constraint order to wrench order (the permutation `Π`).
    pub fn q_to_f(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        let pairs = [
            (self.q_mutual(), self.f_mutual()),
            (self.q_human_env(), self.f_human_env()),
            (self.q_robot_env(), self.f_robot_env()),
        ];
        for (src, dst) in pairs {
            out.rows_mut(dst.start, dst.len())
                .copy_from(&x.rows(src.start, src.len()));
        }
        out
    }

    /// Inverse of [`q_to_f`](Self::q_to_f).
    pub fn f_to_q(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        let pairs = [
            (self.f_mutual(), self.q_mutual()),
            (self.f_human_env(), self.q_human_env()),
            (self.f_robot_env(), self.q_robot_env()),
        ];
        for (src, dst) in pairs {
            out.rows_mut(dst.start, dst.len())
                .copy_from(&x.rows(src.start, src.len()));
        }
        out
    }
}

/// Configuration and velocity of both agents.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub human: AgentState,
    pub robot: AgentState,
}

impl CoupledState {
    /// Composite velocity `V = [ν_H; ν_R]`.
    pub fn velocity(&self) -> DVector<f64> {
        let (h, r) = (self.human.nu(), self.robot.nu());
        let mut v = DVector::zeros(h.len() + r.len());
        v.rows_mut(0, h.len()).copy_from(&h);
        v.rows_mut(h.len(), r.len()).copy_from(&r);
        v
    }

    pub fn set_velocity(&mut self, v: &DVector<f64>) {
        let nh = self.human.s.len() + 6;
        self.human.set_nu(&v.rows(0, nh).into_owned());
        self.robot.set_nu(&v.rows(nh, v.len() - nh).into_owned());
    }

    pub fn advance_configuration(&self, v: &DVector<f64>, dt: f64) -> Self {
        let nh = self.human.s.len() + 6;
        Self {
            human: self.human.advance_configuration(&v.rows(0, nh).into_owned(), dt),
            robot: self
                .robot
                .advance_configuration(&v.rows(nh, v.len() - nh).into_owned(), dt),
        }
    }
}

/// Human and robot models plus the active contact set.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    pub human: Arc<MultibodyModel>,
    pub robot: Arc<MultibodyModel>,
    pub contacts: ContactSpec,
}

impl CoupledSystem {
    pub fn assemble(
        human: Arc<MultibodyModel>,
        robot: Arc<MultibodyModel>,
        contacts: ContactSpec,
    ) -> Result<Self, CoupledError> {
        let check = |agent: Agent, model: &MultibodyModel, frames: &[&String]| {
            let mut seen = std::collections::HashSet::new();
            for f in frames {
                if !model.has_frame(f) {
                    return Err(CoupledError::UnknownFrame {
                        agent,
                        frame: (*f).clone(),
                    });
                }
                if !seen.insert(*f) {
                    return Err(CoupledError::DuplicateContact(format!("{agent}:{f}")));
                }
            }
            Ok(())
        };
        let mut hf: Vec<&String> = contacts.env_contacts_human.iter().collect();
        let mut rf: Vec<&String> = contacts.env_contacts_robot.iter().collect();
        if let Some((h, r)) = &contacts.mutual {
            hf.push(h);
            rf.push(r);
        }
        check(Agent::Human, &human, &hf)?;
        check(Agent::Robot, &robot, &rf)?;
        Ok(Self { human, robot, contacts })
    }

    /// Same agents with a different contact set.
    pub fn with_contacts(&self, contacts: ContactSpec) -> Result<Self, CoupledError> {
        Self::assemble(self.human.clone(), self.robot.clone(), contacts)
    }

    pub fn nv_human(&self) -> usize {
        self.human.nv()
    }

    pub fn nv_robot(&self) -> usize {
        self.robot.nv()
    }

    /// Composite velocity dimension `n_H + n_R + 12`.
    pub fn dim(&self) -> usize {
        self.nv_human() + self.nv_robot()
    }

    /// Number of rigid contacts (each contributes 6 rows).
    pub fn n_contacts(&self) -> usize {
        self.contacts.count()
    }

    pub fn check_state(&self, st: &CoupledState) -> Result<(), CoupledError> {
        if st.human.s.len() != self.human.dof() || st.robot.s.len() != self.robot.dof() {
            return Err(CoupledError::Dimension(format!(
                "state has {}+{} joints, models have {}+{}",
                st.human.s.len(),
                st.robot.s.len(),
                self.human.dof(),
                self.robot.dof()
            )));
        }
        Ok(())
    }

    /// Constraint Jacobian `Q` (rows in constraint order).
    pub fn constraint_jacobian(&self, st: &CoupledState) -> DMatrix<f64> {
        let layout = self.contacts.layout();
        let (nh, n) = (self.nv_human(), self.dim());
        let mut q = DMatrix::zeros(layout.rows(), n);
        let kh = forward_kinematics(&self.human, &st.human);
        let kr = forward_kinematics(&self.robot, &st.robot);
        let jac = |model: &MultibodyModel, kin: &crate::multibody::Kinematics, name: &str| {
            let f = model.frame(name).expect("frames checked at assembly");
            kin.point_jacobian(model, f.link, &kin.frame_pose(&f).translation)
        };
        let mut row = 0;
        for name in &self.contacts.env_contacts_human {
            q.view_mut((row, 0), (6, nh)).copy_from(&jac(&self.human, &kh, name));
            row += 6;
        }
        for name in &self.contacts.env_contacts_robot {
            q.view_mut((row, nh), (6, n - nh))
                .copy_from(&jac(&self.robot, &kr, name));
            row += 6;
        }
        if let Some((h, r)) = &self.contacts.mutual {
            q.view_mut((row, 0), (6, nh)).copy_from(&jac(&self.human, &kh, h));
            q.view_mut((row, nh), (6, n - nh))
                .copy_from(&(-jac(&self.robot, &kr, r)));
        }
        q
    }

    /// `P V = Q̇ V`, from the frames' velocity-product accelerations.
    pub fn constraint_bias(&self, st: &CoupledState) -> DVector<f64> {
        let layout = self.contacts.layout();
        let mut pv = DVector::zeros(layout.rows());
        let acc = |agent: Agent, name: &str| {
            let (model, state) = match agent {
                Agent::Human => (&*self.human, &st.human),
                Agent::Robot => (&*self.robot, &st.robot),
            };
            frame_bias_acceleration(model, state, name)
                .expect("frames checked at assembly")
                .to_vector()
        };
        let mut row = 0;
        for name in &self.contacts.env_contacts_human {
            pv.fixed_rows_mut::<6>(row).copy_from(&acc(Agent::Human, name));
            row += 6;
        }
        for name in &self.contacts.env_contacts_robot {
            pv.fixed_rows_mut::<6>(row).copy_from(&acc(Agent::Robot, name));
            row += 6;
        }
        if let Some((h, r)) = &self.contacts.mutual {
            pv.fixed_rows_mut::<6>(row)
                .copy_from(&(acc(Agent::Human, h) - acc(Agent::Robot, r)));
        }
        pv
    }

    /// World poses of the constrained frames in constraint order; mutual
    /// contacts contribute the `(human, robot)` pair.
    fn contact_poses(&self, st: &CoupledState) -> (Vec<Transform>, Vec<Transform>, Option<(Transform, Transform)>) {
        let kh = forward_kinematics(&self.human, &st.human);
        let kr = forward_kinematics(&self.robot, &st.robot);
        let pose = |model: &MultibodyModel, kin: &crate::multibody::Kinematics, name: &str| {
            kin.frame_pose(&model.frame(name).expect("frames checked at assembly"))
        };
        let he = self
            .contacts
            .env_contacts_human
            .iter()
            .map(|n| pose(&self.human, &kh, n))
            .collect();
        let re = self
            .contacts
            .env_contacts_robot
            .iter()
            .map(|n| pose(&self.robot, &kr, n))
            .collect();
        let m = self
            .contacts
            .mutual
            .as_ref()
            .map(|(h, r)| (pose(&self.human, &kh, h), pose(&self.robot, &kr, r)));
        (he, re, m)
    }
}

/// `P` and `Q` of `P V + Q V̇ = 0`.
#[derive(Clone, Debug)]
pub struct ConstraintMatrices {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// Builds `Q` directly and `P = Q̇` by a central difference of `Q` along `V`.
pub fn constraint_matrices(sys: &CoupledSystem, st: &CoupledState) -> ConstraintMatrices {
    let q = sys.constraint_jacobian(st);
    let v = st.velocity();
    let scale = 1.0 + v.norm();
    let h = 1e-7 / scale;
    let p = if v.norm() == 0.0 {
        DMatrix::zeros(q.nrows(), q.ncols())
    } else {
        let qp = sys.constraint_jacobian(&st.advance_configuration(&v, h));
        let qm = sys.constraint_jacobian(&st.advance_configuration(&v, -h));
        (qp - qm) / (2.0 * h)
    };
    ConstraintMatrices { p, q }
}

/// Baumgarte feedback on the constraint equation:
/// `P V + Q V̇ = −(2ζω Q V + ω² e)`, where `e` is the pose error of each
/// constrained frame relative to its anchor (or to its mutual partner).
#[derive(Clone, Debug, PartialEq)]
pub struct Stabilization {
    pub zeta: f64,
    pub omega: f64,
    pub human_anchors: Vec<Transform>,
    pub robot_anchors: Vec<Transform>,
}

impl Stabilization {
    /// Anchors every environment contact at its current pose.
    pub fn capture(sys: &CoupledSystem, st: &CoupledState, zeta: f64, omega: f64) -> Self {
        let (he, re, _) = sys.contact_poses(st);
        Self {
            zeta,
            omega,
            human_anchors: he,
            robot_anchors: re,
        }
    }

    /// Stacked pose errors `[Δp; log(R R_refᵀ)]` in constraint order.
    pub fn pose_error(&self, sys: &CoupledSystem, st: &CoupledState) -> DVector<f64> {
        let (he, re, m) = sys.contact_poses(st);
        let mut e = DVector::zeros(6 * sys.n_contacts());
        let mut row = 0;
        let mut push = |cur: &Transform, reference: &Transform| {
            e.fixed_rows_mut::<3>(row)
                .copy_from(&(cur.translation - reference.translation));
            e.fixed_rows_mut::<3>(row + 3)
                .copy_from(&log_so3(&(cur.rotation * reference.rotation.transpose())));
            row += 6;
        };
        for (cur, anchor) in he.iter().zip(&self.human_anchors) {
            push(cur, anchor);
        }
        for (cur, anchor) in re.iter().zip(&self.robot_anchors) {
            push(cur, anchor);
        }
        if let Some((h, r)) = m {
            push(&h, &r);
        }
        e
    }

    /// The stabilizing term `b` added to `P V` (constraint order).
    pub fn term(&self, sys: &CoupledSystem, st: &CoupledState, qv: &DVector<f64>) -> DVector<f64> {
        2.0 * self.zeta * self.omega * qv + self.omega * self.omega * self.pose_error(sys, st)
    }
}

/// Resolved wrenches and their affine dependence on the torques.
#[derive(Clone, Debug)]
pub struct WrenchSolution {
    pub layout: WrenchLayout,
    /// `[mutual; human-env; robot-env]`.
    pub f_star: DVector<f64>,
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub g3: DVector<f64>,
    /// Robot-side selections: `[−mutual; robot-env]` rows.
    pub gbar1: DMatrix<f64>,
    pub gbar2: DMatrix<f64>,
    pub gbar3: DVector<f64>,
}

impl WrenchSolution {
    /// Wrenches acting on the robot, `[−f_mutual; f_robot_env]`.
    pub fn robot_wrenches(&self) -> DVector<f64> {
        robot_rows(
            &self.layout,
            &DMatrix::from_column_slice(self.f_star.len(), 1, self.f_star.as_slice()),
        )
        .column(0)
        .into_owned()
    }

    pub fn mutual(&self) -> Option<DVector<f64>> {
        (self.layout.mutual > 0).then(|| self.f_star.rows(0, 6).into_owned())
    }
}

fn robot_rows(layout: &WrenchLayout, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, re) = (layout.f_mutual(), layout.f_robot_env());
    let mut out = DMatrix::zeros(m.len() + re.len(), x.ncols());
    out.rows_mut(0, m.len()).copy_from(&(-x.rows(m.start, m.len())));
    out.rows_mut(m.len(), re.len()).copy_from(&x.rows(re.start, re.len()));
    out
}

/// Robot-side selections `(Ḡ1, Ḡ2, Ḡ3)` of a solution.
pub fn robot_wrench_terms(sol: &WrenchSolution) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    (sol.gbar1.clone(), sol.gbar2.clone(), sol.gbar3.clone())
}

enum SInverse {
    Cholesky(Cholesky<f64, Dyn>),
    Dense(DMatrix<f64>),
}

impl SInverse {
    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SInverse::Cholesky(c) => c.solve(b),
            SInverse::Dense(inv) => inv * b,
        }
    }
}

/// Everything about one composite state needed to resolve wrenches and
/// accelerations for any torque pair.
pub struct CoupledEval {
    pub layout: WrenchLayout,
    pub human: Dynamics,
    pub robot: Dynamics,
    chol_h: Cholesky<f64, Dyn>,
    chol_r: Cholesky<f64, Dyn>,
    /// Constraint Jacobian `Q`.
    pub q: DMatrix<f64>,
    /// `P V`.
    pub pv: DVector<f64>,
    pub velocity: DVector<f64>,
    /// `M⁻¹ Qᵀ`.
    minv_qt: DMatrix<f64>,
    s_inv: Option<SInverse>,
    /// Condition number of `Q M⁻¹ Qᵀ` (1 without contacts).
    pub condition: f64,
}

impl CoupledEval {
    pub fn new(sys: &CoupledSystem, st: &CoupledState) -> Result<Self, CoupledError> {
        sys.check_state(st)?;
        let layout = sys.contacts.layout();
        let human = dynamics(&sys.human, &st.human);
        let robot = dynamics(&sys.robot, &st.robot);
        let chol_h = human
            .mass_matrix
            .clone()
            .cholesky()
            .ok_or(CoupledError::MassMatrix(Agent::Human))?;
        let chol_r = robot
            .mass_matrix
            .clone()
            .cholesky()
            .ok_or(CoupledError::MassMatrix(Agent::Robot))?;
        let q = sys.constraint_jacobian(st);
        let pv = sys.constraint_bias(st);
        let nh = sys.nv_human();
        let qt = q.transpose();
        let mut minv_qt = DMatrix::zeros(qt.nrows(), qt.ncols());
        minv_qt
            .rows_mut(0, nh)
            .copy_from(&chol_h.solve(&qt.rows(0, nh).into_owned()));
        minv_qt
            .rows_mut(nh, qt.nrows() - nh)
            .copy_from(&chol_r.solve(&qt.rows(nh, qt.nrows() - nh).into_owned()));
        let mut eval = Self {
            layout,
            human,
            robot,
            chol_h,
            chol_r,
            q,
            pv,
            velocity: st.velocity(),
            minv_qt,
            s_inv: None,
            condition: 1.0,
        };
        if layout.rows() > 0 {
            let s = eval.schur();
            let (lo, hi) = symmetric_eigen_range(&s);
            let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            eval.condition = condition;
            if condition > MAX_GAMMA_CONDITION {
                return Err(CoupledError::Singular {
                    contacts: sys.contacts.labels(),
                    condition,
                });
            }
            eval.s_inv = Some(match s.clone().cholesky() {
                Some(c) => SInverse::Cholesky(c),
                None => {
                    log::warn!(
                        "constraint operator not numerically SPD (condition {condition:.3e}); using damped inverse"
                    );
                    let damping = 1e-10 * s.trace() / s.nrows() as f64;
                    SInverse::Dense(damped_pinv(&s, damping / hi.max(f64::MIN_POSITIVE)))
                }
            });
        }
        Ok(eval)
    }

    /// `S = Q M⁻¹ Qᵀ`, so that `Γ = S Πᵀ`.
    pub fn schur(&self) -> DMatrix<f64> {
        let s = &self.q * &self.minv_qt;
        (&s + s.transpose()) * 0.5
    }

    /// `Γ = Q M⁻¹ Jᵀ` with `J` the wrench Jacobian.
    pub fn gamma(&self) -> DMatrix<f64> {
        self.layout.q_to_f(&self.schur().transpose()).transpose()
    }

    /// Wrench Jacobian `J = Π Q` (rows in wrench order).
    pub fn wrench_jacobian(&self) -> DMatrix<f64> {
        self.layout.q_to_f(&self.q)
    }

    pub fn nv_human(&self) -> usize {
        self.human.bias.len()
    }

    pub fn nv_robot(&self) -> usize {
        self.robot.bias.len()
    }

    /// Composite `M⁻¹ x`.
    pub fn minv(&self, x: &DVector<f64>) -> DVector<f64> {
        let nh = self.nv_human();
        let mut out = DVector::zeros(x.len());
        out.rows_mut(0, nh)
            .copy_from(&self.chol_h.solve(&x.rows(0, nh).into_owned()));
        out.rows_mut(nh, x.len() - nh)
            .copy_from(&self.chol_r.solve(&x.rows(nh, x.len() - nh).into_owned()));
        out
    }

    pub fn robot_minv(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol_r.solve(x)
    }

    /// Composite bias `h = [h_H; h_R]`.
    pub fn bias(&self) -> DVector<f64> {
        let nh = self.nv_human();
        let mut h = DVector::zeros(nh + self.nv_robot());
        h.rows_mut(0, nh).copy_from(&self.human.bias);
        h.rows_mut(nh, self.nv_robot()).copy_from(&self.robot.bias);
        h
    }

    /// Generalized force `B τ` for both agents.
    pub fn actuation(&self, tau_h: &DVector<f64>, tau_r: &DVector<f64>) -> DVector<f64> {
        let (nh, nr) = (self.nv_human(), self.nv_robot());
        let mut out = DVector::zeros(nh + nr);
        out.rows_mut(6, nh - 6).copy_from(tau_h);
        out.rows_mut(nh + 6, nr - 6).copy_from(tau_r);
        out
    }

    /// Resolves `f*` for the given torques. `stabilization` is the optional
    /// term `b` (constraint order) added to `P V`.
    pub fn resolve(
        &self,
        tau_h: &DVector<f64>,
        tau_r: &DVector<f64>,
        stabilization: Option<&DVector<f64>>,
    ) -> Result<WrenchSolution, CoupledError> {
        let (nh, nr) = (self.nv_human(), self.nv_robot());
        if tau_h.len() != nh - 6 || tau_r.len() != nr - 6 {
            return Err(CoupledError::Dimension(format!(
                "torques have {}+{} entries, expected {}+{}",
                tau_h.len(),
                tau_r.len(),
                nh - 6,
                nr - 6
            )));
        }
        let rows = self.layout.rows();
        let Some(s_inv) = &self.s_inv else {
            let empty = |c| DMatrix::zeros(0, c);
            return Ok(WrenchSolution {
                layout: self.layout,
                f_star: DVector::zeros(0),
                g1: empty(nh - 6),
                g2: empty(nr - 6),
                g3: DVector::zeros(0),
                gbar1: empty(nh - 6),
                gbar2: empty(nr - 6),
                gbar3: DVector::zeros(0),
            });
        };
        // Q M⁻¹ restricted to each agent's joint columns
        let qminv = self.minv_qt.transpose();
        let qminv_bh = qminv.columns(6, nh - 6).into_owned();
        let qminv_br = qminv.columns(nh + 6, nr - 6).into_owned();
        let g1 = -self.layout.q_to_f(&s_inv.solve(&qminv_bh));
        let g2 = -self.layout.q_to_f(&s_inv.solve(&qminv_br));
        let mut rhs = &qminv * self.bias() - &self.pv;
        if let Some(b) = stabilization {
            rhs -= b;
        }
        let rhs = DMatrix::from_column_slice(rows, 1, rhs.as_slice());
        let g3m = self.layout.q_to_f(&s_inv.solve(&rhs));
        let g3 = g3m.column(0).into_owned();
        let f_star = &g1 * tau_h + &g2 * tau_r + &g3;
        Ok(WrenchSolution {
            layout: self.layout,
            f_star,
            gbar1: robot_rows(&self.layout, &g1),
            gbar2: robot_rows(&self.layout, &g2),
            gbar3: robot_rows(&self.layout, &g3m).column(0).into_owned(),
            g1,
            g2,
            g3,
        })
    }

    /// `V̇ = M⁻¹(B τ + Jᵀ f* − h)`.
    pub fn acceleration(&self, tau_h: &DVector<f64>, tau_r: &DVector<f64>, f_star: &DVector<f64>) -> DVector<f64> {
        let mut gen = self.actuation(tau_h, tau_r) - self.bias();
        if !f_star.is_empty() {
            let fq = self
                .layout
                .f_to_q(&DMatrix::from_column_slice(f_star.len(), 1, f_star.as_slice()));
            gen += self.q.transpose() * fq.column(0);
        }
        self.minv(&gen)
    }

    /// Robot rows of the wrench Jacobian acting on the robot: `[J_R,mutual; J_R,env]`,
    /// paired with [`WrenchSolution::robot_wrenches`].
    pub fn robot_wrench_jacobian(&self) -> DMatrix<f64> {
        let (nh, nr) = (self.nv_human(), self.nv_robot());
        let qr = self.q.columns(nh, nr);
        let (m, re) = (self.layout.q_mutual(), self.layout.q_robot_env());
        let mut out = DMatrix::zeros(m.len() + re.len(), nr);
        // mutual rows of Q hold −J_R
        out.rows_mut(0, m.len()).copy_from(&(-qr.rows(m.start, m.len())));
        out.rows_mut(m.len(), re.len()).copy_from(&qr.rows(re.start, re.len()));
        out
    }

    /// Removes the velocity component that violates the constraints:
    /// `V⁺ = V − M⁻¹Qᵀ S⁻¹ Q V` (the plastic-impact projection in the `M` metric).
    pub fn project_velocity(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.s_inv {
            None => v.clone(),
            Some(s_inv) => {
                let qv = &self.q * v;
                let lam = s_inv.solve(&DMatrix::from_column_slice(qv.len(), 1, qv.as_slice()));
                v - &self.minv_qt * lam.column(0)
            }
        }
    }
}

/// `f*` and its decomposition for the given torques, without stabilization.
pub fn resolve_wrenches(
    sys: &CoupledSystem,
    st: &CoupledState,
    tau_h: &DVector<f64>,
    tau_r: &DVector<f64>,
) -> Result<WrenchSolution, CoupledError> {
    CoupledEval::new(sys, st)?.resolve(tau_h, tau_r, None)
}

/// As [`resolve_wrenches`] with Baumgarte feedback on the constraint equation.
pub fn resolve_wrenches_stabilized(
    sys: &CoupledSystem,
    st: &CoupledState,
    tau_h: &DVector<f64>,
    tau_r: &DVector<f64>,
    stabilization: &Stabilization,
) -> Result<WrenchSolution, CoupledError> {
    let eval = CoupledEval::new(sys, st)?;
    let b = stabilization.term(sys, st, &(&eval.q * &eval.velocity));
    eval.resolve(tau_h, tau_r, Some(&b))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::multibody::fixtures::{branched, random_state};
    use crate::multibody::{frame_twist, load_model};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn fixture_system() -> CoupledSystem {
        let model = Arc::new(branched());
        CoupledSystem::assemble(
            model.clone(),
            model,
            ContactSpec {
                env_contacts_human: vec!["foot".into()],
                env_contacts_robot: vec!["torso".into()],
                mutual: Some(("hand".into(), "hand".into())),
            },
        )
        .unwrap()
    }

    pub(crate) fn fixture_state(sys: &CoupledSystem, seed: u64) -> CoupledState {
        CoupledState {
            human: random_state(&sys.human, seed),
            robot: random_state(&sys.robot, seed + 1000),
        }
    }

    fn random_torques(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0))
    }

    fn single_body() -> Arc<MultibodyModel> {
        Arc::new(
            load_model(
                r#"{"name": "b", "links": [{"name": "body", "parent": null,
                "inertia": {"mass": 3.0, "com": [0.1, 0.0, 0.2], "ixx": 0.1, "iyy": 0.2, "izz": 0.3},
                "frames": [{"name": "com", "xyz": [0.1, 0.0, 0.2]}, {"name": "grip", "xyz": [0.5, 0, 0]}]}]}"#,
            )
            .unwrap(),
        )
    }

    #[test]
    fn dimensions_of_two_single_bodies() {
        let b = single_body();
        let sys = CoupledSystem::assemble(
            b.clone(),
            b,
            ContactSpec {
                env_contacts_human: vec!["com".into()],
                env_contacts_robot: vec!["com".into()],
                mutual: Some(("grip".into(), "grip".into())),
            },
        )
        .unwrap();
        assert_eq!(sys.dim(), 12);
        assert_eq!(sys.n_contacts(), 3);
        assert_eq!(sys.contacts.layout().rows(), 18);
        let dims = fixture_system();
        assert_eq!(dims.dim(), 4 + 4 + 12);
    }

    #[test]
    fn unknown_and_duplicate_frames_are_rejected() {
        let b = single_body();
        let err = CoupledSystem::assemble(
            b.clone(),
            b.clone(),
            ContactSpec {
                env_contacts_robot: vec!["nowhere".into()],
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CoupledError::UnknownFrame {
                agent: Agent::Robot,
                ..
            }
        ));
        let err = CoupledSystem::assemble(
            b.clone(),
            b,
            ContactSpec {
                env_contacts_human: vec!["com".into(), "com".into()],
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, CoupledError::DuplicateContact(_)));
    }

    #[test]
    fn no_contacts_gives_empty_solution() {
        let b = single_body();
        let sys = CoupledSystem::assemble(b.clone(), b, ContactSpec::default()).unwrap();
        let st = CoupledState {
            human: AgentState::zero(&sys.human),
            robot: AgentState::zero(&sys.robot),
        };
        let sol = resolve_wrenches(&sys, &st, &DVector::zeros(0), &DVector::zeros(0)).unwrap();
        assert!(sol.f_star.is_empty());
        assert_eq!(sol.g1.shape(), (0, 0));
        // free fall of both bodies
        let eval = CoupledEval::new(&sys, &st).unwrap();
        let acc = eval.acceleration(&DVector::zeros(0), &DVector::zeros(0), &sol.f_star);
        for off in [0, 6] {
            assert_relative_eq!(acc[off + 2], -9.81, epsilon = 1e-12);
            assert_relative_eq!(acc[off], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pinned_body_carries_its_weight() {
        let b = single_body();
        let sys = CoupledSystem::assemble(
            b.clone(),
            b,
            ContactSpec {
                env_contacts_human: vec!["com".into()],
                ..Default::default()
            },
        )
        .unwrap();
        let st = CoupledState {
            human: AgentState::zero(&sys.human),
            robot: AgentState::zero(&sys.robot),
        };
        let sol = resolve_wrenches(&sys, &st, &DVector::zeros(0), &DVector::zeros(0)).unwrap();
        let expect = [0.0, 0.0, 3.0 * 9.81, 0.0, 0.0, 0.0];
        assert_relative_eq!(sol.f_star.as_slice(), &expect[..], epsilon = 1e-10);
    }

    #[test]
    fn mutual_rows_give_twist_difference() {
        let sys = fixture_system();
        let st = fixture_state(&sys, 3);
        let qv = sys.constraint_jacobian(&st) * st.velocity();
        let diff = frame_twist(&sys.human, &st.human, "hand").unwrap().to_vector()
            - frame_twist(&sys.robot, &st.robot, "hand").unwrap().to_vector();
        let rows = sys.contacts.layout().q_mutual();
        assert_relative_eq!(
            qv.rows(rows.start, 6).into_owned().as_slice(),
            diff.as_slice(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn static_state_has_zero_p_v() {
        let sys = fixture_system();
        let mut st = fixture_state(&sys, 5);
        st.set_velocity(&DVector::zeros(sys.dim()));
        let cm = constraint_matrices(&sys, &st);
        assert_eq!(cm.p.norm(), 0.0);
        assert_eq!(sys.constraint_bias(&st).norm(), 0.0);
    }

    #[test]
    fn p_is_time_derivative_of_q() {
        let sys = fixture_system();
        for seed in 0..5 {
            let st = fixture_state(&sys, 20 + seed);
            let v = st.velocity();
            let cm = constraint_matrices(&sys, &st);
            let pv = sys.constraint_bias(&st);
            assert!((&cm.p * &v - &pv).norm() < 1e-5 * (1.0 + pv.norm()));
            let eps = 1e-5;
            let qp = sys.constraint_jacobian(&st.advance_configuration(&v, eps));
            let qm = sys.constraint_jacobian(&st.advance_configuration(&v, -eps));
            let fd = (qp - qm) * &v / (2.0 * eps);
            assert!((fd - &pv).norm() < 1e-5 * (1.0 + pv.norm()));
        }
    }

    #[test]
    fn resolved_wrenches_satisfy_constraint_and_agent_dynamics() {
        let sys = fixture_system();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let st = fixture_state(&sys, seed);
            let eval = CoupledEval::new(&sys, &st).unwrap();
            let th = random_torques(sys.human.dof(), &mut rng);
            let tr = random_torques(sys.robot.dof(), &mut rng);
            let sol = eval.resolve(&th, &tr, None).unwrap();
            let acc = eval.acceleration(&th, &tr, &sol.f_star);
            let residual = &eval.pv + &eval.q * &acc;
            assert!(residual.norm() < 1e-8, "constraint residual {}", residual.norm());

            // robot dynamics with only the wrenches acting on the robot
            let nh = sys.nv_human();
            let nr = sys.nv_robot();
            let acc_r = acc.rows(nh, nr).into_owned();
            let mut btau = DVector::zeros(nr);
            btau.rows_mut(6, nr - 6).copy_from(&tr);
            let r = &eval.robot.mass_matrix * acc_r + &eval.robot.bias
                - btau
                - eval.robot_wrench_jacobian().transpose() * sol.robot_wrenches();
            assert!(
                r.norm() < 1e-8 * (1.0 + eval.robot.bias.norm()),
                "robot residual {}",
                r.norm()
            );

            // human dynamics with mutual + human-env wrenches
            let jh = eval.wrench_jacobian().columns(0, nh).into_owned();
            let acc_h = acc.rows(0, nh).into_owned();
            let mut btau = DVector::zeros(nh);
            btau.rows_mut(6, nh - 6).copy_from(&th);
            let r = &eval.human.mass_matrix * acc_h + &eval.human.bias - btau - jh.transpose() * &sol.f_star;
            assert!(r.norm() < 1e-8 * (1.0 + eval.human.bias.norm()));
        }
    }

    #[test]
    fn closed_form_matches_direct_gamma_solve() {
        let sys = fixture_system();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = fixture_state(&sys, 9);
        let eval = CoupledEval::new(&sys, &st).unwrap();
        let th = random_torques(sys.human.dof(), &mut rng);
        let tr = random_torques(sys.robot.dof(), &mut rng);
        let sol = eval.resolve(&th, &tr, None).unwrap();
        // direct: Γ f = −[Q M⁻¹ (Bτ − h) + P V], Γ = Q M⁻¹ Jᵀ, solved by LU
        let m = {
            let (nh, n) = (sys.nv_human(), sys.dim());
            let mut m = DMatrix::zeros(n, n);
            m.view_mut((0, 0), (nh, nh)).copy_from(&eval.human.mass_matrix);
            m.view_mut((nh, nh), (n - nh, n - nh))
                .copy_from(&eval.robot.mass_matrix);
            m
        };
        let minv = m.try_inverse().unwrap();
        let j = eval.wrench_jacobian();
        let gamma = &eval.q * &minv * j.transpose();
        assert_relative_eq!(gamma.clone(), eval.gamma(), epsilon = 1e-9, max_relative = 1e-9);
        let rhs = -(&eval.q * &minv * (eval.actuation(&th, &tr) - eval.bias()) + &eval.pv);
        let f = gamma.lu().solve(&rhs).unwrap();
        assert!((f - &sol.f_star).norm() <= 1e-8 * sol.f_star.norm());
    }

    #[test]
    fn schur_operator_is_spd() {
        let sys = fixture_system();
        for seed in 0..5 {
            let eval = CoupledEval::new(&sys, &fixture_state(&sys, seed)).unwrap();
            assert!(eval.schur().cholesky().is_some());
        }
    }

    #[test]
    fn mutual_wrenches_are_equal_and_opposite() {
        let sys = fixture_system();
        let st = fixture_state(&sys, 4);
        let sol = resolve_wrenches(&sys, &st, &DVector::zeros(4), &DVector::zeros(4)).unwrap();
        let on_human = sol.mutual().unwrap();
        let on_robot = sol.robot_wrenches().rows(0, 6).into_owned();
        assert_eq!(on_human + on_robot, DVector::zeros(6));
        // zero torques: robot wrenches are the constant term
        let (_, _, gbar3) = robot_wrench_terms(&sol);
        assert_relative_eq!(sol.robot_wrenches(), gbar3, epsilon = 1e-12);
    }

    #[test]
    fn velocity_projection_satisfies_constraints() {
        let sys = fixture_system();
        let st = fixture_state(&sys, 8);
        let eval = CoupledEval::new(&sys, &st).unwrap();
        let v = eval.project_velocity(&st.velocity());
        assert!((&eval.q * v).norm() < 1e-10);
    }

    #[test]
    fn stabilization_error_is_zero_at_capture() {
        let sys = fixture_system();
        let st = fixture_state(&sys, 8);
        let stab = Stabilization::capture(&sys, &st, 1.0, 20.0);
        let e = stab.pose_error(&sys, &st);
        let env_rows = 12;
        assert_eq!(e.rows(0, env_rows).norm(), 0.0);
        // the mutual frames of a random state do not coincide
        assert!(e.rows(env_rows, 6).norm() > 0.0);
    }

    #[test]
    fn singular_contact_set_is_reported() {
        // the same frame twice through two names on one rigid body makes Q rank deficient
        let b = Arc::new(
            load_model(
                r#"{"name": "b", "links": [{"name": "body", "parent": null,
                "inertia": {"mass": 1.0, "ixx": 0.1, "iyy": 0.1, "izz": 0.1},
                "frames": [{"name": "a"}, {"name": "c", "xyz": [0.1, 0, 0]}]}]}"#,
            )
            .unwrap(),
        );
        let sys = CoupledSystem::assemble(
            b.clone(),
            b,
            ContactSpec {
                env_contacts_human: vec!["a".into(), "c".into()],
                ..Default::default()
            },
        )
        .unwrap();
        let st = CoupledState {
            human: AgentState::zero(&sys.human),
            robot: AgentState::zero(&sys.robot),
        };
        match CoupledEval::new(&sys, &st) {
            Err(CoupledError::Singular { contacts, condition }) => {
                assert_eq!(contacts, ["human:a", "human:c"]);
                assert!(condition > MAX_GAMMA_CONDITION);
            }
            other => panic!("expected singular error, got {:?}", other.map(|e| e.condition)),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn superposition_and_linearity(seed in 0u64..1000, t in prop::collection::vec(-20.0..20.0f64, 12)) {
            let sys = fixture_system();
            let st = fixture_state(&sys, seed);
            let eval = CoupledEval::new(&sys, &st).unwrap();
            let th1 = DVector::from_column_slice(&t[0..4]);
            let th2 = DVector::from_column_slice(&t[4..8]);
            let tr = DVector::from_column_slice(&t[8..12]);
            let z = DVector::zeros(4);
            let f = |a: &DVector<f64>, b: &DVector<f64>| eval.resolve(a, b, None).unwrap().f_star;
            let sol = eval.resolve(&th1, &tr, None).unwrap();
            let expect = &sol.g1 * &th1 + &sol.g2 * &tr + &sol.g3;
            prop_assert!((&sol.f_star - expect).norm() <= 1e-9 * (1.0 + sol.f_star.norm()));
            let lin = f(&(&th1 + &th2), &z) - f(&th1, &z) - f(&th2, &z) + f(&z, &z);
            prop_assert!(lin.norm() <= 1e-9 * (1.0 + f(&th1, &z).norm()));
            // robot-side selection obeys the same superposition
            let rf = &sol.gbar1 * &th1 + &sol.gbar2 * &tr + &sol.gbar3;
            prop_assert!((rf - sol.robot_wrenches()).norm() <= 1e-9 * (1.0 + sol.f_star.norm()));
        }
    }
}
