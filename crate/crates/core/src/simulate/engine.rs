use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{PartnerMode, Scenario};
use super::log::{LogRecord, ScenarioRun, Summary, Transition, WrenchColumns};
use super::machine::{contact_changes, machine_step, MachineState, StateMachine};
use super::minjerk::{min_jerk_eval, MinJerkSpec};
use super::SimError;
use crate::control::{
    compute_delta_lambda, momentum_reference, momentum_task, partner_aware_torques, Gains, TaskDynamics, TaskReference,
    NULL_RTOL,
};
use crate::coupled::{Agent, CoupledError, CoupledEval, CoupledState, CoupledSystem, Stabilization, WrenchSolution};
use crate::linalg::null_space_projector;
use crate::multibody::{
    bias_forces, center_of_mass, centroidal_momentum_matrix, forward_kinematics, AgentState, MultibodyModel,
};
use crate::spatial::{Transform, Vec3};

/// `V̇ = M⁻¹(Bτ + Jᵀf* − h)` with `f*` resolved under the optional
/// stabilization, together with the wrench solution.
pub fn constrained_forward_dynamics(
    sys: &CoupledSystem,
    st: &CoupledState,
    tau_h: &DVector<f64>,
    tau_r: &DVector<f64>,
    stabilization: Option<&Stabilization>,
) -> Result<(DVector<f64>, WrenchSolution), CoupledError> {
    let eval = CoupledEval::new(sys, st)?;
    let b = stabilization.map(|s| s.term(sys, st, &(&eval.q * &eval.velocity)));
    let sol = eval.resolve(tau_h, tau_r, b.as_ref())?;
    let vdot = eval.acceleration(tau_h, tau_r, &sol.f_star);
    Ok((vdot, sol))
}

/// Semi-implicit Euler: velocity first, then configuration with the new velocity.
pub fn integrate_step(st: &CoupledState, vdot: &DVector<f64>, dt: f64) -> CoupledState {
    let v = st.velocity() + vdot * dt;
    let mut next = st.advance_configuration(&v, dt);
    next.set_velocity(&v);
    next.human.reorthonormalize();
    next.robot.reorthonormalize();
    next
}

/// Initial composite state: robot pose from the configuration, human base
/// placed so that the mutual frames coincide, seeded velocity kick projected
/// onto the S1 constraints.
pub fn initial_state(sc: &Scenario) -> Result<CoupledState, SimError> {
    let c = &sc.config;
    let mut robot = AgentState::zero(&sc.robot);
    robot.set_base_pose(&Transform::from_rpy_xyz(
        c.initial.robot_base_rpy,
        c.initial.robot_base_xyz,
    ));
    robot.s = DVector::from_column_slice(&c.initial.robot_joints);
    let mut human = AgentState::zero(&sc.human);
    human.s = DVector::from_column_slice(&c.initial.human_joints);
    let (hf, rf) = c
        .contacts
        .s1
        .mutual
        .clone()
        .ok_or_else(|| SimError::Config("contacts.s1 must declare the mutual contact".into()))?;
    let kr = forward_kinematics(&sc.robot, &robot);
    let robot_hand = kr.frame_pose(&sc.robot.frame(&rf)?);
    let kh = forward_kinematics(&sc.human, &human);
    let human_hand = kh.frame_pose(&sc.human.frame(&hf)?);
    human.set_base_pose(&(robot_hand * human_hand.inverse()));
    human.reorthonormalize();

    let mut st = CoupledState { human, robot };
    let half = c.initial.velocity_perturbation;
    if half > 0.0 {
        let sys = CoupledSystem::assemble(sc.human.clone(), sc.robot.clone(), c.contacts.s1.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let kick = DVector::from_fn(sys.dim(), |_, _| rng.gen_range(-half..half));
        let eval = CoupledEval::new(&sys, &st)?;
        st.set_velocity(&eval.project_velocity(&kick));
    }
    Ok(st)
}

struct ComReference {
    spec: MinJerkSpec,
    start: f64,
    final_segment: bool,
}

impl ComReference {
    fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        min_jerk_eval(&self.spec, t - self.start)
    }

    fn done(&self, t: f64) -> bool {
        self.final_segment && t - self.start >= self.spec.duration
    }
}

fn anchors_for(
    sys: &CoupledSystem,
    st: &CoupledState,
    previous: &HashMap<(Agent, String), Transform>,
    zeta: f64,
    omega: f64,
) -> (Stabilization, HashMap<(Agent, String), Transform>) {
    let mut stab = Stabilization::capture(sys, st, zeta, omega);
    let mut map = HashMap::new();
    for (i, f) in sys.contacts.env_contacts_human.iter().enumerate() {
        let key = (Agent::Human, f.clone());
        if let Some(a) = previous.get(&key) {
            stab.human_anchors[i] = *a;
        }
        map.insert(key, stab.human_anchors[i]);
    }
    for (i, f) in sys.contacts.env_contacts_robot.iter().enumerate() {
        let key = (Agent::Robot, f.clone());
        if let Some(a) = previous.get(&key) {
            stab.robot_anchors[i] = *a;
        }
        map.insert(key, stab.robot_anchors[i]);
    }
    (stab, map)
}

fn gravity_torques(model: &MultibodyModel, st: &AgentState) -> DVector<f64> {
    let mut still = st.clone();
    still.set_nu(&DVector::zeros(model.nv()));
    let h = bias_forces(model, &still);
    h.rows(6, model.dof()).into_owned()
}

const POSTURE_DAMPING: f64 = 1e-8;

/// Null-space torque `N z` for which the constrained joint accelerations
/// under `tau_task + N z` best match `target` (damped least squares). The
/// posture term thus carries its own gravity load and damps every motion the
/// task leaves free.
fn posture_torque(
    eval: &CoupledEval,
    sol: &WrenchSolution,
    tau_h: &DVector<f64>,
    tau_task: &DVector<f64>,
    null: &DMatrix<f64>,
    target: &DVector<f64>,
) -> DVector<f64> {
    let nr = target.len();
    let rows = eval.nv_human() + 6;
    let accel = |tau_r: &DVector<f64>| {
        let f = &sol.g1 * tau_h + &sol.g2 * tau_r + &sol.g3;
        eval.acceleration(tau_h, tau_r, &f).rows(rows, nr).into_owned()
    };
    let base = accel(tau_task);
    let mut a = DMatrix::zeros(nr, nr);
    for j in 0..nr {
        a.set_column(j, &(accel(&(tau_task + null.column(j))) - &base));
    }
    let at = a.transpose();
    let mut normal = &at * &a;
    let lambda2 = (POSTURE_DAMPING * normal.norm()).max(f64::MIN_POSITIVE);
    for d in 0..nr {
        normal[(d, d)] += lambda2;
    }
    let z = normal
        .cholesky()
        .expect("damped normal matrix is positive definite")
        .solve(&(at * (target - base)));
    null * z
}

/// Microstep central difference of `V` along the continuous flow at one
/// state, torques held: `q ± εV`, `V ± εV̇`, `I ± εχ̃`, `t ± ε`.
#[allow(clippy::too_many_arguments)]
fn lyapunov_rate_fd(
    robot: &MultibodyModel,
    st: &CoupledState,
    vdot: &DVector<f64>,
    integral: &DVector<f64>,
    chi_err: &DVector<f64>,
    gains: &Gains,
    reference: &dyn Fn(f64) -> TaskReference,
    t: f64,
) -> f64 {
    let eps = 1e-6;
    let nh = st.human.s.len() + 6;
    let v = st.velocity();
    let err_at = |sign: f64| {
        let mut s = st
            .robot
            .advance_configuration(&v.rows(nh, v.len() - nh).into_owned(), sign * eps);
        let nu = (v.rows(nh, v.len() - nh) + sign * eps * vdot.rows(nh, v.len() - nh)).into_owned();
        s.set_nu(&nu);
        let chi = centroidal_momentum_matrix(robot, &s) * nu;
        chi - reference(t + sign * eps).chi_d
    };
    let (a, b) = (err_at(1.0), err_at(-1.0));
    let (ip, im) = (integral + eps * chi_err, integral - eps * chi_err);
    let dv = 0.5 * (&a + &b).dot(&(&gains.kd * (&a - &b))) + 0.5 * (&ip + &im).dot(&(&gains.kp * (ip - im)));
    dv / (2.0 * eps)
}

/// Runs the stand-up scenario. Solver failures stop the loop; the records
/// logged so far are kept and the failure is reported in the result.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioRun, SimError> {
    let c = &sc.config;
    let gains = c.gains.gains()?;
    let contact_sets = c.contacts.as_array();
    let mut machine = StateMachine::new(c.machine.thresholds(), contact_sets.clone()).map_err(SimError::Config)?;
    let columns = WrenchColumns::new(&contact_sets);
    let mut st = initial_state(sc)?;
    let mut sys = CoupledSystem::assemble(sc.human.clone(), sc.robot.clone(), c.contacts.s1.clone())?;
    let (mut stab, mut anchor_map) =
        anchors_for(&sys, &st, &HashMap::new(), c.stabilization.zeta, c.stabilization.omega);

    let robot = sc.robot.clone();
    let mass = robot.total_mass();
    let com0 = center_of_mass(&robot, &forward_kinematics(&robot, &st.robot));
    let kin0 = forward_kinematics(&robot, &st.robot);
    let seat_x = kin0.frame_pose(&robot.frame(&c.machine.seat_frame)?).translation.x;
    let feet_x = kin0.frame_pose(&robot.frame(&c.machine.feet_frame)?).translation.x;
    let weight = mass * robot.gravity.norm();

    let mut com_ref = ComReference {
        spec: MinJerkSpec::hold(com0.iter().copied().collect()),
        start: 0.0,
        final_segment: false,
    };
    // posture held by the null-space term; re-captured at every transition
    let mut posture_anchor = st.robot.s.clone();
    let s0_human = st.human.s.clone();
    let partner_ref = c.partner.pull.as_ref().map(|p| {
        let xf: Vec<f64> = s0_human.iter().zip(&p.offset).map(|(a, b)| a + b).collect();
        (
            MinJerkSpec::new(s0_human.iter().copied().collect(), xf, p.duration),
            p.start,
        )
    });
    let partner_ref = match partner_ref {
        Some((Ok(spec), start)) => Some((spec, start)),
        Some((Err(e), _)) => return Err(SimError::Config(e)),
        None => None,
    };

    let mut task = momentum_task();
    let steps = (c.duration / c.dt).round() as usize;
    let mut records = Vec::with_capacity(steps);
    let mut transitions = Vec::new();
    let mut prev_err: Option<DVector<f64>> = None;
    let mut failure = None;

    for k in 0..steps {
        let t = k as f64 * c.dt;
        let step = (|| -> Result<(LogRecord, CoupledState, f64, f64, bool), SimError> {
            let eval = CoupledEval::new(&sys, &st)?;
            let b = stab.term(&sys, &st, &(&eval.q * &eval.velocity));
            let sol = eval.resolve(&DVector::zeros(sc.human.dof()), &DVector::zeros(robot.dof()), Some(&b))?;
            let te = task.evaluate(&robot, &st.robot);
            let reference_at = |time: f64| {
                let (_, v, a) = com_ref.eval(time);
                momentum_reference(mass, &[v[0], v[1], v[2]], &[a[0], a[1], a[2]])
            };
            let reference = reference_at(t);
            let chi_err = &te.chi - &reference.chi_d;
            if let Some(prev) = &prev_err {
                task.integral += (prev + &chi_err) * (0.5 * c.dt);
            }
            let td = TaskDynamics::new(&eval, &sol, &te)?;
            let dl = compute_delta_lambda(&td, &reference, &task.integral, &gains);

            let tau_h = match c.partner.mode {
                PartnerMode::Passive => DVector::zeros(sc.human.dof()),
                PartnerMode::Servo => {
                    let (s_ref, sd_ref) = match &partner_ref {
                        Some((spec, start)) => {
                            let (x, v, _) = min_jerk_eval(spec, (t - start).max(0.0));
                            (x, v)
                        }
                        None => (s0_human.clone(), DVector::zeros(s0_human.len())),
                    };
                    let mut tau = (s_ref - &st.human.s) * c.partner.kp + (sd_ref - &st.human.s_dot) * c.partner.kd;
                    if c.partner.gravity_compensation {
                        tau += gravity_torques(&sc.human, &st.human);
                    }
                    if let Some(r) = &c.partner.release {
                        // relaxed arm: only joint damping survives the release
                        let u = ((t - r.start) / r.duration).clamp(0.0, 1.0);
                        let fade = 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
                        tau = tau * fade - &st.human.s_dot * (r.damping * (1.0 - fade));
                    }
                    if c.partner.assist_gain != 0.0 {
                        tau -= dl.omega.transpose() * &chi_err * c.partner.assist_gain;
                    }
                    tau
                }
            };
            let target = (&posture_anchor - &st.robot.s) * c.posture.kp - &st.robot.s_dot * c.posture.kd;
            let task_only = partner_aware_torques(
                &dl,
                &chi_err,
                &task.integral,
                &gains,
                &tau_h,
                &DVector::zeros(robot.dof()),
                c.gains.max_delta_condition,
            )?;
            let null = null_space_projector(&dl.delta, NULL_RTOL);
            let tau0 = posture_torque(&eval, &sol, &tau_h, &task_only.tau_r, &null, &target);
            let diag = partner_aware_torques(
                &dl,
                &chi_err,
                &task.integral,
                &gains,
                &tau_h,
                &tau0,
                c.gains.max_delta_condition,
            )?;
            let f_star = &sol.g1 * &tau_h + &sol.g2 * &diag.tau_r + &sol.g3;
            let vdot = eval.acceleration(&tau_h, &diag.tau_r, &f_star);
            let residual = (&eval.pv + &eval.q * &vdot + &b).amax();
            let pose_err = stab.pose_error(&sys, &st);
            let (mut pos_drift, mut rot_drift) = (0.0f64, 0.0f64);
            for blk in 0..pose_err.len() / 6 {
                pos_drift = pos_drift.max(pose_err.fixed_rows::<3>(6 * blk).norm());
                rot_drift = rot_drift.max(pose_err.fixed_rows::<3>(6 * blk + 3).norm());
            }
            let vdot_fd = lyapunov_rate_fd(&robot, &st, &vdot, &task.integral, &chi_err, &gains, &reference_at, t);

            let layout = sys.contacts.layout();
            let hand = if layout.mutual > 0 {
                f_star.fixed_rows::<3>(0).norm()
            } else {
                0.0
            };
            let feet = match sys
                .contacts
                .env_contacts_robot
                .iter()
                .position(|f| f == &c.machine.feet_frame)
            {
                Some(i) => f_star.fixed_rows::<3>(layout.f_robot_env().start + 6 * i).norm(),
                None => {
                    let com = center_of_mass(&robot, &forward_kinematics(&robot, &st.robot));
                    weight * ((com.x - seat_x) / (feet_x - seat_x)).clamp(0.0, 1.0)
                }
            };

            let record = LogRecord {
                t,
                state: machine.state,
                q_human: config_vector(&st.human),
                nu_human: st.human.nu().iter().copied().collect(),
                q_robot: config_vector(&st.robot),
                nu_robot: st.robot.nu().iter().copied().collect(),
                tau_h: tau_h.iter().copied().collect(),
                tau_r: diag.tau_r.iter().copied().collect(),
                f_star: columns.scatter(&sys.contacts, &f_star),
                chi: te.chi.iter().copied().collect(),
                chi_d: reference.chi_d.iter().copied().collect(),
                chi_err: chi_err.iter().copied().collect(),
                integral: task.integral.iter().copied().collect(),
                alpha: diag.alpha,
                beta_norm: diag.beta_norm,
                v: diag.v,
                vdot_predicted: diag.vdot_predicted,
                vdot_fd,
                constraint_residual: residual,
                position_drift: pos_drift,
                rotation_drift: rot_drift,
                hand_wrench: hand,
                feet_wrench: feet,
                delta_cond: diag.delta_cond,
            };
            let next = integrate_step(&st, &vdot, c.dt);
            Ok((record, next, hand, feet, com_ref.done(t)))
        })();

        let (record, mut next, hand, feet, ref_done) = match step {
            Ok(v) => v,
            Err(e) => {
                log::error!("step {k} (t = {t:.4}) failed: {e}");
                failure = Some(e);
                break;
            }
        };
        prev_err = Some(DVector::from_column_slice(&record.chi_err));
        records.push(record);

        let from = machine.state;
        let ms = machine_step(&mut machine, hand, feet, ref_done);
        if ms.transitioned {
            let t_next = t + c.dt;
            let changes = contact_changes(&sys.contacts, &ms.contacts);
            log::info!("t = {t_next:.3}: {from} -> {} ({changes} contact changes)", ms.state);
            transitions.push(Transition {
                t: t_next,
                from: from.to_string(),
                to: ms.state.to_string(),
                contact_changes: changes,
            });
            if changes > 0 {
                let switched = (|| -> Result<(), SimError> {
                    sys = sys.with_contacts(ms.contacts.clone())?;
                    let eval = CoupledEval::new(&sys, &next)?;
                    let v = eval.project_velocity(&next.velocity());
                    next.set_velocity(&v);
                    let (s, m) = anchors_for(&sys, &next, &anchor_map, c.stabilization.zeta, c.stabilization.omega);
                    stab = s;
                    anchor_map = m;
                    Ok(())
                })();
                if let Err(e) = switched {
                    failure = Some(e);
                    break;
                }
            }
            let segment = match ms.state {
                MachineState::S2 => Some((&c.com_waypoints.s2, false)),
                MachineState::S3 => Some((&c.com_waypoints.s3, false)),
                MachineState::S4 => Some((&c.com_waypoints.s4, true)),
                _ => None,
            };
            if let Some((seg, final_segment)) = segment {
                let (x, _, _) = com_ref.eval(t_next);
                let x0: Vec<f64> = x.iter().copied().collect();
                let xf: Vec<f64> = x0.iter().zip(&seg.offset).map(|(a, b)| a + b).collect();
                com_ref = ComReference {
                    spec: MinJerkSpec::new(x0, xf, seg.duration).map_err(SimError::Config)?,
                    start: t_next,
                    final_segment,
                };
            }
            posture_anchor = next.robot.s.clone();
            if c.gains.reset_integral_on_transition {
                task.integral.fill(0.0);
            }
        }
        st = next;
    }

    let summary = Summary::from_records(&records, &transitions, failure.as_ref(), c.dt, sc.effective.clone());
    Ok(ScenarioRun {
        header: LogRecord::header(&sc.human, &sc.robot, &columns),
        records,
        summary,
        failure,
    })
}

/// `[base position; base rotation vector; joint positions]`.
fn config_vector(st: &AgentState) -> Vec<f64> {
    let rv: Vec3 = crate::spatial::log_so3(&st.base_rot);
    st.base_pos
        .iter()
        .chain(rv.iter())
        .chain(st.s.iter())
        .copied()
        .collect()
}
