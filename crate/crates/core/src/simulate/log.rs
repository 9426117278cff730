use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use super::machine::MachineState;
use super::SimError;
use crate::coupled::ContactSpec;
use crate::multibody::MultibodyModel;

/// Largest finite-difference `V̇` that still counts as non-increasing.
pub const VDOT_TOLERANCE: f64 = 1e-6;

/// Relative `V̇` agreement is only judged where `‖χ̃‖` exceeds this.
const MISMATCH_FLOOR: f64 = 1e-6;

/// Fixed 6-column slots for every contact that is active in any state, so
/// the CSV layout does not change at switches. Inactive slots read zero.
#[derive(Clone, Debug, PartialEq)]
pub struct WrenchColumns {
    pub labels: Vec<String>,
}

impl WrenchColumns {
    pub fn new(sets: &[ContactSpec]) -> Self {
        let mut labels: Vec<String> = Vec::new();
        for set in sets {
            for l in wrench_order(set) {
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
        }
        Self { labels }
    }

    /// Spreads `f*` of the active set into the fixed slots.
    pub fn scatter(&self, active: &ContactSpec, f_star: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; 6 * self.labels.len()];
        for (k, l) in wrench_order(active).iter().enumerate() {
            let slot = self
                .labels
                .iter()
                .position(|x| x == l)
                .expect("contact missing from column map");
            out[6 * slot..6 * slot + 6].copy_from_slice(&f_star.as_slice()[6 * k..6 * k + 6]);
        }
        out
    }
}

/// Contact labels in `f*` order: mutual, human-env, robot-env.
fn wrench_order(spec: &ContactSpec) -> Vec<String> {
    let mut labels = spec.labels();
    if spec.mutual.is_some() {
        let m = labels.pop().unwrap();
        labels.insert(0, m);
    }
    labels
}

/// One logged step. Vectors are flattened in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub state: MachineState,
    pub q_human: Vec<f64>,
    pub nu_human: Vec<f64>,
    pub q_robot: Vec<f64>,
    pub nu_robot: Vec<f64>,
    pub tau_h: Vec<f64>,
    pub tau_r: Vec<f64>,
    pub f_star: Vec<f64>,
    pub chi: Vec<f64>,
    pub chi_d: Vec<f64>,
    pub chi_err: Vec<f64>,
    pub integral: Vec<f64>,
    pub alpha: f64,
    pub beta_norm: f64,
    pub v: f64,
    pub vdot_predicted: f64,
    pub vdot_fd: f64,
    pub constraint_residual: f64,
    pub position_drift: f64,
    pub rotation_drift: f64,
    pub hand_wrench: f64,
    pub feet_wrench: f64,
    pub delta_cond: f64,
}

const CHI: [&str; 6] = ["px", "py", "pz", "lx", "ly", "lz"];
const WRENCH: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];

impl LogRecord {
    pub fn header(human: &MultibodyModel, robot: &MultibodyModel, columns: &WrenchColumns) -> Vec<String> {
        let mut h = vec!["t".to_string(), "state".to_string()];
        let config = |prefix: &str, model: &MultibodyModel, h: &mut Vec<String>| {
            for c in ["x", "y", "z", "rx", "ry", "rz"] {
                h.push(format!("{prefix}_base_{c}"));
            }
            for name in joint_names(model) {
                h.push(format!("{prefix}_{name}"));
            }
        };
        config("q_human", human, &mut h);
        config("nu_human", human, &mut h);
        config("q_robot", robot, &mut h);
        config("nu_robot", robot, &mut h);
        h.extend(joint_names(human).map(|n| format!("tau_h_{n}")));
        h.extend(joint_names(robot).map(|n| format!("tau_r_{n}")));
        for l in &columns.labels {
            h.extend(WRENCH.iter().map(|c| format!("f_{l}_{c}")));
        }
        for prefix in ["chi", "chi_d", "chi_err", "integral"] {
            h.extend(CHI.iter().map(|c| format!("{prefix}_{c}")));
        }
        h.extend(
            [
                "alpha",
                "beta_norm",
                "v",
                "vdot_predicted",
                "vdot_fd",
                "constraint_residual",
                "position_drift",
                "rotation_drift",
                "hand_wrench",
                "feet_wrench",
                "delta_cond",
            ]
            .map(String::from),
        );
        h
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![self.t];
        for v in [
            &self.q_human,
            &self.nu_human,
            &self.q_robot,
            &self.nu_robot,
            &self.tau_h,
            &self.tau_r,
            &self.f_star,
            &self.chi,
            &self.chi_d,
            &self.chi_err,
            &self.integral,
        ] {
            out.extend_from_slice(v);
        }
        out.extend_from_slice(&[
            self.alpha,
            self.beta_norm,
            self.v,
            self.vdot_predicted,
            self.vdot_fd,
            self.constraint_residual,
            self.position_drift,
            self.rotation_drift,
            self.hand_wrench,
            self.feet_wrench,
            self.delta_cond,
        ]);
        out
    }

    pub fn chi_err_norm(&self) -> f64 {
        self.chi_err.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Relative gap between the measured and the certified Lyapunov rate.
    pub fn vdot_mismatch(&self) -> Option<f64> {
        (self.chi_err_norm() > MISMATCH_FLOOR)
            .then(|| (self.vdot_fd - self.vdot_predicted).abs() / self.vdot_predicted.abs().max(f64::MIN_POSITIVE))
    }
}

fn joint_names(model: &MultibodyModel) -> impl Iterator<Item = &str> {
    model
        .links
        .iter()
        .enumerate()
        .filter(|(i, _)| model.dof_index(*i).is_some())
        .map(|(_, l)| l.name.as_str())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transition {
    pub t: f64,
    pub from: String,
    pub to: String,
    pub contact_changes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub status: String,
    pub error: Option<String>,
    pub steps: usize,
    pub final_state: Option<String>,
    pub transitions: Vec<Transition>,
    pub contact_switches: usize,
    pub peak_chi_err: f64,
    pub final_chi_err: f64,
    /// Mean `‖χ̃‖` over the last 0.5 s.
    pub final_window_chi_err: f64,
    /// `∫‖χ̃‖ dt` by the rectangle rule.
    pub chi_err_integral: f64,
    pub chi_err_at_s2_entry: Option<f64>,
    pub max_constraint_residual: f64,
    pub max_position_drift: f64,
    pub max_rotation_drift: f64,
    pub max_vdot_fd: f64,
    pub vdot_violations: usize,
    pub max_vdot_mismatch: f64,
    pub alpha_negative_fraction: f64,
    pub max_delta_condition: f64,
    pub effective_config: serde_json::Value,
}

impl Summary {
    pub fn from_records(
        records: &[LogRecord],
        transitions: &[Transition],
        failure: Option<&SimError>,
        dt: f64,
        effective_config: serde_json::Value,
    ) -> Self {
        let norms: Vec<f64> = records.iter().map(LogRecord::chi_err_norm).collect();
        let max = |f: &dyn Fn(&LogRecord) -> f64| records.iter().map(f).fold(0.0f64, f64::max);
        let window = ((0.5 / dt).round() as usize).clamp(1, norms.len().max(1));
        let tail = &norms[norms.len().saturating_sub(window)..];
        let s2_entry = records
            .iter()
            .zip(&norms)
            .find(|(r, _)| r.state >= MachineState::S2)
            .map(|(_, n)| *n);
        Self {
            status: if failure.is_some() { "failed" } else { "ok" }.into(),
            error: failure.map(|e| e.to_string()),
            steps: records.len(),
            final_state: transitions
                .last()
                .map(|t| t.to.clone())
                .or_else(|| records.first().map(|r| r.state.to_string())),
            transitions: transitions.to_vec(),
            contact_switches: transitions.iter().map(|t| t.contact_changes).sum(),
            peak_chi_err: norms.iter().copied().fold(0.0, f64::max),
            final_chi_err: norms.last().copied().unwrap_or(0.0),
            final_window_chi_err: if tail.is_empty() {
                0.0
            } else {
                tail.iter().sum::<f64>() / tail.len() as f64
            },
            chi_err_integral: norms.iter().fold(0.0, |a, b| a + b) * dt,
            chi_err_at_s2_entry: s2_entry,
            max_constraint_residual: max(&|r| r.constraint_residual),
            max_position_drift: max(&|r| r.position_drift),
            max_rotation_drift: max(&|r| r.rotation_drift),
            max_vdot_fd: records.iter().map(|r| r.vdot_fd).reduce(f64::max).unwrap_or(0.0),
            vdot_violations: records.iter().filter(|r| r.vdot_fd > VDOT_TOLERANCE).count(),
            max_vdot_mismatch: max(&|r| r.vdot_mismatch().unwrap_or(0.0)),
            alpha_negative_fraction: if records.is_empty() {
                0.0
            } else {
                records.iter().filter(|r| r.alpha < 0.0).count() as f64 / records.len() as f64
            },
            max_delta_condition: max(&|r| r.delta_cond),
            effective_config,
        }
    }
}

/// Everything one scenario run produces.
#[derive(Debug)]
pub struct ScenarioRun {
    pub header: Vec<String>,
    pub records: Vec<LogRecord>,
    pub summary: Summary,
    pub failure: Option<SimError>,
}

impl ScenarioRun {
    /// CSV with 17 significant digits; the state column holds its index.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.records {
            let vals = r.values();
            let mut row = Vec::with_capacity(vals.len() + 1);
            row.push(format!("{:.16e}", vals[0]));
            row.push(r.state.index().to_string());
            row.extend(vals[1..].iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e))
}
