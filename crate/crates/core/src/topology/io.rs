use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ObjectObservation, TopologyError};
use crate::spatial::{exp_so3, log_so3, Force6, Motion6, Transform, Vec3};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointColumns {
    pub q: String,
    pub qd: String,
}

/// Column map stored next to the CSV as `<stem>.columns.json`. Base pose
/// columns are position then rotation vector; twists and wrenches are
/// linear then angular.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationColumns {
    pub t: String,
    pub base_pose: [String; 6],
    pub base_twist: [String; 6],
    /// Per joint, the columns of candidate 0 and candidate 1.
    pub joints: Vec<[JointColumns; 2]>,
    pub grasps: Vec<[String; 6]>,
}

fn six(prefix: &str, names: [&str; 6]) -> [String; 6] {
    names.map(|n| format!("{prefix}_{n}"))
}

impl ObservationColumns {
    pub fn standard(n_joints: usize, n_grasps: usize) -> Self {
        Self {
            t: "t".into(),
            base_pose: six("base", ["x", "y", "z", "rx", "ry", "rz"]),
            base_twist: six("base", ["vx", "vy", "vz", "wx", "wy", "wz"]),
            joints: (0..n_joints)
                .map(|j| {
                    [0, 1].map(|c| JointColumns {
                        q: format!("q{j}_c{c}"),
                        qd: format!("qd{j}_c{c}"),
                    })
                })
                .collect(),
            grasps: (0..n_grasps)
                .map(|g| six(&format!("grasp{g}"), ["fx", "fy", "fz", "mx", "my", "mz"]))
                .collect(),
        }
    }

    fn ordered(&self) -> Vec<&str> {
        let mut out = vec![self.t.as_str()];
        out.extend(self.base_pose.iter().map(String::as_str));
        out.extend(self.base_twist.iter().map(String::as_str));
        for j in &self.joints {
            for c in j {
                out.push(&c.q);
                out.push(&c.qd);
            }
        }
        for g in &self.grasps {
            out.extend(g.iter().map(String::as_str));
        }
        out
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("observations");
    csv.with_file_name(format!("{stem}.columns.json"))
}

fn io_err(e: impl std::fmt::Display) -> TopologyError {
    TopologyError::Io(e.to_string())
}

/// Writes the CSV (17 significant digits) and its column sidecar.
pub fn write_observations(path: &Path, observations: &[ObjectObservation]) -> Result<(), TopologyError> {
    let (nj, ng) = observations
        .first()
        .map(|o| (o.q.len(), o.grasp_wrenches.len()))
        .unwrap_or((0, 0));
    let cols = ObservationColumns::standard(nj, ng);
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(cols.ordered()).map_err(io_err)?;
    for o in observations {
        if o.q.len() != nj || o.qd.len() != nj || o.grasp_wrenches.len() != ng {
            return Err(TopologyError::Dimension(format!("sample at t = {} changes shape", o.t)));
        }
        let rv = log_so3(&o.base_pose.rotation);
        let mut row = vec![o.t];
        row.extend(o.base_pose.translation.iter().chain(rv.iter()));
        row.extend_from_slice(o.base_twist.to_vector().as_slice());
        for (q, qd) in o.q.iter().zip(&o.qd) {
            row.extend_from_slice(&[q[0], qd[0], q[1], qd[1]]);
        }
        for f in &o.grasp_wrenches {
            row.extend_from_slice(f.to_vector().as_slice());
        }
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    let text = serde_json::to_string_pretty(&cols).map_err(io_err)?;
    std::fs::write(sidecar_path(path), text + "\n").map_err(io_err)?;
    Ok(())
}

/// Reads observations using the `<stem>.columns.json` sidecar.
pub fn read_observations(path: &Path) -> Result<Vec<ObjectObservation>, TopologyError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| io_err(format!("{}: {e}", side.display())))?;
    let cols: ObservationColumns =
        serde_json::from_str(&text).map_err(|e| io_err(format!("{}: {e}", side.display())))?;
    let mut r = csv::Reader::from_path(path).map_err(io_err)?;
    let header: HashMap<String, usize> = r
        .headers()
        .map_err(io_err)?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let index = |name: &str| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| io_err(format!("column '{name}' declared in the sidecar is missing")))
    };
    let idx6 = |names: &[String; 6]| -> Result<[usize; 6], TopologyError> {
        let mut out = [0; 6];
        for (o, n) in out.iter_mut().zip(names) {
            *o = index(n)?;
        }
        Ok(out)
    };
    let t_col = index(&cols.t)?;
    let pose_cols = idx6(&cols.base_pose)?;
    let twist_cols = idx6(&cols.base_twist)?;
    let joint_cols = cols
        .joints
        .iter()
        .map(|j| Ok([[index(&j[0].q)?, index(&j[0].qd)?], [index(&j[1].q)?, index(&j[1].qd)?]]))
        .collect::<Result<Vec<_>, TopologyError>>()?;
    let grasp_cols = cols.grasps.iter().map(idx6).collect::<Result<Vec<_>, _>>()?;

    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(io_err)?;
        let get = |i: usize| -> Result<f64, TopologyError> {
            rec.get(i)
                .ok_or_else(|| io_err(format!("row {} is short", line + 2)))?
                .trim()
                .parse()
                .map_err(|e| io_err(format!("row {}: {e}", line + 2)))
        };
        let v6 = |c: &[usize; 6]| -> Result<[f64; 6], TopologyError> {
            let mut o = [0.0; 6];
            for (x, &i) in o.iter_mut().zip(c) {
                *x = get(i)?;
            }
            Ok(o)
        };
        let pose = v6(&pose_cols)?;
        let twist = v6(&twist_cols)?;
        let mut q = Vec::with_capacity(joint_cols.len());
        let mut qd = Vec::with_capacity(joint_cols.len());
        for j in &joint_cols {
            q.push([get(j[0][0])?, get(j[1][0])?]);
            qd.push([get(j[0][1])?, get(j[1][1])?]);
        }
        let grasp_wrenches = grasp_cols
            .iter()
            .map(|c| v6(c).map(|f| Force6::new(Vec3::new(f[0], f[1], f[2]), Vec3::new(f[3], f[4], f[5]))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ObjectObservation {
            t: get(t_col)?,
            base_pose: Transform::new(
                exp_so3(&Vec3::new(pose[3], pose[4], pose[5])),
                Vec3::new(pose[0], pose[1], pose[2]),
            ),
            base_twist: Motion6::new(
                Vec3::new(twist[0], twist[1], twist[2]),
                Vec3::new(twist[3], twist[4], twist[5]),
            ),
            q,
            qd,
            grasp_wrenches,
        });
    }
    Ok(out)
}
