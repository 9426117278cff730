use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Quintic minimum-jerk segment from `x0` to `xf` over `duration` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinJerkSpec {
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    pub duration: f64,
}

impl MinJerkSpec {
    pub fn new(x0: Vec<f64>, xf: Vec<f64>, duration: f64) -> Result<Self, String> {
        if x0.len() != xf.len() {
            return Err(format!("endpoints have {} and {} entries", x0.len(), xf.len()));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(format!("duration must be positive, got {duration}"));
        }
        Ok(Self { x0, xf, duration })
    }

    /// A segment that stays at `x` forever.
    pub fn hold(x: Vec<f64>) -> Self {
        Self {
            xf: x.clone(),
            x0: x,
            duration: 1.0,
        }
    }
}

/// Position, velocity and acceleration at time `t` (clamped to the endpoints).
pub fn min_jerk_eval(spec: &MinJerkSpec, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let big_t = spec.duration;
    let tau = (t / big_t).clamp(0.0, 1.0);
    let (s, ds, dds) = if tau >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = tau * tau;
        let t3 = t2 * tau;
        (
            t3 * (10.0 - 15.0 * tau + 6.0 * t2),
            t2 * (30.0 - 60.0 * tau + 30.0 * t2) / big_t,
            tau * (60.0 - 180.0 * tau + 120.0 * t2) / (big_t * big_t),
        )
    };
    let x0 = DVector::from_column_slice(&spec.x0);
    let d = DVector::from_column_slice(&spec.xf) - &x0;
    if tau >= 1.0 {
        return (
            DVector::from_column_slice(&spec.xf),
            DVector::zeros(d.len()),
            DVector::zeros(d.len()),
        );
    }
    (x0 + &d * s, &d * ds, &d * dds)
}
