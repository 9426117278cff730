use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coupled::ContactSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MachineState {
    S1,
    S2,
    S3,
    S4,
    Done,
}

impl MachineState {
    pub fn index(self) -> u8 {
        match self {
            MachineState::S1 => 1,
            MachineState::S2 => 2,
            MachineState::S3 => 3,
            MachineState::S4 => 4,
            MachineState::Done => 5,
        }
    }
}

impl fmt::Display for MachineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Transition thresholds (newtons). A threshold counts as crossed once the
/// signal exceeds it by the hysteresis fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub hand_wrench_threshold: f64,
    pub feet_threshold_1: f64,
    pub feet_threshold_2: f64,
    #[serde(default = "default_hysteresis")]
    pub hysteresis: f64,
}

fn default_hysteresis() -> f64 {
    0.05
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("hand_wrench_threshold", self.hand_wrench_threshold),
            ("feet_threshold_1", self.feet_threshold_1),
            ("feet_threshold_2", self.feet_threshold_2),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(self.hysteresis >= 0.0) {
            return Err("hysteresis must be non-negative".into());
        }
        Ok(())
    }
}

/// Four-state stand-up sequencer.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMachine {
    pub state: MachineState,
    pub thresholds: Thresholds,
    /// Contact sets of S1..S4 (Done keeps S4's).
    pub contact_sets: [ContactSpec; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MachineStep {
    pub state: MachineState,
    pub contacts: ContactSpec,
    pub transitioned: bool,
}

impl StateMachine {
    pub fn new(thresholds: Thresholds, contact_sets: [ContactSpec; 4]) -> Result<Self, String> {
        thresholds.validate()?;
        Ok(Self {
            state: MachineState::S1,
            thresholds,
            contact_sets,
        })
    }

    pub fn contacts(&self) -> &ContactSpec {
        let i = (self.state.index().min(4) - 1) as usize;
        &self.contact_sets[i]
    }
}

/// Advances at most one state. `reference_done` ends S4.
pub fn machine_step(sm: &mut StateMachine, hand_wrench: f64, feet_wrench: f64, reference_done: bool) -> MachineStep {
    let band = 1.0 + sm.thresholds.hysteresis;
    let th = &sm.thresholds;
    let next = match sm.state {
        MachineState::S1 if hand_wrench > th.hand_wrench_threshold * band => Some(MachineState::S2),
        MachineState::S2 if feet_wrench > th.feet_threshold_1 * band => Some(MachineState::S3),
        MachineState::S3 if feet_wrench > th.feet_threshold_2 * band => Some(MachineState::S4),
        MachineState::S4 if reference_done => Some(MachineState::Done),
        _ => None,
    };
    if let Some(s) = next {
        sm.state = s;
    }
    MachineStep {
        state: sm.state,
        contacts: sm.contacts().clone(),
        transitioned: next.is_some(),
    }
}

/// Number of frames whose contact status differs between two sets.
pub fn contact_changes(a: &ContactSpec, b: &ContactSpec) -> usize {
    use std::collections::BTreeSet;
    let set = |c: &ContactSpec| {
        let mut s: BTreeSet<String> = c.env_contacts_human.iter().map(|f| format!("h:{f}")).collect();
        s.extend(c.env_contacts_robot.iter().map(|f| format!("r:{f}")));
        if let Some((h, r)) = &c.mutual {
            s.insert(format!("m:{h}/{r}"));
        }
        s
    };
    set(a).symmetric_difference(&set(b)).count()
}
