use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{Mat3, SpatialError, SpatialInertia, Transform, Vec3};

const AXIS_TOL: f64 = 1e-9;

/// Default gravitational acceleration magnitude (m/s²).
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("link '{link}': {reason}")]
    InvalidLink { link: String, reason: String },
    #[error("model: {0}")]
    Invalid(String),
    #[error("unknown frame '{0}'")]
    UnknownFrame(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

/// One-degree-of-freedom joint between a link and its parent.
///
/// `origin` places the joint frame in the parent link frame; the child link frame
/// coincides with the joint frame displaced by the joint motion along/about `axis`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointModel {
    pub kind: JointKind,
    pub axis: Vec3,
    pub origin: Transform,
}

impl JointModel {
    pub fn fixed(origin: Transform) -> Self {
        Self {
            kind: JointKind::Fixed,
            axis: Vec3::z(),
            origin,
        }
    }

    pub fn revolute(axis: Vec3, origin: Transform) -> Self {
        Self {
            kind: JointKind::Revolute,
            axis,
            origin,
        }
    }

    pub fn prismatic(axis: Vec3, origin: Transform) -> Self {
        Self {
            kind: JointKind::Prismatic,
            axis,
            origin,
        }
    }

    pub fn has_dof(&self) -> bool {
        self.kind != JointKind::Fixed
    }

    /// Child pose relative to the joint frame for joint coordinate `q`.
    pub fn motion(&self, q: f64) -> Transform {
        match self.kind {
            JointKind::Revolute => Transform::from_rotation(crate::spatial::exp_so3(&(self.axis * q))),
            JointKind::Prismatic => Transform::from_translation(self.axis * q),
            JointKind::Fixed => Transform::identity(),
        }
    }

    /// Child pose relative to the parent link frame.
    pub fn child_in_parent(&self, q: f64) -> Transform {
        self.origin * self.motion(q)
    }

    fn validate(&self) -> Result<(), String> {
        if !self.origin.is_valid() {
            return Err("joint origin rotation is not in SO(3)".into());
        }
        if self.has_dof() && (self.axis.norm() - 1.0).abs() > AXIS_TOL {
            return Err(format!(
                "joint axis must be unit length, got |axis| = {}",
                self.axis.norm()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: JointModel,
    pub inertia: SpatialInertia,
    pub frames: Vec<(String, Transform)>,
}

/// A named frame rigidly attached to a link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRef {
    pub link: usize,
    pub offset: Transform,
}

/// Floating-base kinematic tree with topologically sorted links (`links[0]` is the base).
#[derive(Clone, Debug, PartialEq)]
pub struct MultibodyModel {
    pub name: String,
    pub links: Vec<Link>,
    pub gravity: Vec3,
    dof_index: Vec<Option<usize>>,
    dof: usize,
    frames: HashMap<String, FrameRef>,
}

impl MultibodyModel {
    /// Builds and validates a model. Links must already be topologically sorted.
    pub fn new(name: impl Into<String>, links: Vec<Link>, gravity: Vec3) -> Result<Self, ModelError> {
        if links.is_empty() {
            return Err(ModelError::Invalid("model has no links".into()));
        }
        if links[0].parent.is_some() {
            return Err(ModelError::Invalid("first link must be the base".into()));
        }
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(ModelError::Invalid("gravity must be finite".into()));
        }
        let mut dof_index = Vec::with_capacity(links.len());
        let mut dof = 0;
        let mut frames = HashMap::new();
        for (i, link) in links.iter().enumerate() {
            let invalid = |reason: String| ModelError::InvalidLink {
                link: link.name.clone(),
                reason,
            };
            match link.parent {
                None if i != 0 => return Err(invalid("only the base may have no parent".into())),
                Some(p) if p >= i => return Err(invalid("parent must precede the link".into())),
                _ => {}
            }
            if i > 0 {
                link.joint
                    .validate()
                    .map_err(|r| invalid(format!("joint of link '{}': {r}", link.name)))?;
            }
            if i > 0 && link.joint.has_dof() {
                dof_index.push(Some(dof));
                dof += 1;
            } else {
                dof_index.push(None);
            }
            let link_frame = FrameRef {
                link: i,
                offset: Transform::identity(),
            };
            if frames.insert(link.name.clone(), link_frame).is_some() {
                return Err(invalid("duplicate link or frame name".into()));
            }
            for (fname, offset) in &link.frames {
                if !offset.is_valid() {
                    return Err(invalid(format!("frame '{fname}' rotation is not in SO(3)")));
                }
                let r = FrameRef {
                    link: i,
                    offset: *offset,
                };
                if frames.insert(fname.clone(), r).is_some() {
                    return Err(invalid(format!("duplicate frame name '{fname}'")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            links,
            gravity,
            dof_index,
            dof,
            frames,
        })
    }

    /// Number of actuated joint coordinates `n`.
    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Generalized velocity dimension `n + 6`.
    pub fn nv(&self) -> usize {
        self.dof + 6
    }

    pub fn dof_index(&self, link: usize) -> Option<usize> {
        self.dof_index[link]
    }

    pub fn frame(&self, name: &str) -> Result<FrameRef, ModelError> {
        self.frames
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    }

    pub fn has_frame(&self, name: &str) -> bool {
        self.frames.contains_key(name)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.inertia.mass).sum()
    }

    /// Copy of the model with the joint of `link` replaced.
    pub fn with_joint(&self, link: usize, joint: JointModel) -> Result<Self, ModelError> {
        let mut links = self.links.clone();
        links[link].joint = joint;
        Self::new(self.name.clone(), links, self.gravity)
    }
}

// ---------------------------------------------------------------------------
// JSON schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginSpec {
    #[serde(default)]
    pub rpy: [f64; 3],
    #[serde(default)]
    pub xyz: [f64; 3],
}

impl OriginSpec {
    pub fn to_transform(&self) -> Transform {
        Transform::from_rpy_xyz(self.rpy, self.xyz)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub kind: JointKind,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default = "default_origin")]
    pub origin: OriginSpec,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_origin() -> OriginSpec {
    OriginSpec {
        rpy: [0.0; 3],
        xyz: [0.0; 3],
    }
}

impl JointSpec {
    pub fn to_joint(&self) -> JointModel {
        JointModel {
            kind: self.kind,
            axis: Vec3::from(self.axis),
            origin: self.origin.to_transform(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InertiaSpec {
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    #[serde(default)]
    pub ixy: f64,
    #[serde(default)]
    pub ixz: f64,
    #[serde(default)]
    pub iyz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub name: String,
    #[serde(default)]
    pub rpy: [f64; 3],
    #[serde(default)]
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub parent: Option<String>,
    #[serde(default)]
    pub joint: Option<JointSpec>,
    pub inertia: InertiaSpec,
    #[serde(default)]
    pub frames: Vec<FrameSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub gravity: Option<[f64; 3]>,
    pub links: Vec<LinkSpec>,
}

fn parse_error(e: serde_json::Error) -> ModelError {
    ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<MultibodyModel, ModelError> {
    let spec: ModelSpec = serde_json::from_str(text).map_err(parse_error)?;
    model_from_spec(&spec)
}

pub fn model_from_spec(spec: &ModelSpec) -> Result<MultibodyModel, ModelError> {
    let roots: Vec<usize> = spec
        .links
        .iter()
        .enumerate()
        .filter(|(_, l)| l.parent.is_none())
        .map(|(i, _)| i)
        .collect();
    if roots.len() != 1 {
        return Err(ModelError::Invalid(format!(
            "exactly one link must have a null parent, found {}",
            roots.len()
        )));
    }
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for (i, l) in spec.links.iter().enumerate() {
        if by_name.insert(l.name.as_str(), i).is_some() {
            return Err(ModelError::InvalidLink {
                link: l.name.clone(),
                reason: "duplicate link name".into(),
            });
        }
    }
    for l in &spec.links {
        if let Some(p) = &l.parent {
            if !by_name.contains_key(p.as_str()) {
                return Err(ModelError::InvalidLink {
                    link: l.name.clone(),
                    reason: format!("unknown parent '{p}'"),
                });
            }
        }
    }

    // Stable topological order: repeatedly emit links whose parent is already placed.
    let mut order: Vec<usize> = Vec::with_capacity(spec.links.len());
    let mut placed: HashMap<&str, usize> = HashMap::new();
    while order.len() < spec.links.len() {
        let before = order.len();
        for (i, l) in spec.links.iter().enumerate() {
            if placed.contains_key(l.name.as_str()) {
                continue;
            }
            let ready = match &l.parent {
                None => true,
                Some(p) => placed.contains_key(p.as_str()),
            };
            if ready {
                placed.insert(l.name.as_str(), order.len());
                order.push(i);
            }
        }
        if order.len() == before {
            return Err(ModelError::Invalid("link tree contains a loop".into()));
        }
    }

    let mut links = Vec::with_capacity(order.len());
    for &i in &order {
        let l = &spec.links[i];
        let invalid = |reason: String| ModelError::InvalidLink {
            link: l.name.clone(),
            reason,
        };
        let parent = l.parent.as_ref().map(|p| placed[p.as_str()]);
        let joint = match (&l.joint, parent) {
            (Some(j), Some(_)) => j.to_joint(),
            (None, Some(_)) => return Err(invalid("non-base link requires a joint".into())),
            (_, None) => JointModel::fixed(Transform::identity()),
        };
        let is = &l.inertia;
        let ic = Mat3::new(is.ixx, is.ixy, is.ixz, is.ixy, is.iyy, is.iyz, is.ixz, is.iyz, is.izz);
        let inertia =
            SpatialInertia::new(is.mass, Vec3::from(is.com), ic).map_err(|e: SpatialError| invalid(e.to_string()))?;
        let frames = l
            .frames
            .iter()
            .map(|f| (f.name.clone(), Transform::from_rpy_xyz(f.rpy, f.xyz)))
            .collect();
        links.push(Link {
            name: l.name.clone(),
            parent,
            joint,
            inertia,
            frames,
        });
    }
    let gravity = spec
        .gravity
        .map(Vec3::from)
        .unwrap_or_else(|| Vec3::new(0.0, 0.0, -STANDARD_GRAVITY));
    MultibodyModel::new(spec.name.clone(), links, gravity)
}
