//! Robot description: a branched chain of rigid links with 1-DoF revolute
//! joints and rigidly mounted thrusters, loaded from a JSON model file.
//!
//! The model file is the single source of truth; nothing about the robot is
//! hard-coded. Conventions:
//!
//! - Each non-base link carries a fixed `origin` placement relative to its
//!   parent. The joint rotates the link about `axis` (expressed in the link
//!   frame) after that placement, so the world pose of a link is
//!   `X_parent * origin * Rot(axis, s)`.
//! - `inertia` is the 3×3 tensor about the link's center of mass, expressed
//!   in link-frame axes; `com` is the center-of-mass offset in the link
//!   frame (defaults to the origin).
//! - Thruster `position`/`axis` are in the host link frame; `axis` is the
//!   direction of the thrust force on the robot.
//! - Units: kg, m, rad, N; `gravity` is the (positive) field magnitude.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unit-norm tolerance for axis vectors.
pub const AXIS_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("model has no links")]
    Empty,
    #[error("duplicate link name `{0}`")]
    DuplicateLink(String),
    #[error("{context}: unknown link `{name}`")]
    UnknownLink { context: String, name: String },
    #[error("link `{0}` has more than one parent joint")]
    MultipleParents(String),
    #[error("expected exactly one base link, found {0:?}")]
    BaseCount(Vec<String>),
    #[error("joint graph is not a tree rooted at the base (cycle or disconnected link `{0}`)")]
    NotATree(String),
    #[error("links[{index}].mass: must be positive, got {value}")]
    NonPositiveMass { index: usize, value: f64 },
    #[error("links[{index}].inertia: not symmetric positive definite")]
    BadInertia { index: usize },
    #[error("{field}: axis must have unit norm (|1 - ||a||| <= 1e-12), got norm {norm}")]
    NonUnitAxis { field: String, norm: f64 },
    #[error("joints[{index}].limits: lower {lo} exceeds upper {hi}")]
    BadLimits { index: usize, lo: f64, hi: f64 },
    #[error("thrusters[{index}].{field}: must be positive, got {value}")]
    NonPositiveThrusterField {
        index: usize,
        field: &'static str,
        value: f64,
    },
    #[error("gravity: must be positive, got {0}")]
    BadGravity(f64),
    #[error("non-base link `{0}` must carry an `origin` placement")]
    MissingOrigin(String),
}

/// Fixed placement of a frame relative to its parent frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Placement {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Placement {
    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.xyz)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        crate::math::rotation_from_rpy(&Vector3::from(self.rpy))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    /// Row-major 3×3 inertia tensor about the link CoM, link-frame axes.
    pub inertia: [[f64; 3]; 3],
    /// CoM position in the link frame.
    #[serde(default)]
    pub com: [f64; 3],
    /// Placement relative to the parent link; absent for the base.
    #[serde(default)]
    pub origin: Option<Placement>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub parent: String,
    pub child: String,
    /// Revolute axis in the child link frame.
    pub axis: [f64; 3],
    /// Position limits [lower, upper] in rad.
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThrusterSpec {
    pub name: String,
    pub link: String,
    /// Application point in the host link frame.
    pub position: [f64; 3],
    /// Thrust force direction in the host link frame (unit norm).
    pub axis: [f64; 3],
    pub max_thrust: f64,
    pub max_rpm: f64,
}

/// On-disk model schema (see `docs/formats.md`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub gravity: f64,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub thrusters: Vec<ThrusterSpec>,
}

/// A link resolved into the kinematic tree.
#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    pub inertia_com: Matrix3<f64>,
    pub com: Vector3<f64>,
    /// Index of the parent link; `None` for the base.
    pub parent: Option<usize>,
    /// Fixed placement relative to the parent (identity for the base).
    pub mount_translation: Vector3<f64>,
    pub mount_rotation: Matrix3<f64>,
    /// Joint index actuating this link (`None` for the base).
    pub joint: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Axis in the child link frame.
    pub axis: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct Thruster {
    pub name: String,
    pub link: usize,
    pub position: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub max_thrust: f64,
    pub max_rpm: f64,
}

/// Validated kinematic/inertial description of the robot.
///
/// Immutable after load; all derived quantities (total mass, traversal
/// order) are cached here so downstream evaluation is pure.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub thrusters: Vec<Thruster>,
    pub gravity: f64,
    total_mass: f64,
    base: usize,
    /// Link indices in parent-before-child order, base first.
    traversal: Vec<usize>,
    /// Per-link chain of joint indices from the base down to that link.
    joint_paths: Vec<Vec<usize>>,
}

impl RobotModel {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_spec(&file)
    }

    pub fn from_spec(file: &ModelFile) -> Result<Self, ModelError> {
        if file.links.is_empty() {
            return Err(ModelError::Empty);
        }
        if file.gravity <= 0.0 {
            return Err(ModelError::BadGravity(file.gravity));
        }

        let mut name_to_index = HashMap::new();
        for (i, link) in file.links.iter().enumerate() {
            if name_to_index.insert(link.name.clone(), i).is_some() {
                return Err(ModelError::DuplicateLink(link.name.clone()));
            }
            if link.mass <= 0.0 {
                return Err(ModelError::NonPositiveMass {
                    index: i,
                    value: link.mass,
                });
            }
            check_inertia(&Matrix3::from(link.inertia).transpose(), i)?;
        }

        let resolve = |context: String, name: &str| -> Result<usize, ModelError> {
            name_to_index
                .get(name)
                .copied()
                .ok_or(ModelError::UnknownLink {
                    context,
                    name: name.to_string(),
                })
        };

        let mut links: Vec<Link> = file
            .links
            .iter()
            .map(|l| Link {
                name: l.name.clone(),
                mass: l.mass,
                // serde gives row-major nested arrays; Matrix3::from is column-major.
                inertia_com: Matrix3::from(l.inertia).transpose(),
                com: Vector3::from(l.com),
                parent: None,
                mount_translation: l.origin.as_ref().map(|o| o.translation()).unwrap_or_default(),
                mount_rotation: l
                    .origin
                    .as_ref()
                    .map(|o| o.rotation())
                    .unwrap_or_else(Matrix3::identity),
                joint: None,
            })
            .collect();

        let mut joints = Vec::with_capacity(file.joints.len());
        for (j, spec) in file.joints.iter().enumerate() {
            let parent = resolve(format!("joints[{j}].parent"), &spec.parent)?;
            let child = resolve(format!("joints[{j}].child"), &spec.child)?;
            let axis = Vector3::from(spec.axis);
            check_axis(&axis, format!("joints[{j}].axis"))?;
            if spec.limits[0] > spec.limits[1] {
                return Err(ModelError::BadLimits {
                    index: j,
                    lo: spec.limits[0],
                    hi: spec.limits[1],
                });
            }
            if links[child].parent.is_some() {
                return Err(ModelError::MultipleParents(spec.child.clone()));
            }
            links[child].parent = Some(parent);
            links[child].joint = Some(j);
            joints.push(Joint {
                name: spec.name.clone(),
                parent,
                child,
                axis,
                lower: spec.limits[0],
                upper: spec.limits[1],
            });
        }

        let bases: Vec<usize> = (0..links.len()).filter(|&i| links[i].parent.is_none()).collect();
        if bases.len() != 1 {
            return Err(ModelError::BaseCount(
                bases.iter().map(|&i| links[i].name.clone()).collect(),
            ));
        }
        let base = bases[0];
        if file.links[base].origin.is_some() {
            // Tolerated but meaningless; the base pose comes from the state.
            log::warn!("base link `{}` origin placement is ignored", links[base].name);
        }
        for (i, link) in links.iter().enumerate() {
            if i != base && file.links[i].origin.is_none() {
                return Err(ModelError::MissingOrigin(link.name.clone()));
            }
        }

        // Parent-before-child traversal; also detects cycles/disconnection.
        let mut traversal = vec![base];
        let mut visited = vec![false; links.len()];
        visited[base] = true;
        let mut cursor = 0;
        while cursor < traversal.len() {
            let current = traversal[cursor];
            cursor += 1;
            for joint in &joints {
                if joint.parent == current && !visited[joint.child] {
                    visited[joint.child] = true;
                    traversal.push(joint.child);
                }
            }
        }
        if let Some(orphan) = (0..links.len()).find(|&i| !visited[i]) {
            return Err(ModelError::NotATree(links[orphan].name.clone()));
        }

        let mut thrusters = Vec::with_capacity(file.thrusters.len());
        for (k, spec) in file.thrusters.iter().enumerate() {
            let link = resolve(format!("thrusters[{k}].link"), &spec.link)?;
            let axis = Vector3::from(spec.axis);
            check_axis(&axis, format!("thrusters[{k}].axis"))?;
            if spec.max_thrust <= 0.0 {
                return Err(ModelError::NonPositiveThrusterField {
                    index: k,
                    field: "max_thrust",
                    value: spec.max_thrust,
                });
            }
            if spec.max_rpm <= 0.0 {
                return Err(ModelError::NonPositiveThrusterField {
                    index: k,
                    field: "max_rpm",
                    value: spec.max_rpm,
                });
            }
            thrusters.push(Thruster {
                name: spec.name.clone(),
                link,
                position: Vector3::from(spec.position),
                axis,
                max_thrust: spec.max_thrust,
                max_rpm: spec.max_rpm,
            });
        }

        let mut joint_paths: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
        for &index in &traversal {
            if let (Some(parent), Some(joint)) = (links[index].parent, links[index].joint) {
                let mut path = joint_paths[parent].clone();
                path.push(joint);
                joint_paths[index] = path;
            }
        }

        let total_mass = links.iter().map(|l| l.mass).sum();
        Ok(Self {
            links,
            joints,
            thrusters,
            gravity: file.gravity,
            total_mass,
            base,
            traversal,
            joint_paths,
        })
    }

    /// Number of joints (`n`).
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of thrusters (`n_p`).
    pub fn thruster_count(&self) -> usize {
        self.thrusters.len()
    }

    /// Generalized-velocity dimension `6 + n`.
    pub fn velocity_dim(&self) -> usize {
        6 + self.dof()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn base(&self) -> usize {
        self.base
    }

    /// Link indices, parents before children.
    pub fn traversal(&self) -> &[usize] {
        &self.traversal
    }

    /// Joint indices on the chain from the base to `link`, base side first.
    pub fn joint_path(&self, link: usize) -> &[usize] {
        &self.joint_paths[link]
    }

    /// Joint position limits as (lower, upper) stacked vectors.
    pub fn joint_limits(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.joints.iter().map(|j| j.lower).collect(),
            self.joints.iter().map(|j| j.upper).collect(),
        )
    }
}

fn check_axis(axis: &Vector3<f64>, field: String) -> Result<(), ModelError> {
    let norm = axis.norm();
    if (norm - 1.0).abs() > AXIS_NORM_TOL {
        return Err(ModelError::NonUnitAxis { field, norm });
    }
    Ok(())
}

fn check_inertia(inertia: &Matrix3<f64>, index: usize) -> Result<(), ModelError> {
    let asym = inertia - inertia.transpose();
    if asym.norm() > 1e-9 {
        return Err(ModelError::BadInertia { index });
    }
    let eigen = nalgebra::SymmetricEigen::new(*inertia);
    if eigen.eigenvalues.min() <= 0.0 {
        return Err(ModelError::BadInertia { index });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_model(mutate: impl FnOnce(&mut serde_json::Value)) -> Result<RobotModel, ModelError> {
        let mut value: serde_json::Value = serde_json::from_str(
            r#"{
                "gravity": 9.81,
                "links": [
                    {"name": "base", "mass": 1.0,
                     "inertia": [[0.1,0,0],[0,0.1,0],[0,0,0.1]]},
                    {"name": "arm", "mass": 0.5,
                     "inertia": [[0.01,0,0],[0,0.01,0],[0,0,0.01]],
                     "com": [0,0,-0.1],
                     "origin": {"xyz": [0.0, 0.2, 0.0]}}
                ],
                "joints": [
                    {"name": "shoulder", "parent": "base", "child": "arm",
                     "axis": [0,1,0], "limits": [-1.5, 1.5]}
                ],
                "thrusters": [
                    {"name": "jet", "link": "arm", "position": [0,0,-0.2],
                     "axis": [0,0,1], "max_thrust": 100.0, "max_rpm": 100000.0}
                ]
            }"#,
        )
        .unwrap();
        mutate(&mut value);
        RobotModel::from_json(&value.to_string())
    }

    #[test]
    fn loads_and_caches_mass() {
        let model = minimal_model(|_| {}).unwrap();
        assert_eq!(model.dof(), 1);
        assert_eq!(model.thruster_count(), 1);
        assert_eq!(model.total_mass(), 1.5);
        assert_eq!(model.traversal(), &[0, 1]);
    }

    #[test]
    fn rejects_negative_mass_with_field_path() {
        let err = minimal_model(|v| v["links"][0]["mass"] = (-1.0).into()).unwrap_err();
        assert!(err.to_string().contains("links[0].mass"), "{err}");
    }

    #[test]
    fn rejects_non_unit_axis() {
        let err = minimal_model(|v| v["thrusters"][0]["axis"] = serde_json::json!([0, 0, 1.1]))
            .unwrap_err();
        assert!(err.to_string().contains("thrusters[0].axis"), "{err}");
    }

    #[test]
    fn rejects_non_spd_inertia() {
        let err = minimal_model(|v| {
            v["links"][1]["inertia"] = serde_json::json!([[0.01, 0, 0], [0, -0.01, 0], [0, 0, 0.01]])
        })
        .unwrap_err();
        assert!(matches!(err, ModelError::BadInertia { index: 1 }));
    }

    #[test]
    fn rejects_two_bases() {
        let err = minimal_model(|v| {
            v["joints"] = serde_json::json!([]);
            v["links"][1]["origin"] = serde_json::Value::Null;
        })
        .unwrap_err();
        assert!(matches!(err, ModelError::BaseCount(_)));
    }

    #[test]
    fn rejects_unknown_joint_child() {
        let err = minimal_model(|v| v["joints"][0]["child"] = "nope".into()).unwrap_err();
        assert!(err.to_string().contains("joints[0].child"), "{err}");
    }

    #[test]
    fn inertia_is_read_row_major() {
        let model = minimal_model(|v| {
            v["links"][0]["inertia"] =
                serde_json::json!([[0.2, 0.01, 0.0], [0.01, 0.3, 0.02], [0.0, 0.02, 0.4]])
        })
        .unwrap();
        let inertia = model.links[0].inertia_com;
        assert_eq!(inertia[(0, 1)], 0.01);
        assert_eq!(inertia[(1, 2)], 0.02);
        assert_eq!(inertia[(2, 2)], 0.4);
    }
}
