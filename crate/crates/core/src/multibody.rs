//! Floating-base rigid-body kinematics and dynamics.
//!
//! Generalized velocities are `ν = (v_B, ω_B, ṡ)` with `v_B = ṗ_B` and
//! `ω_B` the world-frame base angular velocity (`Ṙ_B = S(ω_B) R_B`). The
//! equations of motion are
//!
//! ```text
//! M(q) ν̇ + C(q, ν) ν + G(q) = [0₆; τ] + Σ_k J_kᵀ F_k
//! ```
//!
//! Internally everything is evaluated in fixed world-origin Plücker
//! coordinates, which makes the composite-rigid-body pass a plain subtree
//! sum and yields a Coriolis factorization
//! `C = Σ_i J_iᵀ (I_i J̇_i + [v_i ×*] I_i J_i)` for which `Ṁ − 2C` is
//! exactly skew-symmetric and `C ν` matches the Newton-Euler bias force.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::math::{self, skew};
use crate::model::RobotModel;

#[derive(Debug, Error)]
pub enum MultibodyError {
    #[error("thruster index {index} out of range (model has {count})")]
    ThrusterIndex { index: usize, count: usize },
    #[error("joint position vector has length {got}, model has {expected} joints")]
    JointDim { got: usize, expected: usize },
}

/// Robot configuration `q = (p_B, R_B, s)`.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub base_position: Vector3<f64>,
    pub base_rotation: Matrix3<f64>,
    pub joint_positions: DVector<f64>,
}

impl Configuration {
    pub fn new(
        base_position: Vector3<f64>,
        base_rotation: Matrix3<f64>,
        joint_positions: DVector<f64>,
    ) -> Self {
        Self {
            base_position,
            base_rotation,
            joint_positions,
        }
    }

    /// Identity pose, zero joints.
    pub fn neutral(model: &RobotModel) -> Self {
        Self {
            base_position: Vector3::zeros(),
            base_rotation: Matrix3::identity(),
            joint_positions: DVector::zeros(model.dof()),
        }
    }

    /// Rotation orthonormality check (tolerance 1e-9).
    pub fn is_valid(&self) -> bool {
        let r = &self.base_rotation;
        (r.transpose() * r - Matrix3::identity()).norm() <= 1e-9
            && (r.determinant() - 1.0).abs() <= 1e-9
            && self.joint_positions.iter().all(|s| s.is_finite())
    }

    /// Flow the configuration along one generalized-velocity direction for
    /// `h` units: directions 0..3 translate the base, 3..6 rotate it with a
    /// world-frame angular step, 6.. move single joints.
    pub fn perturbed_along(&self, direction: usize, h: f64) -> Self {
        let mut out = self.clone();
        match direction {
            0..=2 => out.base_position[direction] += h,
            3..=5 => {
                let mut omega = Vector3::zeros();
                omega[direction - 3] = h;
                out.base_rotation = math::rotation_exp(&omega) * out.base_rotation;
            }
            _ => out.joint_positions[direction - 6] += h,
        }
        out
    }

    /// Integrate a velocity for `dt`, rotating the base via the exponential
    /// map and re-orthonormalizing.
    pub fn integrate(&self, velocity: &SystemVelocity, dt: f64) -> Self {
        Self {
            base_position: self.base_position + velocity.base_linear * dt,
            base_rotation: math::orthonormalize(
                &(math::rotation_exp(&(velocity.base_angular * dt)) * self.base_rotation),
            ),
            joint_positions: &self.joint_positions + &velocity.joint_velocities * dt,
        }
    }
}

/// System velocity `ν = (v_B, ω_B, ṡ)`.
#[derive(Debug, Clone)]
pub struct SystemVelocity {
    pub base_linear: Vector3<f64>,
    pub base_angular: Vector3<f64>,
    pub joint_velocities: DVector<f64>,
}

impl SystemVelocity {
    pub fn zeros(model: &RobotModel) -> Self {
        Self {
            base_linear: Vector3::zeros(),
            base_angular: Vector3::zeros(),
            joint_velocities: DVector::zeros(model.dof()),
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            base_linear: v.fixed_rows::<3>(0).into_owned(),
            base_angular: v.fixed_rows::<3>(3).into_owned(),
            joint_velocities: v.rows(6, v.len() - 6).into_owned(),
        }
    }

    pub fn as_vector(&self) -> DVector<f64> {
        let n = self.joint_velocities.len();
        let mut v = DVector::zeros(6 + n);
        v.fixed_rows_mut::<3>(0).copy_from(&self.base_linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.base_angular);
        v.rows_mut(6, n).copy_from(&self.joint_velocities);
        v
    }

    pub fn dim(&self) -> usize {
        6 + self.joint_velocities.len()
    }
}

/// World pose of a link frame.
#[derive(Debug, Clone)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

/// World placement of a thruster: application point and force axis.
#[derive(Debug, Clone)]
pub struct ThrusterFrame {
    pub point: Vector3<f64>,
    pub axis: Vector3<f64>,
}

/// Forward-kinematics result.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub link_poses: Vec<Pose>,
    pub thrusters: Vec<ThrusterFrame>,
    /// World CoM of each link.
    pub link_coms: Vec<Vector3<f64>>,
    /// System center of mass in world coordinates.
    pub com: Vector3<f64>,
    /// Per joint: world axis direction and a world point on the axis.
    pub joint_axes: Vec<Vector3<f64>>,
    pub joint_centers: Vec<Vector3<f64>>,
}

/// Inertia, Coriolis and gravity terms of the equations of motion. The
/// actuation enters separately as `[0₆; τ]`.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    pub coriolis_matrix: DMatrix<f64>,
    pub gravity: DVector<f64>,
}

/// Centroidal momentum `ᴳL = (l; w)` (linear first) and the centroidal
/// momentum matrix with `ᴳL = J_G ν`.
#[derive(Debug, Clone)]
pub struct CentroidalMomentum {
    pub momentum: Vector6<f64>,
    pub matrix: DMatrix<f64>,
}

pub fn forward_kinematics(model: &RobotModel, q: &Configuration) -> Kinematics {
    let n_links = model.links.len();
    let mut poses: Vec<Pose> = vec![
        Pose {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        };
        n_links
    ];
    let mut joint_axes = vec![Vector3::zeros(); model.dof()];
    let mut joint_centers = vec![Vector3::zeros(); model.dof()];

    for &index in model.traversal() {
        let link = &model.links[index];
        match (link.parent, link.joint) {
            (None, _) => {
                poses[index] = Pose {
                    rotation: q.base_rotation,
                    position: q.base_position,
                };
            }
            (Some(parent), Some(joint_index)) => {
                let parent_pose = &poses[parent];
                let joint = &model.joints[joint_index];
                let position = parent_pose.position + parent_pose.rotation * link.mount_translation;
                let pre_rotation = parent_pose.rotation * link.mount_rotation;
                let rotation = pre_rotation
                    * math::rotation_exp(&(joint.axis * q.joint_positions[joint_index]));
                joint_axes[joint_index] = pre_rotation * joint.axis;
                joint_centers[joint_index] = position;
                poses[index] = Pose { rotation, position };
            }
            _ => unreachable!("validated tree"),
        }
    }

    let link_coms: Vec<Vector3<f64>> = model
        .links
        .iter()
        .enumerate()
        .map(|(i, link)| poses[i].position + poses[i].rotation * link.com)
        .collect();
    let com = model
        .links
        .iter()
        .enumerate()
        .map(|(i, link)| link_coms[i] * link.mass)
        .sum::<Vector3<f64>>()
        / model.total_mass();

    let thrusters = model
        .thrusters
        .iter()
        .map(|t| ThrusterFrame {
            point: poses[t.link].position + poses[t.link].rotation * t.position,
            axis: poses[t.link].rotation * t.axis,
        })
        .collect();

    Kinematics {
        link_poses: poses,
        thrusters,
        link_coms,
        com,
        joint_axes,
        joint_centers,
    }
}

/// Everything needed by the dynamics algorithms, evaluated once per state:
/// world-origin Plücker Jacobians `J_i`, their time derivatives, body
/// spatial velocities `(ω; v_O)` and spatial inertias at the origin.
struct SpatialData {
    kin: Kinematics,
    jac: Vec<DMatrix<f64>>,
    jac_dot: Vec<DMatrix<f64>>,
    vel: Vec<Vector6<f64>>,
    inertia_origin: Vec<Matrix6<f64>>,
}

/// Column of the free-joint subspace for generalized coordinate `c` (0..6).
fn base_column(c: usize, base_position: &Vector3<f64>) -> Vector6<f64> {
    let mut e = Vector3::zeros();
    if c < 3 {
        e[c] = 1.0;
        math::spatial(&Vector3::zeros(), &e)
    } else {
        e[c - 3] = 1.0;
        math::spatial(&e, &(base_position.cross(&e)))
    }
}

/// Revolute joint column in world-origin coordinates.
fn joint_column(axis: &Vector3<f64>, center: &Vector3<f64>) -> Vector6<f64> {
    math::spatial(axis, &center.cross(axis))
}

fn spatial_data(model: &RobotModel, q: &Configuration, nu: &SystemVelocity) -> SpatialData {
    let kin = forward_kinematics(model, q);
    let dim = model.velocity_dim();
    let n_links = model.links.len();

    // Joint subspace columns and body velocities by propagation.
    let joint_cols: Vec<Vector6<f64>> = (0..model.dof())
        .map(|j| joint_column(&kin.joint_axes[j], &kin.joint_centers[j]))
        .collect();

    let mut vel = vec![Vector6::zeros(); n_links];
    let base_vel = math::spatial(
        &nu.base_angular,
        &(nu.base_linear + q.base_position.cross(&nu.base_angular)),
    );
    for &index in model.traversal() {
        let link = &model.links[index];
        vel[index] = match (link.parent, link.joint) {
            (None, _) => base_vel,
            (Some(parent), Some(j)) => vel[parent] + joint_cols[j] * nu.joint_velocities[j],
            _ => unreachable!(),
        };
    }

    // Ṡ_j = v_{child(j)} ×̂ S_j ; the base angular columns differentiate to
    // (0; v_B × e).
    let joint_col_dots: Vec<Vector6<f64>> = (0..model.dof())
        .map(|j| math::spatial_cross_motion(&vel[model.joints[j].child]) * joint_cols[j])
        .collect();

    let mut jac = Vec::with_capacity(n_links);
    let mut jac_dot = Vec::with_capacity(n_links);
    for index in 0..n_links {
        let mut j_mat = DMatrix::zeros(6, dim);
        let mut jd_mat = DMatrix::zeros(6, dim);
        for c in 0..6 {
            j_mat
                .column_mut(c)
                .copy_from(&base_column(c, &q.base_position));
        }
        for c in 3..6 {
            let mut e = Vector3::zeros();
            e[c - 3] = 1.0;
            jd_mat
                .column_mut(c)
                .copy_from(&math::spatial(&Vector3::zeros(), &nu.base_linear.cross(&e)));
        }
        for &j in model.joint_path(index) {
            j_mat.column_mut(6 + j).copy_from(&joint_cols[j]);
            jd_mat.column_mut(6 + j).copy_from(&joint_col_dots[j]);
        }
        jac.push(j_mat);
        jac_dot.push(jd_mat);
    }

    let inertia_origin = (0..n_links)
        .map(|i| {
            let link = &model.links[i];
            let rot = &kin.link_poses[i].rotation;
            let inertia_com_world = rot * link.inertia_com * rot.transpose();
            spatial_inertia_at_origin(link.mass, &kin.link_coms[i], &inertia_com_world)
        })
        .collect();

    SpatialData {
        kin,
        jac,
        jac_dot,
        vel,
        inertia_origin,
    }
}

/// Spatial inertia of a body at the world origin, `(ω; v_O)` convention.
fn spatial_inertia_at_origin(
    mass: f64,
    com: &Vector3<f64>,
    inertia_com: &Matrix3<f64>,
) -> Matrix6<f64> {
    let sc = skew(com);
    let mut inertia = Matrix6::zeros();
    inertia
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(inertia_com + sc * sc.transpose() * mass));
    inertia.fixed_view_mut::<3, 3>(0, 3).copy_from(&(sc * mass));
    inertia
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(sc.transpose() * mass));
    inertia
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * mass));
    inertia
}

/// 3×(6+n) Jacobian of a thruster application point: `J_k ν` is the world
/// velocity of the point.
pub fn point_jacobian(
    model: &RobotModel,
    q: &Configuration,
    thruster_index: usize,
) -> Result<Matrix3xX<f64>, MultibodyError> {
    if thruster_index >= model.thruster_count() {
        return Err(MultibodyError::ThrusterIndex {
            index: thruster_index,
            count: model.thruster_count(),
        });
    }
    let kin = forward_kinematics(model, q);
    Ok(point_jacobian_with(model, q, &kin, thruster_index))
}

/// Point Jacobian reusing an existing forward-kinematics evaluation.
pub fn point_jacobian_with(
    model: &RobotModel,
    q: &Configuration,
    kin: &Kinematics,
    thruster_index: usize,
) -> Matrix3xX<f64> {
    let thruster = &model.thrusters[thruster_index];
    let point = kin.thrusters[thruster_index].point;
    let mut jac = Matrix3xX::zeros(model.velocity_dim());

    // v(point) = v_B + ω_B × (point − p_B) + Σ â_j ṡ_j × (point − p_j)
    jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    jac.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&skew(&(point - q.base_position)).transpose());
    for &j in model.joint_path(thruster.link) {
        let arm = point - kin.joint_centers[j];
        jac.column_mut(6 + j).copy_from(&kin.joint_axes[j].cross(&arm));
    }
    jac
}

/// Mass matrix (composite-rigid-body), Coriolis matrix (skew-consistent
/// factorization) and gravity vector.
pub fn dynamics_terms(model: &RobotModel, q: &Configuration, nu: &SystemVelocity) -> DynamicsTerms {
    let data = spatial_data(model, q, nu);
    let dim = model.velocity_dim();

    // Composite subtree inertias: a plain sum in world-origin coordinates.
    let mut composite = data.inertia_origin.clone();
    for &index in model.traversal().iter().rev() {
        if let Some(parent) = model.links[index].parent {
            let add = composite[index];
            composite[parent] += add;
        }
    }

    let mut mass = DMatrix::zeros(dim, dim);
    let base_cols: Vec<Vector6<f64>> = (0..6).map(|c| base_column(c, &q.base_position)).collect();

    // Base-base block uses the total system inertia.
    let total = composite[model.base()];
    for a in 0..6 {
        let f = total * base_cols[a];
        for b in 0..6 {
            mass[(a, b)] = base_cols[b].dot(&f);
        }
    }
    // Joint columns: force through the joint's subtree inertia, projected on
    // every supporting joint up the chain and on the base.
    for j in 0..model.dof() {
        let child = model.joints[j].child;
        let s_j = joint_column(&data.kin.joint_axes[j], &data.kin.joint_centers[j]);
        let f = composite[child] * s_j;
        mass[(6 + j, 6 + j)] = s_j.dot(&f);
        let path = model.joint_path(child);
        for &a in path.iter().take_while(|&&a| a != j) {
            let s_a = joint_column(&data.kin.joint_axes[a], &data.kin.joint_centers[a]);
            let val = s_a.dot(&f);
            mass[(6 + a, 6 + j)] = val;
            mass[(6 + j, 6 + a)] = val;
        }
        for b in 0..6 {
            let val = base_cols[b].dot(&f);
            mass[(b, 6 + j)] = val;
            mass[(6 + j, b)] = val;
        }
    }

    // C = Σ Jᵀ (I J̇ + [v×*] I J); G = −Σ Jᵀ F_gravity.
    let mut coriolis = DMatrix::zeros(dim, dim);
    let mut gravity = DVector::zeros(dim);
    let g_accel = Vector3::new(0.0, 0.0, -model.gravity);
    for i in 0..model.links.len() {
        let inertia = &data.inertia_origin[i];
        let cross_force = math::spatial_cross_force(&data.vel[i]);
        coriolis += data.jac[i].transpose() * (inertia * &data.jac_dot[i] + cross_force * inertia * &data.jac[i]);

        let f_lin = g_accel * model.links[i].mass;
        let f_grav = math::spatial(&data.kin.link_coms[i].cross(&f_lin), &f_lin);
        gravity -= data.jac[i].transpose() * f_grav;
    }

    DynamicsTerms {
        mass_matrix: mass,
        coriolis_matrix: coriolis,
        gravity,
    }
}

/// Newton-Euler bias force `C(q, ν) ν` computed by force accumulation, used
/// to cross-check the Coriolis factorization.
pub fn coriolis_bias(model: &RobotModel, q: &Configuration, nu: &SystemVelocity) -> DVector<f64> {
    let data = spatial_data(model, q, nu);
    let nu_vec = nu.as_vector();
    let mut bias = DVector::zeros(model.velocity_dim());
    for i in 0..model.links.len() {
        let inertia = &data.inertia_origin[i];
        let accel_bias = &data.jac_dot[i] * &nu_vec;
        let momentum = inertia * data.vel[i];
        let force = inertia * Vector6::from_column_slice(accel_bias.as_slice())
            + math::spatial_cross_force(&data.vel[i]) * momentum;
        bias += data.jac[i].transpose() * force;
    }
    bias
}

/// Centroidal momentum and the centroidal momentum matrix, linear rows
/// first: `ᴳL = (l; w)` with `l = m v_com` and `w` the angular momentum
/// about the CoM in world orientation.
pub fn centroidal_momentum(
    model: &RobotModel,
    q: &Configuration,
    nu: &SystemVelocity,
) -> CentroidalMomentum {
    let data = spatial_data(model, q, nu);
    let dim = model.velocity_dim();

    // Total momentum map at the world origin in (ang; lin) rows.
    let mut at_origin = DMatrix::zeros(6, dim);
    for i in 0..model.links.len() {
        at_origin += data.inertia_origin[i] * &data.jac[i];
    }

    let mut matrix = DMatrix::zeros(6, dim);
    let lin_rows = at_origin.rows(3, 3).into_owned();
    let ang_rows = at_origin.rows(0, 3).into_owned();
    matrix.rows_mut(0, 3).copy_from(&lin_rows);
    matrix
        .rows_mut(3, 3)
        .copy_from(&(ang_rows - skew(&data.kin.com) * lin_rows));

    let momentum_vec = &matrix * nu.as_vector();
    CentroidalMomentum {
        momentum: Vector6::from_column_slice(momentum_vec.as_slice()),
        matrix,
    }
}

/// Locked (whole-body) rotational inertia about the CoM, expressed in base
/// coordinates: a function of the internal shape `s` only.
pub fn locked_inertia(model: &RobotModel, s: &DVector<f64>) -> Result<Matrix3<f64>, MultibodyError> {
    if s.len() != model.dof() {
        return Err(MultibodyError::JointDim {
            got: s.len(),
            expected: model.dof(),
        });
    }
    let q = Configuration {
        base_position: Vector3::zeros(),
        base_rotation: Matrix3::identity(),
        joint_positions: s.clone(),
    };
    let kin = forward_kinematics(model, &q);
    let mut inertia = Matrix3::zeros();
    for (i, link) in model.links.iter().enumerate() {
        let rot = &kin.link_poses[i].rotation;
        let d = kin.link_coms[i] - kin.com;
        let sd = skew(&d);
        inertia += rot * link.inertia_com * rot.transpose() + sd * sd.transpose() * link.mass;
    }
    Ok(inertia)
}
