//! Deterministic fixed-step plant integrating the full multibody dynamics
//! with thrust forces, turbine spool dynamics, low-level joint-rate
//! tracking and fault injection.
//!
//! Integration is semi-implicit Euler at 1 ms: velocities first from
//! `ν̇ = M⁻¹(Σ J_kᵀ F_k + [0; τ] − C ν − G)`, then positions from the new
//! velocities, with the base rotation advanced through the exponential map
//! and re-orthonormalized.
//!
//! The turbine command path integrates the commanded thrust rate into a
//! thrust command, maps it to an RPM command and tracks it with a
//! first-order lag (jet dynamics are not published for the real engines;
//! the lag is a swappable placeholder, `JetDynamics::Direct` removes it).
//! An injected fault makes the turbine ignore commands and spool down
//! first-order with `spool_down_tau`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::ThrustRpmMap;
use crate::model::RobotModel;
use crate::multibody::{self, Configuration, SystemVelocity};

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("non-finite state at t={time:.4} s ({what})")]
    NonFiniteState { time: f64, what: &'static str },
}

/// Turbine response to the mapped RPM command.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JetDynamics {
    /// RPM follows the command instantly (test/oracle mode).
    Direct,
    /// First-order lag with time constant `tau` (s).
    FirstOrderLag { tau: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Integration step (s).
    pub dt: f64,
    pub jet: JetDynamics,
    /// Spool-down time constant after a fault; the shipped value makes a
    /// hover-RPM turbine cross the 100-RPM quantization floor 0.8 s after
    /// the fault.
    pub spool_down_tau: f64,
    /// Low-level PI gains tracking commanded joint rates, normalized by
    /// the effective (apparent) inertia `1/(M⁻¹)_jj` of each joint so that
    /// every joint gets the same loop bandwidth at any posture. Units:
    /// kp 1/s, ki 1/s². Discrete stability needs `kp·dt < 2`.
    pub joint_rate_kp: f64,
    pub joint_rate_ki: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            jet: JetDynamics::FirstOrderLag { tau: 0.15 },
            spool_down_tau: 0.1079,
            joint_rate_kp: 350.0,
            joint_rate_ki: 9000.0,
        }
    }
}

/// Full simulator state.
#[derive(Debug, Clone)]
pub struct PlantState {
    pub q: Configuration,
    pub nu: SystemVelocity,
    /// Actual thrust per turbine (N), from the RPM map.
    pub thrusts: DVector<f64>,
    /// Turbine RPM.
    pub rpm: DVector<f64>,
    /// Integrated thrust command (the low-level RPM setpoint source).
    pub thrust_commands: DVector<f64>,
    /// Low-level joint-rate PI integrator.
    joint_integral: DVector<f64>,
    /// Injection time per turbine, if faulted.
    pub fault_injected: Vec<Option<f64>>,
    pub time: f64,
}

impl PlantState {
    /// State at rest with the given posture and thrusts, turbines spun up
    /// to match.
    pub fn settled(model: &RobotModel, q: Configuration, thrusts: DVector<f64>) -> Self {
        let maps = ThrustRpmMap::all_from_model(model);
        let rpm = DVector::from_fn(thrusts.len(), |k, _| maps[k].thrust_to_rpm(thrusts[k]));
        Self {
            q,
            nu: SystemVelocity::zeros(model),
            thrust_commands: thrusts.clone(),
            thrusts,
            rpm,
            joint_integral: DVector::zeros(model.dof()),
            fault_injected: vec![None; model.thruster_count()],
            time: 0.0,
        }
    }

    /// Mark a turbine as failed from the current instant: commands are
    /// ignored and the RPM spools down to zero.
    pub fn inject_fault(&mut self, turbine: usize) {
        if self.fault_injected[turbine].is_none() {
            self.fault_injected[turbine] = Some(self.time);
        }
    }

    /// As [`PlantState::settled`], additionally preloading the joint-rate
    /// integrator with the static torques that hold the posture, so a true
    /// equilibrium starts as an exact fixed point.
    pub fn settled_balanced(
        model: &RobotModel,
        config: &PlantConfig,
        q: Configuration,
        thrusts: DVector<f64>,
    ) -> Self {
        let mut state = Self::settled(model, q, thrusts);
        let terms = multibody::dynamics_terms(model, &state.q, &state.nu);
        let kin = multibody::forward_kinematics(model, &state.q);
        let mut force = DVector::zeros(model.velocity_dim());
        for k in 0..model.thruster_count() {
            let jac = multibody::point_jacobian_with(model, &state.q, &kin, k);
            force += jac.transpose() * (kin.thrusters[k].axis * state.thrusts[k]);
        }
        let needed = &terms.gravity - &force;
        let torques_needed = needed.rows(6, model.dof()).into_owned();
        let mass_inverse = terms
            .mass_matrix
            .clone()
            .cholesky()
            .expect("SPD mass matrix")
            .inverse();
        let joint_block = mass_inverse
            .view((6, 6), (model.dof(), model.dof()))
            .into_owned();
        state.joint_integral = joint_block * torques_needed / config.joint_rate_ki;
        state
    }
}

fn check_finite(value: f64, time: f64, what: &'static str) -> Result<(), PlantError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(PlantError::NonFiniteState { time, what })
    }
}

/// Advance the plant by one step under a held command `(Ṫ*, ṡ*)`.
pub fn plant_step(
    model: &RobotModel,
    config: &PlantConfig,
    state: &mut PlantState,
    thrust_rates: &DVector<f64>,
    joint_rates: &DVector<f64>,
) -> Result<(), PlantError> {
    let dt = config.dt;
    let maps = ThrustRpmMap::all_from_model(model);

    for k in 0..model.thruster_count() {
        if let Some(_t0) = state.fault_injected[k] {
            // Fault: exact first-order decay toward zero, commands ignored.
            state.rpm[k] *= (-dt / config.spool_down_tau).exp();
        } else {
            state.thrust_commands[k] = (state.thrust_commands[k] + dt * thrust_rates[k])
                .clamp(0.0, model.thrusters[k].max_thrust);
            let target = maps[k].thrust_to_rpm(state.thrust_commands[k]);
            state.rpm[k] = match config.jet {
                JetDynamics::Direct => target,
                JetDynamics::FirstOrderLag { tau } => {
                    target + (state.rpm[k] - target) * (-dt / tau).exp()
                }
            };
        }
        state.thrusts[k] = maps[k].rpm_to_thrust(state.rpm[k]);
    }

    let terms = multibody::dynamics_terms(model, &state.q, &state.nu);
    let chol = terms
        .mass_matrix
        .clone()
        .cholesky()
        .expect("SPD mass matrix");
    let mass_inverse = chol.inverse();

    // Low-level joint-rate PI produces the internal torques of Eq. (1).
    // The PI output (desired joint accelerations) is mapped through the
    // joint-space apparent inertia — the inverse of the joint block of
    // M⁻¹ — which decouples the loops from each other and from posture.
    let n = model.dof();
    let rate_error = joint_rates - &state.nu.joint_velocities;
    state.joint_integral += &rate_error * dt;
    let desired_accel =
        &rate_error * config.joint_rate_kp + &state.joint_integral * config.joint_rate_ki;
    let joint_block = mass_inverse.view((6, 6), (n, n)).into_owned();
    let torques = joint_block
        .lu()
        .solve(&desired_accel)
        .expect("joint block of M⁻¹ is SPD");

    let kin = multibody::forward_kinematics(model, &state.q);
    let dim = model.velocity_dim();
    let mut force = DVector::zeros(dim);
    for k in 0..model.thruster_count() {
        let jac = multibody::point_jacobian_with(model, &state.q, &kin, k);
        let thrust_force = kin.thrusters[k].axis * state.thrusts[k];
        force += jac.transpose() * thrust_force;
    }
    for j in 0..model.dof() {
        force[6 + j] += torques[j];
    }
    let nu_vec = state.nu.as_vector();
    let rhs = force - &terms.coriolis_matrix * &nu_vec - &terms.gravity;
    let accel = chol.solve(&rhs);

    let new_nu = SystemVelocity::from_vector(&(nu_vec + accel * dt));
    state.q = state.q.integrate(&new_nu, dt);
    state.nu = new_nu;
    state.time += dt;

    check_finite(state.q.base_position.norm(), state.time, "base position")?;
    check_finite(state.nu.as_vector().norm(), state.time, "velocity")?;
    check_finite(state.rpm.norm(), state.time, "rpm")?;
    Ok(())
}

/// Hover thrusts solving `A(q) T = −F_G` at a given configuration
/// (least-squares, minimum-norm; exact only where an equilibrium exists).
pub fn hover_thrusts(model: &RobotModel, q: &Configuration) -> DVector<f64> {
    let (a, gravity) = crate::momentum::thrust_matrix(model, q);
    let sol = a.svd(true, true).solve(&(-gravity), 1e-12).expect("SVD solve");
    DVector::from_column_slice(sol.as_slice())
}

/// Static hover trim with joints at zero: thrusts along the positive ray
/// of the body-moment null space scaled to the robot weight, attitude the
/// minimal rotation aligning the net body-frame thrust with gravity.
///
/// Exact by construction: thrust moments about the CoM are attitude
/// independent, so zeroing them in the body frame and then rotating the
/// thrust sum onto `m g e₃` closes all six balance equations.
pub fn trim_hover(
    model: &RobotModel,
    base_position: nalgebra::Vector3<f64>,
) -> (Configuration, DVector<f64>) {
    let neutral = Configuration {
        base_position,
        base_rotation: nalgebra::Matrix3::identity(),
        joint_positions: DVector::zeros(model.dof()),
    };
    let kin = multibody::forward_kinematics(model, &neutral);
    let n_p = model.thruster_count();
    let mut moments = DMatrix::zeros(3, n_p);
    for k in 0..n_p {
        let lever = kin.thrusters[k].point - kin.com;
        moments
            .view_mut((0, k), (3, 1))
            .copy_from(&lever.cross(&kin.thrusters[k].axis));
    }
    // Null vector of the 3×n_p moment matrix via the smallest eigenvector
    // of the n_p×n_p Gram matrix (the thin SVD has no null-space rows).
    let gram = moments.transpose() * &moments;
    let eigen = nalgebra::SymmetricEigen::new(gram);
    let mut smallest = 0;
    for i in 1..n_p {
        if eigen.eigenvalues[i] < eigen.eigenvalues[smallest] {
            smallest = i;
        }
    }
    let mut ray = eigen.eigenvectors.column(smallest).into_owned();
    if ray.sum() < 0.0 {
        ray = -ray;
    }
    assert!(
        ray.iter().all(|&t| t > 0.0),
        "moment null space has no positive thrust ray: {ray}"
    );

    let mut body_force = nalgebra::Vector3::zeros();
    for k in 0..n_p {
        body_force += kin.thrusters[k].axis * ray[k];
    }
    let weight = model.total_mass() * model.gravity;
    let thrusts = &ray * (weight / body_force.norm());
    for k in 0..n_p {
        assert!(
            thrusts[k] <= model.thrusters[k].max_thrust,
            "hover trim exceeds thrust limit on turbine {k}: {}",
            thrusts[k]
        );
    }

    let direction = body_force.normalize();
    let target = nalgebra::Vector3::z();
    let axis = direction.cross(&target);
    let rotation = if axis.norm() < 1e-14 {
        nalgebra::Matrix3::identity()
    } else {
        let angle = direction.dot(&target).clamp(-1.0, 1.0).acos();
        crate::math::rotation_exp(&(axis.normalize() * angle))
    };

    let q = Configuration {
        base_position,
        base_rotation: rotation,
        joint_positions: DVector::zeros(model.dof()),
    };
    (q, thrusts)
}
