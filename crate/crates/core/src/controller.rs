//! Momentum-based QP flight controller with fault awareness.
//!
//! Each control period (100 Hz) stacks three weighted least-squares tasks
//! over the input `u = (Ṫ, ṡ)`:
//!
//! - linear momentum acceleration tracking a PID law,
//! - angular momentum acceleration from an SO(3) attitude law,
//! - a postural task `ṡ* = −K_s (s − s^d)` resolving redundancy,
//!
//! and solves the box QP with tanh-parametrized bounds that fold thrust
//! and joint *position* limits into the rate-level constraint. A detected
//! turbine fault ramps that turbine's thrust upper integral bound to zero
//! and temporarily scales the momentum task weights down by `α`.
//!
//! Momentum errors are evaluated with the velocity measured at the
//! previous control step (one-step delay), which breaks the algebraic
//! loop between the commanded joint rates and the momentum error at the
//! cost of one control period of lag.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::fault::{FaultStatus, TurbineState};
use crate::math;
use crate::model::RobotModel;
use crate::momentum;
use crate::multibody::{self, Configuration, SystemVelocity};
use crate::qp::{self, BoxQp, QpError, Task};

/// Controller view of the plant at one tick: configuration, velocity,
/// measured thrusts and turbine RPM.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub q: Configuration,
    pub nu: SystemVelocity,
    pub thrusts: DVector<f64>,
    pub rpm: DVector<f64>,
}

/// Gains and task weights (serialized inside the scenario config).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Diagonal entries of `K_P`, `K_D`, `K_I` for the linear momentum PID.
    pub kp_linear: [f64; 3],
    pub kd_linear: [f64; 3],
    pub ki_linear: [f64; 3],
    /// Anti-windup clamp on each component of the momentum error integral.
    pub integral_limit: f64,
    /// Attitude stiffness `K_R`, damping `K_ω` and momentum-rate damping.
    pub attitude_stiffness: f64,
    pub attitude_damping: f64,
    pub attitude_rate_damping: f64,
    /// Postural gain `K_s` (per joint).
    pub postural_gain: f64,
    /// Task weights `W_l`, `W_w`, `W_s`.
    pub weight_linear: f64,
    pub weight_angular: f64,
    pub weight_postural: f64,
    /// Fault-transient weight scaling `α > 0` and ramp duration (s).
    pub alpha: f64,
    pub schedule_duration: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp_linear: [16.0; 3],
            kd_linear: [7.0; 3],
            ki_linear: [10.0; 3],
            integral_limit: 20.0,
            attitude_stiffness: 15.0,
            attitude_damping: 18.5,
            attitude_rate_damping: 7.5,
            postural_gain: 1.5,
            weight_linear: 1.0,
            weight_angular: 1.0,
            weight_postural: 0.05,
            alpha: 10.0,
            schedule_duration: 2.0,
        }
    }
}

impl ControllerGains {
    pub fn kp(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.kp_linear))
    }
    pub fn kd(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.kd_linear))
    }
    pub fn ki(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.ki_linear))
    }
}

/// Position-level (integral) and rate-level bounds on `I_u = (T, s)` and
/// `u = (Ṫ, ṡ)`, with tanh sharpness normalized per unit of bound range so
/// the shape is unit-independent.
#[derive(Debug, Clone)]
pub struct IntegralBoundSet {
    pub iu_lower: DVector<f64>,
    pub iu_upper: DVector<f64>,
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
    /// Normalized sharpness; effective per-coordinate sharpness is
    /// `eps / (iu_upper − iu_lower)` where the range is finite.
    pub eps_lower: f64,
    pub eps_upper: f64,
    /// Duration of the smoothstep ramp driving a faulty turbine's thrust
    /// upper bound to zero (s).
    pub fault_ramp_duration: f64,
}

impl IntegralBoundSet {
    /// Bounds for a model: thrust in `[0, T_max]`, joints at their limits,
    /// rate bounds supplied by the caller.
    pub fn for_model(
        model: &RobotModel,
        thrust_rate_limit: f64,
        joint_rate_limit: f64,
        eps: f64,
        fault_ramp_duration: f64,
    ) -> Self {
        let n_p = model.thruster_count();
        let n = model.dof();
        let dim = n_p + n;
        let mut iu_lower = DVector::zeros(dim);
        let mut iu_upper = DVector::zeros(dim);
        for k in 0..n_p {
            iu_upper[k] = model.thrusters[k].max_thrust;
        }
        let (lo, hi) = model.joint_limits();
        for j in 0..n {
            iu_lower[n_p + j] = lo[j];
            iu_upper[n_p + j] = hi[j];
        }
        let mut u_lower = DVector::from_element(dim, -joint_rate_limit);
        let mut u_upper = DVector::from_element(dim, joint_rate_limit);
        for k in 0..n_p {
            u_lower[k] = -thrust_rate_limit;
            u_upper[k] = thrust_rate_limit;
        }
        Self {
            iu_lower,
            iu_upper,
            u_lower,
            u_upper,
            eps_lower: eps,
            eps_upper: eps,
            fault_ramp_duration,
        }
    }

    fn effective_eps(&self, eps: f64, i: usize) -> f64 {
        let range = self.iu_upper[i] - self.iu_lower[i];
        if range.is_finite() && range > 0.0 {
            eps / range
        } else {
            eps
        }
    }

    /// tanh bound parametrization, elementwise:
    /// `th(ε_l (I_u − lb)) lb_u ≤ u ≤ th(ε_u (ub − I_u)) ub_u`.
    pub fn parametrized_bounds(&self, iu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let dim = iu.len();
        let lower = DVector::from_fn(dim, |i, _| {
            let eps = self.effective_eps(self.eps_lower, i);
            (eps * (iu[i] - self.iu_lower[i])).tanh() * self.u_lower[i]
        });
        let upper = DVector::from_fn(dim, |i, _| {
            let eps = self.effective_eps(self.eps_upper, i);
            (eps * (self.iu_upper[i] - iu[i])).tanh() * self.u_upper[i]
        });
        (lower, upper)
    }
}

/// Ramp a faulty turbine's thrust upper integral bound to zero with a
/// smoothstep profile starting at its detection time; everything else is
/// untouched and the output is continuous in time.
pub fn apply_fault_saturation(
    bounds: &IntegralBoundSet,
    fault: &FaultStatus,
    time: f64,
) -> IntegralBoundSet {
    let mut out = bounds.clone();
    for (k, turbine) in fault.turbines.iter().enumerate() {
        if turbine.state >= TurbineState::Fault {
            if let Some(t0) = turbine.fault_time {
                let progress = math::smoothstep((time - t0) / bounds.fault_ramp_duration);
                out.iu_upper[k] = bounds.iu_upper[k] * (1.0 - progress);
            }
        }
    }
    out
}

/// Momentum task weights during the fault transient: linear interpolation
/// from `W` down to `W/α` over the schedule duration and back over the
/// following one, anchored at the detection time. Targets are never
/// touched, only weights.
pub fn schedule_weights(gains: &ControllerGains, fault: &FaultStatus, time: f64) -> (f64, f64) {
    let nominal = (gains.weight_linear, gains.weight_angular);
    let Some(t0) = fault.earliest_fault_time() else {
        return nominal;
    };
    let scaled = (
        gains.weight_linear / gains.alpha,
        gains.weight_angular / gains.alpha,
    );
    let d = gains.schedule_duration;
    let elapsed = time - t0;
    let blend = if elapsed < 0.0 {
        0.0
    } else if elapsed < d {
        elapsed / d
    } else if elapsed < 2.0 * d {
        1.0 - (elapsed - d) / d
    } else {
        0.0
    };
    (
        nominal.0 + (scaled.0 - nominal.0) * blend,
        nominal.1 + (scaled.1 - nominal.1) * blend,
    )
}

/// References tracked by the controller.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    /// Desired linear momentum and its first two derivatives.
    pub momentum_linear: Vector3<f64>,
    pub momentum_linear_rate: Vector3<f64>,
    pub momentum_linear_accel: Vector3<f64>,
    /// Desired base attitude.
    pub attitude: Matrix3<f64>,
    /// Desired body-frame angular velocity (zero for static references).
    pub angular_rate_body: Vector3<f64>,
    /// Desired posture.
    pub posture: DVector<f64>,
    /// Optional desired thrusts from the reference generator.
    pub thrusts: Option<DVector<f64>>,
}

impl ReferenceSet {
    pub fn hover(model: &RobotModel, posture: DVector<f64>) -> Self {
        let _ = model;
        Self {
            momentum_linear: Vector3::zeros(),
            momentum_linear_rate: Vector3::zeros(),
            momentum_linear_accel: Vector3::zeros(),
            attitude: Matrix3::identity(),
            angular_rate_body: Vector3::zeros(),
            posture,
            thrusts: None,
        }
    }
}

/// PID law for the desired linear momentum acceleration:
/// `l̈* = l̈^d − K_D l̃̇ − K_P l̃ − K_I ∫ l̃`.
pub fn desired_linear_momentum_acceleration(
    momentum_error: &Vector3<f64>,
    momentum_rate_error: &Vector3<f64>,
    integral: &Vector3<f64>,
    refs: &ReferenceSet,
    gains: &ControllerGains,
) -> Vector3<f64> {
    refs.momentum_linear_accel
        - gains.kd() * momentum_rate_error
        - gains.kp() * momentum_error
        - gains.ki() * integral
}

/// SO(3) attitude law on the locked-inertia-weighted angular momentum, in
/// body coordinates:
/// `ẅ* = −K_R I(s) e_R − K_ω (ᴮw − I(s) ω_ref) − K_ẇ ᴮẇ`
/// with `e_R = ½ (R_dᵀ R_B − R_Bᵀ R_d)∨`. The momentum-rate damping term
/// `K_ẇ ᴮẇ` closes the triple-integrator chain from commanded momentum
/// acceleration to attitude; without it no gain choice stabilizes the
/// loop. All three terms vanish at the attitude equilibrium.
pub fn desired_angular_momentum_acceleration(
    model: &RobotModel,
    state: &SystemState,
    body_momentum: &Vector3<f64>,
    refs: &ReferenceSet,
    gains: &ControllerGains,
) -> Vector3<f64> {
    let locked = multibody::locked_inertia(model, &state.q.joint_positions)
        .expect("state dimension matches model");
    let rb = &state.q.base_rotation;
    let error_matrix = refs.attitude.transpose() * rb - rb.transpose() * refs.attitude;
    let attitude_error = 0.5 * math::vee(&error_matrix);
    let momentum_error = body_momentum - locked * refs.angular_rate_body;
    let body_momentum_rate =
        rb.transpose() * momentum::momentum_rate(model, &state.q, &state.thrusts).angular;
    -gains.attitude_stiffness * (locked * attitude_error)
        - gains.attitude_damping * momentum_error
        - gains.attitude_rate_damping * body_momentum_rate
}

/// Why the command returned by a control step is what it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Converged,
    /// QP failed to converge; the previous command was held.
    HeldPrevious,
}

/// One control step output: the input command and diagnostics for
/// telemetry.
#[derive(Debug, Clone)]
pub struct ControlCommand {
    /// Commanded thrust rates `Ṫ*` (N/s).
    pub thrust_rates: DVector<f64>,
    /// Commanded joint velocities `ṡ*` (rad/s).
    pub joint_rates: DVector<f64>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub qp_residual: f64,
    /// `√(|l̃|² + |w̃|²)` with the angular error in body coordinates.
    pub momentum_error_norm: f64,
    pub linear_momentum_error_norm: f64,
    pub angular_momentum_error_norm: f64,
    /// `|s − s^d|`.
    pub joint_error_norm: f64,
}

impl ControlCommand {
    pub fn stacked(&self) -> DVector<f64> {
        let n_p = self.thrust_rates.len();
        let n = self.joint_rates.len();
        let mut u = DVector::zeros(n_p + n);
        u.rows_mut(0, n_p).copy_from(&self.thrust_rates);
        u.rows_mut(n_p, n).copy_from(&self.joint_rates);
        u
    }
}

/// The flight controller. Owns its mutable state (integral error, delayed
/// velocity, last command); single writer, transferable between threads
/// but not shareable.
#[derive(Debug, Clone)]
pub struct FlightController {
    pub gains: ControllerGains,
    pub bounds: IntegralBoundSet,
    pub dt: f64,
    integral: Vector3<f64>,
    previous_velocity: Option<SystemVelocity>,
    last_command: DVector<f64>,
    qp_tolerance: f64,
    qp_max_iterations: usize,
}

impl FlightController {
    pub fn new(model: &RobotModel, gains: ControllerGains, bounds: IntegralBoundSet, dt: f64) -> Self {
        let dim = model.thruster_count() + model.dof();
        Self {
            gains,
            bounds,
            dt,
            integral: Vector3::zeros(),
            previous_velocity: None,
            last_command: DVector::zeros(dim),
            qp_tolerance: 1e-12,
            qp_max_iterations: 100,
        }
    }

    pub fn reset(&mut self) {
        self.integral = Vector3::zeros();
        self.previous_velocity = None;
        self.last_command.fill(0.0);
    }

    /// Run one 100 Hz control step.
    pub fn control_step(
        &mut self,
        model: &RobotModel,
        state: &SystemState,
        refs: &ReferenceSet,
        fault: &FaultStatus,
        time: f64,
    ) -> ControlCommand {
        let n_p = model.thruster_count();
        let n = model.dof();

        // One-step-delayed velocity for every velocity-dependent term.
        let nu_used = self
            .previous_velocity
            .clone()
            .unwrap_or_else(|| state.nu.clone());

        let cm = multibody::centroidal_momentum(model, &state.q, &nu_used);
        let linear_momentum = cm.momentum.fixed_rows::<3>(0).into_owned();
        let body_momentum =
            state.q.base_rotation.transpose() * cm.momentum.fixed_rows::<3>(3).into_owned();

        let momentum_error = linear_momentum - refs.momentum_linear;
        let rate = momentum::momentum_rate(model, &state.q, &state.thrusts);
        let momentum_rate_error = rate.linear - refs.momentum_linear_rate;

        self.integral += momentum_error * self.dt;
        let cap = self.gains.integral_limit;
        self.integral = self.integral.map(|v| v.clamp(-cap, cap));

        let linear_target = desired_linear_momentum_acceleration(
            &momentum_error,
            &momentum_rate_error,
            &self.integral,
            refs,
            &self.gains,
        );
        let angular_target =
            desired_angular_momentum_acceleration(model, state, &body_momentum, refs, &self.gains);

        let map = momentum::momentum_acceleration_map(model, &state.q, &nu_used, &state.thrusts);
        let (weight_linear, weight_angular) = schedule_weights(&self.gains, fault, time);

        let drift_linear = map.drift.fixed_rows::<3>(0).into_owned();
        let drift_angular = map.drift.fixed_rows::<3>(3).into_owned();
        let mut posture_selector = DMatrix::zeros(n, n_p + n);
        for j in 0..n {
            posture_selector[(j, n_p + j)] = 1.0;
        }
        let posture_target = DVector::from_fn(n, |j, _| {
            -self.gains.postural_gain * (state.q.joint_positions[j] - refs.posture[j])
        });

        let tasks = [
            Task::new(
                map.lambda.rows(0, 3).into_owned(),
                DVector::from_column_slice((linear_target - drift_linear).as_slice()),
                weight_linear,
            ),
            Task::new(
                map.lambda.rows(3, 3).into_owned(),
                DVector::from_column_slice((angular_target - drift_angular).as_slice()),
                weight_angular,
            ),
            Task::new(posture_selector, posture_target, self.gains.weight_postural),
        ];
        let (hessian, gradient) = qp::stack_tasks(&tasks).expect("consistent task dimensions");

        let saturated = apply_fault_saturation(&self.bounds, fault, time);
        let mut iu = DVector::zeros(n_p + n);
        iu.rows_mut(0, n_p).copy_from(&state.thrusts);
        iu.rows_mut(n_p, n).copy_from(&state.q.joint_positions);
        let (lower, upper) = saturated.parametrized_bounds(&iu);

        let problem = BoxQp {
            hessian,
            gradient,
            lower,
            upper,
        };
        let (u, status, iterations, residual) = match qp::solve_box_qp_from(
            &problem,
            &self.last_command,
            self.qp_tolerance,
            self.qp_max_iterations,
        ) {
            Ok(sol) => (sol.x, QpStatus::Converged, sol.iterations, sol.kkt_residual),
            Err(QpError::NonConvergence {
                iterations,
                residual,
                ..
            }) => {
                log::warn!("QP did not converge at t={time:.3} (residual {residual:.3e}); holding previous command");
                (
                    self.last_command.clone(),
                    QpStatus::HeldPrevious,
                    iterations,
                    residual,
                )
            }
            Err(other) => panic!("malformed QP: {other}"),
        };

        self.last_command = u.clone();
        self.previous_velocity = Some(state.nu.clone());

        let angular_momentum_error = body_momentum
            - multibody::locked_inertia(model, &state.q.joint_positions).unwrap()
                * refs.angular_rate_body;
        let joint_error = &state.q.joint_positions - &refs.posture;
        ControlCommand {
            thrust_rates: u.rows(0, n_p).into_owned(),
            joint_rates: u.rows(n_p, n).into_owned(),
            qp_status: status,
            qp_iterations: iterations,
            qp_residual: residual,
            momentum_error_norm: (momentum_error.norm_squared()
                + angular_momentum_error.norm_squared())
            .sqrt(),
            linear_momentum_error_norm: momentum_error.norm(),
            angular_momentum_error_norm: angular_momentum_error.norm(),
            joint_error_norm: joint_error.norm(),
        }
    }
}
