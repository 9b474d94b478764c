//! Scripted flight scenarios: take off to hover, lose a turbine, recover,
//! then fly an up-down, yaw and forward sequence, with the controller in
//! the loop at 100 Hz over a 1 ms plant (exactly ten plant steps per
//! control step; the controller never sees intra-step states).
//!
//! Each run is one sequential deterministic loop; repeats differ only by
//! their noise seed. Sensor noise (Gaussian RPM noise before quantization,
//! Gaussian velocity noise) defaults to zero for bitwise determinism and
//! is enabled per scenario for robustness campaigns.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerGains, FlightController, IntegralBoundSet, ReferenceSet, SystemState};
use crate::fault::{quantize_rpm, FaultDetector, ThrustRpmMap, TurbineHealthConfig};
use crate::math;
use crate::model::RobotModel;

use crate::plant::{plant_step, trim_hover, PlantConfig, PlantState};
use crate::refgen::ReferenceSolution;
use crate::telemetry::{
    content_hash, csv_columns, RunHeader, TelemetryLog, TelemetryRow, CSV_SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario `{name}`: {reason}")]
    Invalid { name: String, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Gaussian RPM sensor noise (applied before quantization).
    pub rpm_sigma: f64,
    /// Gaussian noise on every measured velocity component.
    pub velocity_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            rpm_sigma: 0.0,
            velocity_sigma: 0.0,
        }
    }
}

/// Smooth (quintic) scripted trajectory: climb, hold, up-down, yaw sweep,
/// forward leg and return.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub climb_height: f64,
    pub climb_start: f64,
    pub climb_duration: f64,
    pub updown_amplitude: f64,
    pub updown_start: f64,
    pub updown_half_duration: f64,
    pub yaw_amplitude: f64,
    pub yaw_start: f64,
    pub yaw_half_duration: f64,
    pub forward_distance: f64,
    pub forward_start: f64,
    pub forward_half_duration: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            climb_height: 0.3,
            climb_start: 1.0,
            climb_duration: 3.0,
            updown_amplitude: 0.4,
            updown_start: 20.0,
            updown_half_duration: 3.0,
            yaw_amplitude: 0.6,
            yaw_start: 26.0,
            yaw_half_duration: 3.0,
            forward_distance: 0.5,
            forward_start: 32.0,
            forward_half_duration: 3.0,
        }
    }
}

/// Bound parametrization knobs (see the controller module).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundConfig {
    pub thrust_rate_limit: f64,
    pub joint_rate_limit: f64,
    pub tanh_sharpness: f64,
    pub fault_ramp_duration: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            thrust_rate_limit: 80.0,
            joint_rate_limit: 1.5,
            tanh_sharpness: 50.0,
            fault_ramp_duration: 0.2,
        }
    }
}

/// Full scenario description (`docs/formats.md`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: f64,
    /// Plant-side fault injection instant and turbine, if any.
    pub fault_time: Option<f64>,
    #[serde(default)]
    pub fault_turbine: usize,
    /// Control period; the plant runs `plant_steps_per_control` substeps.
    pub control_dt: f64,
    pub plant_steps_per_control: u32,
    pub seed: u64,
    pub repeats: usize,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Momentum error norm regarded as "at hover" for recovery metrics.
    pub hover_threshold: f64,
    #[serde(default)]
    pub controller: ControllerGains,
    #[serde(default)]
    pub detector: TurbineHealthConfig,
    #[serde(default)]
    pub bounds: BoundConfig,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    /// Reference-generator problem file used when runs are launched with
    /// the generator enabled (resolved relative to the scenario file).
    #[serde(default)]
    pub refgen_problem: Option<String>,
    /// Hover altitude of the initial trim.
    #[serde(default = "default_altitude")]
    pub initial_altitude: f64,
}

fn default_altitude() -> f64 {
    1.2
}

impl ScenarioSpec {
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let spec: ScenarioSpec = serde_json::from_str(&text)?;
        Ok(spec)
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), ScenarioError> {
        let fail = |reason: String| ScenarioError::Invalid {
            name: self.name.clone(),
            reason,
        };
        if let Some(t) = self.fault_time {
            if t <= 0.0 || t >= self.duration {
                return Err(fail(format!("fault time {t} outside (0, {})", self.duration)));
            }
            if self.fault_turbine >= model.thruster_count() {
                return Err(fail(format!("fault turbine {} out of range", self.fault_turbine)));
            }
        }
        if self.plant_steps_per_control == 0 {
            return Err(fail("plant_steps_per_control must be positive".into()));
        }
        let expected = self.control_dt / self.plant_steps_per_control as f64;
        if (self.plant.dt - expected).abs() > 1e-12 {
            return Err(fail(format!(
                "plant dt {} must equal control_dt/{} = {expected}",
                self.plant.dt, self.plant_steps_per_control
            )));
        }
        Ok(())
    }
}

/// Trajectory evaluation: desired vertical/forward position profile and
/// yaw, with enough derivatives for the momentum references.
struct TrajectorySample {
    velocity: Vector3<f64>,
    acceleration: Vector3<f64>,
    jerk: Vector3<f64>,
    yaw: f64,
    yaw_rate: f64,
}

fn sample_trajectory(config: &TrajectoryConfig, time: f64) -> TrajectorySample {
    let mut velocity = Vector3::zeros();
    let mut acceleration = Vector3::zeros();
    let mut jerk = Vector3::zeros();

    // Each segment contributes amplitude * quintic((t-t0)/T) to one axis.
    let mut add = |axis: usize, amplitude: f64, start: f64, duration: f64| {
        if duration <= 0.0 {
            return;
        }
        let phase = (time - start) / duration;
        if (0.0..=1.0).contains(&phase) {
            let (_, dp, ddp, dddp) = math::quintic(phase);
            velocity[axis] += amplitude * dp / duration;
            acceleration[axis] += amplitude * ddp / (duration * duration);
            jerk[axis] += amplitude * dddp / (duration * duration * duration);
        }
    };

    add(2, config.climb_height, config.climb_start, config.climb_duration);
    add(2, config.updown_amplitude, config.updown_start, config.updown_half_duration);
    add(
        2,
        -config.updown_amplitude,
        config.updown_start + config.updown_half_duration,
        config.updown_half_duration,
    );
    add(0, config.forward_distance, config.forward_start, config.forward_half_duration);
    add(
        0,
        -config.forward_distance,
        config.forward_start + config.forward_half_duration,
        config.forward_half_duration,
    );

    let mut yaw = 0.0;
    let mut yaw_rate = 0.0;
    for (amp, start) in [
        (config.yaw_amplitude, config.yaw_start),
        (-config.yaw_amplitude, config.yaw_start + config.yaw_half_duration),
    ] {
        let phase = (time - start) / config.yaw_half_duration;
        if phase > 0.0 {
            let (p, dp, _, _) = math::quintic(phase.min(1.0));
            yaw += amp * p;
            if phase <= 1.0 {
                yaw_rate += amp * dp / config.yaw_half_duration;
            }
        }
    }

    TrajectorySample {
        velocity,
        acceleration,
        jerk,
        yaw,
        yaw_rate,
    }
}

/// Build controller references at `time`: scripted momentum trajectory on
/// top of either the nominal trim attitude/posture or, after detection
/// with the generator enabled, the optimized fault references.
fn references_at(
    spec: &ScenarioSpec,
    model: &RobotModel,
    trim_attitude: &Matrix3<f64>,
    fault_refs: Option<&ReferenceSet>,
    time: f64,
) -> ReferenceSet {
    let sample = sample_trajectory(&spec.trajectory, time);
    let mass = model.total_mass();
    let (base_attitude, posture) = match fault_refs {
        Some(refs) => (refs.attitude, refs.posture.clone()),
        None => (*trim_attitude, DVector::zeros(model.dof())),
    };
    let attitude = math::rotation_from_rpy(&Vector3::new(0.0, 0.0, sample.yaw)) * base_attitude;
    ReferenceSet {
        momentum_linear: sample.velocity * mass,
        momentum_linear_rate: sample.acceleration * mass,
        momentum_linear_accel: sample.jerk * mass,
        attitude,
        angular_rate_body: attitude.transpose() * Vector3::new(0.0, 0.0, sample.yaw_rate),
        posture,
        thrusts: None,
    }
}

/// Outcome of one run.
#[derive(Debug)]
pub struct RunResult {
    pub log: TelemetryLog,
    pub aborted: Option<String>,
    pub detection_time: Option<f64>,
}

/// Execute one deterministic run of the scenario.
pub fn run_scenario(
    model: &RobotModel,
    model_text: &str,
    spec: &ScenarioSpec,
    run_index: usize,
    with_refgen: bool,
    fault_reference: Option<&ReferenceSolution>,
) -> RunResult {
    let n = model.dof();
    let n_p = model.thruster_count();
    let control_dt = spec.control_dt;
    let ticks = (spec.duration / control_dt).round() as u64;
    let seed = spec.seed.wrapping_add(run_index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (trim_q, trim_thrusts) = trim_hover(model, Vector3::new(0.0, 0.0, spec.initial_altitude));
    let trim_attitude = trim_q.base_rotation;
    let mut plant = PlantState::settled_balanced(model, &spec.plant, trim_q, trim_thrusts.clone());

    let bounds = IntegralBoundSet::for_model(
        model,
        spec.bounds.thrust_rate_limit,
        spec.bounds.joint_rate_limit,
        spec.bounds.tanh_sharpness,
        spec.bounds.fault_ramp_duration,
    );
    let mut controller = FlightController::new(model, spec.controller.clone(), bounds, control_dt);
    let maps = ThrustRpmMap::all_from_model(model);
    let mut detector = FaultDetector::new(spec.detector.clone(), maps.clone(), trim_thrusts);

    let fault_set = fault_reference.map(|r| r.reference_set());
    let mut detection_time: Option<f64> = None;
    let mut aborted: Option<String> = None;
    let mut last_thrust_rates = DVector::zeros(n_p);
    let mut rows = Vec::with_capacity(ticks as usize);

    'ticks: for tick in 0..ticks {
        let time = tick as f64 * control_dt;

        // Sensor path: Gaussian RPM noise, then quantization.
        let rpm_measured = DVector::from_fn(n_p, |k, _| {
            let noise: f64 = rng.sample::<f64, _>(rand_distr_standard()) * spec.noise.rpm_sigma;
            quantize_rpm((plant.rpm[k] + noise).max(0.0), spec.detector.quantization_step)
        });
        let thrust_measured = DVector::from_fn(n_p, |k, _| maps[k].rpm_to_thrust(rpm_measured[k]));
        let mut nu_measured = plant.nu.clone();
        if spec.noise.velocity_sigma > 0.0 {
            for i in 0..3 {
                nu_measured.base_linear[i] +=
                    rng.sample::<f64, _>(rand_distr_standard()) * spec.noise.velocity_sigma;
                nu_measured.base_angular[i] +=
                    rng.sample::<f64, _>(rand_distr_standard()) * spec.noise.velocity_sigma;
            }
            for j in 0..n {
                nu_measured.joint_velocities[j] +=
                    rng.sample::<f64, _>(rand_distr_standard()) * spec.noise.velocity_sigma;
            }
        }

        // Detector consumes the command that has been acting over the
        // previous period.
        let status = detector.step(&rpm_measured, &last_thrust_rates, control_dt).clone();
        if detection_time.is_none() {
            detection_time = status.earliest_fault_time();
        }

        let active_fault_refs = match (&fault_set, with_refgen, detection_time) {
            (Some(refs), true, Some(_)) => Some(refs),
            _ => None,
        };
        let refs = references_at(spec, model, &trim_attitude, active_fault_refs, time);

        let state = SystemState {
            q: plant.q.clone(),
            nu: nu_measured,
            thrusts: thrust_measured.clone(),
            rpm: rpm_measured.clone(),
        };
        let command = controller.control_step(model, &state, &refs, &status, time);
        last_thrust_rates = command.thrust_rates.clone();

        // Exactly `plant_steps_per_control` plant substeps per tick.
        for _ in 0..spec.plant_steps_per_control {
            if let Some(fault_time) = spec.fault_time {
                if plant.time >= fault_time && plant.fault_injected[spec.fault_turbine].is_none() {
                    plant.inject_fault(spec.fault_turbine);
                }
            }
            if let Err(e) = plant_step(
                model,
                &spec.plant,
                &mut plant,
                &command.thrust_rates,
                &command.joint_rates,
            ) {
                aborted = Some(e.to_string());
                rows.push(make_row(tick, time, &plant, &rpm_measured, &detector, &status, &command));
                break 'ticks;
            }
        }

        rows.push(make_row(tick, time, &plant, &rpm_measured, &detector, &status, &command));
    }

    let header = RunHeader {
        schema_version: CSV_SCHEMA_VERSION,
        scenario_name: spec.name.clone(),
        run_index,
        seed,
        model_hash: content_hash(model_text.as_bytes()),
        with_reference_generator: with_refgen,
        scenario: serde_json::to_value(spec).unwrap_or(serde_json::Value::Null),
        aborted: aborted.clone(),
        detection_time,
    };
    RunResult {
        log: TelemetryLog {
            header,
            columns: csv_columns(n, n_p),
            rows,
        },
        aborted,
        detection_time,
    }
}

fn make_row(
    tick: u64,
    time: f64,
    plant: &PlantState,
    rpm_measured: &DVector<f64>,
    detector: &FaultDetector,
    status: &crate::fault::FaultStatus,
    command: &crate::controller::ControlCommand,
) -> TelemetryRow {
    let rpy = math::rpy_from_rotation(&plant.q.base_rotation);
    TelemetryRow {
        tick,
        time,
        position: [
            plant.q.base_position.x,
            plant.q.base_position.y,
            plant.q.base_position.z,
        ],
        rpy: [rpy.x, rpy.y, rpy.z],
        joints: plant.q.joint_positions.as_slice().to_vec(),
        base_linear_velocity: [
            plant.nu.base_linear.x,
            plant.nu.base_linear.y,
            plant.nu.base_linear.z,
        ],
        base_angular_velocity: [
            plant.nu.base_angular.x,
            plant.nu.base_angular.y,
            plant.nu.base_angular.z,
        ],
        joint_rates: plant.nu.joint_velocities.as_slice().to_vec(),
        thrusts: plant.thrusts.as_slice().to_vec(),
        rpm_measured: rpm_measured.as_slice().to_vec(),
        rpm_reference: detector.reference_rpm().as_slice().to_vec(),
        detector_states: status.turbines.iter().map(|t| t.state.index()).collect(),
        linear_momentum_error: command.linear_momentum_error_norm,
        angular_momentum_error: command.angular_momentum_error_norm,
        momentum_error: command.momentum_error_norm,
        joint_error: command.joint_error_norm,
        qp_iterations: command.qp_iterations as u64,
        qp_residual: command.qp_residual,
        qp_held: match command.qp_status {
            crate::controller::QpStatus::Converged => 0,
            crate::controller::QpStatus::HeldPrevious => 1,
        },
        thrust_rate_commands: command.thrust_rates.as_slice().to_vec(),
        joint_rate_commands: command.joint_rates.as_slice().to_vec(),
    }
}

/// Standard-normal sampling without an extra dependency: Box-Muller on the
/// unit interval, deterministic under the seeded generator.
fn rand_distr_standard() -> StandardNormal {
    StandardNormal
}

pub struct StandardNormal;

impl rand::distributions::Distribution<f64> for StandardNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn jetbot() -> (RobotModel, String) {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/jetbot.json");
        let text = std::fs::read_to_string(path).unwrap();
        (RobotModel::from_json(&text).unwrap(), text)
    }

    fn short_spec() -> ScenarioSpec {
        ScenarioSpec {
            name: "unit".into(),
            duration: 2.0,
            fault_time: None,
            fault_turbine: 0,
            control_dt: 0.01,
            plant_steps_per_control: 10,
            seed: 42,
            repeats: 1,
            noise: NoiseConfig::default(),
            hover_threshold: 1.0,
            controller: ControllerGains::default(),
            detector: TurbineHealthConfig::default(),
            bounds: BoundConfig::default(),
            plant: crate::plant::PlantConfig::default(),
            trajectory: TrajectoryConfig {
                climb_start: 0.5,
                climb_duration: 1.0,
                climb_height: 0.1,
                updown_start: 100.0,
                yaw_start: 100.0,
                forward_start: 100.0,
                ..TrajectoryConfig::default()
            },
            refgen_problem: None,
            initial_altitude: 1.2,
        }
    }

    #[test]
    fn trajectory_is_smooth_and_returns_to_rest() {
        let config = TrajectoryConfig::default();
        let mut previous = sample_trajectory(&config, 0.0).velocity;
        for tick in 1..4000 {
            let t = tick as f64 * 0.01;
            let sample = sample_trajectory(&config, t);
            assert!((sample.velocity - previous).norm() < 0.05, "jump at {t}");
            previous = sample.velocity;
        }
        let end = sample_trajectory(&config, 39.9);
        assert_relative_eq!(end.velocity.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(end.yaw, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_bad_rate_contract() {
        let (model, _) = jetbot();
        let mut spec = short_spec();
        spec.plant.dt = 0.002;
        assert!(spec.validate(&model).is_err());
        let mut spec = short_spec();
        spec.fault_time = Some(5.0);
        assert!(spec.validate(&model).is_err(), "fault beyond duration");
    }

    #[test]
    fn nominal_hover_stays_quiet() {
        let (model, text) = jetbot();
        let spec = short_spec();
        spec.validate(&model).unwrap();
        let result = run_scenario(&model, &text, &spec, 0, false, None);
        assert!(result.aborted.is_none(), "{:?}", result.aborted);
        assert!(result.detection_time.is_none());
        let max_err = result
            .log
            .rows
            .iter()
            .map(|r| r.momentum_error)
            .fold(0.0, f64::max);
        assert!(max_err < 1.0, "momentum error peaked at {max_err}");
        // Ten plant steps per control tick: the rate contract.
        assert_eq!(result.log.rows.len(), 200);
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_logs() {
        let (model, text) = jetbot();
        let mut spec = short_spec();
        spec.noise = NoiseConfig {
            rpm_sigma: 50.0,
            velocity_sigma: 1e-4,
        };
        let a = run_scenario(&model, &text, &spec, 3, false, None);
        let b = run_scenario(&model, &text, &spec, 3, false, None);
        let lines_a: Vec<String> = a.log.rows.iter().map(|r| r.to_csv_line()).collect();
        let lines_b: Vec<String> = b.log.rows.iter().map(|r| r.to_csv_line()).collect();
        assert_eq!(lines_a, lines_b);
        // Different run index reseeds the noise.
        let c = run_scenario(&model, &text, &spec, 4, false, None);
        let lines_c: Vec<String> = c.log.rows.iter().map(|r| r.to_csv_line()).collect();
        assert_ne!(lines_a, lines_c);
    }

    #[test]
    fn fault_is_detected_and_logged() {
        let (model, text) = jetbot();
        let mut spec = short_spec();
        spec.duration = 3.0;
        spec.fault_time = Some(1.0);
        spec.fault_turbine = 1;
        let result = run_scenario(&model, &text, &spec, 0, false, None);
        assert!(result.aborted.is_none(), "{:?}", result.aborted);
        let detect = result.detection_time.expect("fault must be detected");
        assert!((detect - 1.0) < 0.5, "detected at {detect}");
        let final_states = &result.log.rows.last().unwrap().detector_states;
        assert_eq!(final_states[1], 2, "turbine off by end of run");
        assert_eq!(final_states[0], 0);
    }
}
