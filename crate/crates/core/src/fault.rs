//! RPM-based turbine fault detection.
//!
//! Each turbine's measured RPM (quantized to the sensor step) is compared
//! against a reference RPM obtained by integrating the commanded thrust
//! rates and applying a static thrust↔RPM map. An error that stays above
//! `rpm_threshold` for longer than `hold_time` flags a fault (state 1);
//! measured RPM at or below `idle_rpm` while faulted flags the turbine as
//! off (state 2). States never regress: only complete faults are modeled,
//! no recovery.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::model::RobotModel;

/// Static thrust↔RPM map `T = T_max (RPM / RPM_max)²`, the standard
/// momentum-theory shape. Swappable per config by changing the endpoints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThrustRpmMap {
    pub max_thrust: f64,
    pub max_rpm: f64,
}

impl ThrustRpmMap {
    pub fn from_model(model: &RobotModel, turbine: usize) -> Self {
        Self {
            max_thrust: model.thrusters[turbine].max_thrust,
            max_rpm: model.thrusters[turbine].max_rpm,
        }
    }

    pub fn all_from_model(model: &RobotModel) -> Vec<Self> {
        (0..model.thruster_count())
            .map(|k| Self::from_model(model, k))
            .collect()
    }

    /// Thrust (N) to RPM; out-of-range thrust is clamped with a warning.
    pub fn thrust_to_rpm(&self, thrust: f64) -> f64 {
        let clamped = thrust.clamp(0.0, self.max_thrust);
        if clamped != thrust {
            log::warn!("thrust {thrust} N outside [0, {}], clamped", self.max_thrust);
        }
        self.max_rpm * (clamped / self.max_thrust).sqrt()
    }

    /// RPM to thrust (N); out-of-range RPM is clamped with a warning.
    pub fn rpm_to_thrust(&self, rpm: f64) -> f64 {
        let clamped = rpm.clamp(0.0, self.max_rpm);
        if clamped != rpm {
            log::warn!("rpm {rpm} outside [0, {}], clamped", self.max_rpm);
        }
        let ratio = clamped / self.max_rpm;
        self.max_thrust * ratio * ratio
    }
}

/// Floor quantization to the sensor step (matches real RPM readouts).
pub fn quantize_rpm(rpm: f64, step: f64) -> f64 {
    if step <= 0.0 {
        return rpm;
    }
    (rpm / step).floor() * step
}

/// Detector thresholds. The RPM error threshold is user-defined; the
/// shipped default leaves margin for spool lag during aggressive
/// transients on healthy turbines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurbineHealthConfig {
    /// RPM error magnitude that counts as anomalous.
    pub rpm_threshold: f64,
    /// How long the error must persist before flagging a fault (s).
    pub hold_time: f64,
    /// Measured RPM at or below this value means the turbine is off.
    pub idle_rpm: f64,
    /// Sensor quantization step (RPM).
    pub quantization_step: f64,
}

impl Default for TurbineHealthConfig {
    fn default() -> Self {
        Self {
            rpm_threshold: 12_000.0,
            hold_time: 0.3,
            idle_rpm: 0.0,
            quantization_step: 100.0,
        }
    }
}

/// Per-turbine detector state, ordered: `Nominal < Fault < Off`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TurbineState {
    Nominal = 0,
    Fault = 1,
    Off = 2,
}

impl TurbineState {
    pub fn index(self) -> u8 {
        self as u8
    }
}

/// Detector output for one turbine with state-entry timestamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurbineStatus {
    pub state: TurbineState,
    /// Time of entry into state 1.
    pub fault_time: Option<f64>,
    /// Time of entry into state 2.
    pub off_time: Option<f64>,
    /// Error-hold accumulator (s).
    pub hold: f64,
}

impl TurbineStatus {
    fn nominal() -> Self {
        Self {
            state: TurbineState::Nominal,
            fault_time: None,
            off_time: None,
            hold: 0.0,
        }
    }
}

/// Detector state for all turbines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultStatus {
    pub turbines: Vec<TurbineStatus>,
}

impl FaultStatus {
    pub fn nominal(count: usize) -> Self {
        Self {
            turbines: vec![TurbineStatus::nominal(); count],
        }
    }

    /// Earliest state-1 entry among all turbines, if any.
    pub fn earliest_fault_time(&self) -> Option<f64> {
        self.turbines
            .iter()
            .filter_map(|t| t.fault_time)
            .min_by(|a, b| a.total_cmp(b))
    }

    pub fn any_fault(&self) -> bool {
        self.turbines.iter().any(|t| t.state != TurbineState::Nominal)
    }
}

/// Reference RPM tracker: trapezoidal integration of commanded thrust
/// rates, clamped to the map range before conversion.
#[derive(Debug, Clone)]
pub struct ReferenceRpmTracker {
    maps: Vec<ThrustRpmMap>,
    thrust_estimate: DVector<f64>,
    previous_rate: Option<DVector<f64>>,
}

impl ReferenceRpmTracker {
    pub fn new(maps: Vec<ThrustRpmMap>, initial_thrusts: DVector<f64>) -> Self {
        Self {
            maps,
            thrust_estimate: initial_thrusts,
            previous_rate: None,
        }
    }

    /// Integrate one control period of commanded thrust rates.
    pub fn step(&mut self, thrust_rates: &DVector<f64>, dt: f64) {
        let previous = self
            .previous_rate
            .clone()
            .unwrap_or_else(|| thrust_rates.clone());
        for k in 0..self.thrust_estimate.len() {
            let integrated = self.thrust_estimate[k] + 0.5 * dt * (previous[k] + thrust_rates[k]);
            self.thrust_estimate[k] = integrated.clamp(0.0, self.maps[k].max_thrust);
        }
        self.previous_rate = Some(thrust_rates.clone());
    }

    /// Current reference RPM per turbine.
    pub fn reference_rpm(&self) -> DVector<f64> {
        DVector::from_fn(self.thrust_estimate.len(), |k, _| {
            self.maps[k].thrust_to_rpm(self.thrust_estimate[k])
        })
    }

    pub fn thrust_estimate(&self) -> &DVector<f64> {
        &self.thrust_estimate
    }
}

/// Threshold-plus-timer fault detector; single writer, transferable
/// between threads.
#[derive(Debug, Clone)]
pub struct FaultDetector {
    pub config: TurbineHealthConfig,
    tracker: ReferenceRpmTracker,
    status: FaultStatus,
    /// Integer hold counters; float accumulation would break the exact
    /// `hold_time + one tick` latency contract.
    hold_ticks: Vec<u64>,
    time: f64,
}

impl FaultDetector {
    pub fn new(
        config: TurbineHealthConfig,
        maps: Vec<ThrustRpmMap>,
        initial_thrusts: DVector<f64>,
    ) -> Self {
        let count = maps.len();
        Self {
            config,
            tracker: ReferenceRpmTracker::new(maps, initial_thrusts),
            status: FaultStatus::nominal(count),
            hold_ticks: vec![0; count],
            time: 0.0,
        }
    }

    pub fn status(&self) -> &FaultStatus {
        &self.status
    }

    pub fn reference_rpm(&self) -> DVector<f64> {
        self.tracker.reference_rpm()
    }

    /// Advance one detector tick. `measured_rpm` must already be quantized
    /// to `config.quantization_step` (floor), matching the sensor path;
    /// `commanded_thrust_rates` is the controller output of the same tick.
    pub fn step(
        &mut self,
        measured_rpm: &DVector<f64>,
        commanded_thrust_rates: &DVector<f64>,
        dt: f64,
    ) -> &FaultStatus {
        self.time += dt;
        self.tracker.step(commanded_thrust_rates, dt);
        let reference = self.tracker.reference_rpm();
        let ticks_needed = (self.config.hold_time / dt).round() as u64;

        for k in 0..self.status.turbines.len() {
            let error = (measured_rpm[k] - reference[k]).abs();
            if error > self.config.rpm_threshold {
                self.hold_ticks[k] += 1;
            } else {
                self.hold_ticks[k] = 0;
            }
            let turbine = &mut self.status.turbines[k];
            turbine.hold = self.hold_ticks[k] as f64 * dt;

            if turbine.state == TurbineState::Nominal && self.hold_ticks[k] > ticks_needed {
                turbine.state = TurbineState::Fault;
                turbine.fault_time = Some(self.time);
                log::info!("turbine {k} fault detected at t={:.3}", self.time);
            }
            // A faulted turbine whose RPM reached idle is off; a step fault
            // passes through state 1 within the same tick.
            if turbine.state == TurbineState::Fault && measured_rpm[k] <= self.config.idle_rpm {
                turbine.state = TurbineState::Off;
                turbine.off_time = Some(self.time);
                log::info!("turbine {k} off at t={:.3}", self.time);
            }
        }
        &self.status
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn map() -> ThrustRpmMap {
        ThrustRpmMap {
            max_thrust: 220.0,
            max_rpm: 245_000.0,
        }
    }

    #[test]
    fn map_endpoints_and_quarter_point() {
        let m = map();
        assert_eq!(m.thrust_to_rpm(0.0), 0.0);
        assert_eq!(m.thrust_to_rpm(220.0), 245_000.0);
        // Quadratic map: T_max/4 sits at RPM_max/2.
        assert_relative_eq!(m.thrust_to_rpm(55.0), 122_500.0, epsilon = 1e-9);
    }

    #[test]
    fn map_round_trip() {
        let m = map();
        for i in 0..23 {
            let thrust = i as f64 * 10.0;
            assert_relative_eq!(m.rpm_to_thrust(m.thrust_to_rpm(thrust)), thrust, epsilon = 1e-9);
        }
    }

    #[test]
    fn out_of_range_inputs_clamp() {
        let m = map();
        assert_eq!(m.thrust_to_rpm(-5.0), 0.0);
        assert_eq!(m.thrust_to_rpm(500.0), 245_000.0);
        assert_eq!(m.rpm_to_thrust(300_000.0), 220.0);
    }

    #[test]
    fn quantization_floors_to_step() {
        assert_eq!(quantize_rpm(123_456.0, 100.0), 123_400.0);
        assert_eq!(quantize_rpm(99.9, 100.0), 0.0);
        assert_eq!(quantize_rpm(100.0, 100.0), 100.0);
    }

    #[test]
    fn constant_zero_rate_keeps_reference_rpm() {
        let mut tracker = ReferenceRpmTracker::new(vec![map()], DVector::from_element(1, 110.0));
        let zero = DVector::zeros(1);
        for _ in 0..100 {
            tracker.step(&zero, 0.01);
        }
        assert_relative_eq!(
            tracker.reference_rpm()[0],
            map().thrust_to_rpm(110.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn constant_rate_integrates_linearly() {
        let mut tracker = ReferenceRpmTracker::new(vec![map()], DVector::from_element(1, 50.0));
        let rate = DVector::from_element(1, 8.0);
        for _ in 0..200 {
            tracker.step(&rate, 0.01);
        }
        assert_relative_eq!(tracker.thrust_estimate()[0], 50.0 + 8.0 * 2.0, epsilon = 1e-9);
    }

    fn detector() -> FaultDetector {
        FaultDetector::new(
            TurbineHealthConfig::default(),
            vec![map(), map()],
            DVector::from_element(2, 110.0),
        )
    }

    #[test]
    fn nominal_error_below_threshold_stays_zero() {
        let mut det = detector();
        let zero_rates = DVector::zeros(2);
        let nominal_rpm = map().thrust_to_rpm(110.0);
        for _ in 0..500 {
            let measured = DVector::from_element(2, quantize_rpm(nominal_rpm, 100.0));
            det.step(&measured, &zero_rates, 0.01);
        }
        assert!(!det.status().any_fault());
    }

    #[test]
    fn step_to_zero_fault_latency_is_hold_time_plus_one_tick() {
        let dt = 0.01;
        let mut det = detector();
        let zero_rates = DVector::zeros(2);
        let nominal = quantize_rpm(map().thrust_to_rpm(110.0), 100.0);
        for _ in 0..100 {
            det.step(&DVector::from_element(2, nominal), &zero_rates, dt);
        }
        let fault_onset = 1.0;
        let mut detected_at = None;
        for tick in 0..200 {
            let measured = DVector::from_column_slice(&[nominal, 0.0]);
            det.step(&measured, &zero_rates, dt);
            if det.status().turbines[1].state >= TurbineState::Fault && detected_at.is_none() {
                detected_at = Some(fault_onset + (tick + 1) as f64 * dt);
            }
        }
        let latency = detected_at.unwrap() - fault_onset;
        assert_relative_eq!(latency, 0.3 + dt, epsilon = 1e-12);
        // Step to zero passes straight through to Off on the same tick.
        assert_eq!(det.status().turbines[1].state, TurbineState::Off);
        assert_eq!(
            det.status().turbines[1].fault_time,
            det.status().turbines[1].off_time
        );
        assert_eq!(det.status().turbines[0].state, TurbineState::Nominal);
    }

    #[test]
    fn transient_error_bursts_reset_the_hold() {
        let mut det = detector();
        let zero_rates = DVector::zeros(2);
        let nominal = quantize_rpm(map().thrust_to_rpm(110.0), 100.0);
        for burst in 0..10 {
            // 20 anomalous ticks (0.2 s < hold_time), then recovery.
            for _ in 0..20 {
                det.step(&DVector::from_column_slice(&[nominal, 0.0]), &zero_rates, 0.01);
            }
            for _ in 0..5 {
                det.step(&DVector::from_element(2, nominal), &zero_rates, 0.01);
            }
            assert!(!det.status().any_fault(), "burst {burst}");
        }
    }

    #[test]
    fn state_index_is_monotone_under_any_input() {
        let mut det = detector();
        let zero_rates = DVector::zeros(2);
        let mut previous = [0u8, 0u8];
        let nominal = quantize_rpm(map().thrust_to_rpm(110.0), 100.0);
        for tick in 0..400 {
            // Turbine 1 fails, then pretends to recover; state must not drop.
            let rpm1 = if tick > 100 && tick <= 300 { 0.0 } else { nominal };
            det.step(&DVector::from_column_slice(&[nominal, rpm1]), &zero_rates, 0.01);
            for (k, prev) in previous.iter_mut().enumerate() {
                let state = det.status().turbines[k].state.index();
                assert!(state >= *prev);
                *prev = state;
            }
        }
        assert_eq!(det.status().turbines[1].state, TurbineState::Off);
    }
}
