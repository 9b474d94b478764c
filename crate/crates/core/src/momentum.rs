//! Centroidal momentum rate and acceleration maps.
//!
//! The rate of change of centroidal momentum under thrust forces is
//! `L̇ = A(q) T + F_G` with thrust axes stacked in the columns of `A`. The
//! controller's output is the momentum *acceleration*, expressed with the
//! linear part in inertial-CoM coordinates and the angular part in body
//! coordinates (`ᴮw = R_Bᵀ ᴵw`); differentiating once more makes the inputs
//! `u = (Ṫ, ṡ)` appear linearly:
//!
//! ```text
//! (l̈; ᴮẅ) = Λ(q, T) u + drift(q, T, v_B, ω_B)
//! ```
//!
//! The `Ṫ` columns of `Λ` are analytic (columns of `A`, angular rows
//! rotated by `R_Bᵀ`); the `ṡ` columns and the base-velocity drift are
//! built from central directional finite differences of the momentum rate
//! (step 1e-6) because no closed form is available for the configuration
//! derivatives. Which frame's drift terms dominate is an open point; the
//! finite-difference construction sidesteps it.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use crate::model::RobotModel;
use crate::multibody::{self, Configuration, Kinematics, SystemVelocity};

/// Finite-difference step for configuration derivatives.
pub const FD_STEP: f64 = 1e-6;

/// Per-thruster force data at a given state.
#[derive(Debug, Clone)]
pub struct ThrustState {
    /// Thrust magnitudes `T` (N), one per thruster.
    pub magnitudes: DVector<f64>,
    /// World-frame force axes `ᴵa_k` (unit norm).
    pub world_axes: Vec<Vector3<f64>>,
    /// Lever arms `r_k` = application point − CoM (m).
    pub lever_arms: Vec<Vector3<f64>>,
}

impl ThrustState {
    pub fn compute(model: &RobotModel, q: &Configuration, magnitudes: &DVector<f64>) -> Self {
        let kin = multibody::forward_kinematics(model, q);
        Self::from_kinematics(&kin, magnitudes)
    }

    pub fn from_kinematics(kin: &Kinematics, magnitudes: &DVector<f64>) -> Self {
        Self {
            magnitudes: magnitudes.clone(),
            world_axes: kin.thrusters.iter().map(|t| t.axis).collect(),
            lever_arms: kin.thrusters.iter().map(|t| t.point - kin.com).collect(),
        }
    }
}

/// Centroidal momentum rate split into parts.
#[derive(Debug, Clone)]
pub struct MomentumRate {
    /// `l̇` (N), inertial-CoM coordinates.
    pub linear: Vector3<f64>,
    /// `ẇ` (N·m), inertial-CoM coordinates.
    pub angular: Vector3<f64>,
    /// Gravity wrench `F_G = (−m g e₃; 0₃)`, linear rows first.
    pub gravity_wrench: Vector6<f64>,
}

impl MomentumRate {
    pub fn stacked(&self) -> Vector6<f64> {
        stack(&self.linear, &self.angular)
    }
}

/// Linear map from `u = (Ṫ, ṡ)` to momentum acceleration plus the
/// u-independent drift from base motion.
#[derive(Debug, Clone)]
pub struct MomentumAccelerationMap {
    /// 6×(n_p + n); rows 0–2 inertial `l̈`, rows 3–5 body `ᴮẅ`.
    pub lambda: DMatrix<f64>,
    pub drift: Vector6<f64>,
}

impl MomentumAccelerationMap {
    pub fn output(&self, u: &DVector<f64>) -> Vector6<f64> {
        let v = &self.lambda * u;
        Vector6::from_column_slice(v.as_slice()) + self.drift
    }
}

fn stack(linear: &Vector3<f64>, angular: &Vector3<f64>) -> Vector6<f64> {
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(linear);
    out.fixed_rows_mut::<3>(3).copy_from(angular);
    out
}

/// Thrust-to-momentum-rate matrix `A(q)` (6×n_p, linear rows first) and the
/// gravity wrench `F_G`.
pub fn thrust_matrix(model: &RobotModel, q: &Configuration) -> (DMatrix<f64>, Vector6<f64>) {
    let kin = multibody::forward_kinematics(model, q);
    thrust_matrix_with(model, &kin)
}

/// As [`thrust_matrix`], reusing a forward-kinematics evaluation.
pub fn thrust_matrix_with(model: &RobotModel, kin: &Kinematics) -> (DMatrix<f64>, Vector6<f64>) {
    let n_p = model.thruster_count();
    let mut a = DMatrix::zeros(6, n_p);
    for (k, frame) in kin.thrusters.iter().enumerate() {
        let lever = frame.point - kin.com;
        a.view_mut((0, k), (3, 1)).copy_from(&frame.axis);
        a.view_mut((3, k), (3, 1)).copy_from(&lever.cross(&frame.axis));
    }
    let gravity = stack(
        &Vector3::new(0.0, 0.0, -model.total_mass() * model.gravity),
        &Vector3::zeros(),
    );
    (a, gravity)
}

/// Momentum rate `L̇ = A(q) T + F_G`.
pub fn momentum_rate(model: &RobotModel, q: &Configuration, thrusts: &DVector<f64>) -> MomentumRate {
    let (a, gravity) = thrust_matrix(model, q);
    let total = &a * thrusts;
    MomentumRate {
        linear: Vector3::from_column_slice(&total.as_slice()[0..3])
            + gravity.fixed_rows::<3>(0).into_owned(),
        angular: Vector3::from_column_slice(&total.as_slice()[3..6]),
        gravity_wrench: gravity,
    }
}

/// Momentum rate in controller-output coordinates: linear rows inertial,
/// angular rows rotated to body coordinates by `R_Bᵀ`.
pub fn output_frame_rate(
    model: &RobotModel,
    q: &Configuration,
    thrusts: &DVector<f64>,
) -> Vector6<f64> {
    let rate = momentum_rate(model, q, thrusts);
    stack(&rate.linear, &(q.base_rotation.transpose() * rate.angular))
}

/// Build the input-to-momentum-acceleration map at the current state. The
/// `ṡ` columns and the drift use central finite differences of the momentum
/// rate along the flows generated by the respective velocity components.
pub fn momentum_acceleration_map(
    model: &RobotModel,
    q: &Configuration,
    nu: &SystemVelocity,
    thrusts: &DVector<f64>,
) -> MomentumAccelerationMap {
    let n = model.dof();
    let n_p = model.thruster_count();
    let kin = multibody::forward_kinematics(model, q);
    let (a, _) = thrust_matrix_with(model, &kin);
    let rot_t = q.base_rotation.transpose();

    let mut lambda = DMatrix::zeros(6, n_p + n);
    for k in 0..n_p {
        let axis = Vector3::new(a[(0, k)], a[(1, k)], a[(2, k)]);
        let moment = Vector3::new(a[(3, k)], a[(4, k)], a[(5, k)]);
        lambda.view_mut((0, k), (3, 1)).copy_from(&axis);
        lambda.view_mut((3, k), (3, 1)).copy_from(&(rot_t * moment));
    }

    let directional = |dir: usize| -> Vector6<f64> {
        let plus = output_frame_rate(model, &q.perturbed_along(dir, FD_STEP), thrusts);
        let minus = output_frame_rate(model, &q.perturbed_along(dir, -FD_STEP), thrusts);
        (plus - minus) / (2.0 * FD_STEP)
    };

    for j in 0..n {
        lambda.column_mut(n_p + j).copy_from(&directional(6 + j));
    }

    let mut drift = Vector6::zeros();
    let base = [
        nu.base_linear.x,
        nu.base_linear.y,
        nu.base_linear.z,
        nu.base_angular.x,
        nu.base_angular.y,
        nu.base_angular.z,
    ];
    for (dir, &scale) in base.iter().enumerate() {
        if scale != 0.0 {
            drift += directional(dir) * scale;
        }
    }

    MomentumAccelerationMap { lambda, drift }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::math;

    fn jetbot() -> RobotModel {
        RobotModel::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/jetbot.json"))
            .unwrap()
    }

    fn box_with_thrusters(positions: &[[f64; 3]]) -> RobotModel {
        let thrusters: Vec<serde_json::Value> = positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                serde_json::json!({
                    "name": format!("jet{i}"), "link": "box", "position": p,
                    "axis": [0.0, 0.0, 1.0], "max_thrust": 100.0, "max_rpm": 10000.0
                })
            })
            .collect();
        let file = serde_json::json!({
            "gravity": 9.81,
            "links": [{"name": "box", "mass": 4.0,
                       "inertia": [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]]}],
            "joints": [],
            "thrusters": thrusters
        });
        RobotModel::from_json(&file.to_string()).unwrap()
    }

    fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> (Configuration, SystemVelocity) {
        let q = Configuration {
            base_position: Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
            base_rotation: math::rotation_exp(&Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )),
            joint_positions: DVector::from_fn(model.dof(), |_, _| rng.gen_range(-1.0..1.0)),
        };
        let nu = SystemVelocity {
            base_linear: Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
            base_angular: Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
            joint_velocities: DVector::from_fn(model.dof(), |_, _| rng.gen_range(-1.0..1.0)),
        };
        (q, nu)
    }

    #[test]
    fn symmetric_vertical_jets_cancel_moments() {
        let model = box_with_thrusters(&[[0.2, 0.3, 0.0], [-0.2, -0.3, 0.0]]);
        let q = Configuration::neutral(&model);
        let (a, _) = thrust_matrix(&model, &q);
        let equal = DVector::from_element(2, 5.0);
        let angular = (&a * equal).rows(3, 3).into_owned();
        assert_relative_eq!(angular.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn thruster_through_com_has_zero_angular_column() {
        let model = box_with_thrusters(&[[0.0, 0.0, 0.0]]);
        let q = Configuration::neutral(&model);
        let (a, _) = thrust_matrix(&model, &q);
        assert_relative_eq!(a.view((3, 0), (3, 1)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn momentum_rate_matches_per_thruster_wrench_sum() {
        let model = jetbot();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let (q, _) = random_state(&model, &mut rng);
            let thrusts =
                DVector::from_fn(model.thruster_count(), |_, _| rng.gen_range(0.0..200.0));
            let rate = momentum_rate(&model, &q, &thrusts);

            let state = ThrustState::compute(&model, &q, &thrusts);
            let mut linear = Vector3::new(0.0, 0.0, -model.total_mass() * model.gravity);
            let mut angular = Vector3::zeros();
            for k in 0..model.thruster_count() {
                let force = state.world_axes[k] * state.magnitudes[k];
                linear += force;
                angular += state.lever_arms[k].cross(&force);
            }
            assert_relative_eq!(rate.linear, linear, epsilon = 1e-12);
            assert_relative_eq!(rate.angular, angular, epsilon = 1e-12);
        }
    }

    #[test]
    fn hover_thrusts_zero_the_momentum_rate() {
        let model = jetbot();
        let (q, hover) = crate::plant::trim_hover(&model, Vector3::zeros());
        let rate = momentum_rate(&model, &q, &hover);
        assert_relative_eq!(rate.stacked().norm(), 0.0, epsilon = 1e-9);
        assert!(hover.iter().all(|&t| t > 0.0 && t < 220.0), "hover {hover}");
        // The solved thrusts also satisfy A·T = −F_G at that attitude.
        let (a, gravity) = thrust_matrix(&model, &q);
        assert_relative_eq!((a * &hover + gravity).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_thrust_gives_pure_gravity_wrench() {
        let model = jetbot();
        let q = Configuration::neutral(&model);
        let rate = momentum_rate(&model, &q, &DVector::zeros(4));
        assert_relative_eq!(rate.stacked(), rate.gravity_wrench, epsilon = 1e-15);
    }

    #[test]
    fn map_thrust_columns_match_thrust_matrix() {
        let model = jetbot();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (q, nu) = random_state(&model, &mut rng);
        let thrusts = DVector::from_element(4, 60.0);
        let map = momentum_acceleration_map(&model, &q, &nu, &thrusts);
        let (a, _) = thrust_matrix(&model, &q);
        for k in 0..4 {
            assert_relative_eq!(
                map.lambda.view((0, k), (3, 1)).into_owned(),
                a.view((0, k), (3, 1)).into_owned(),
                epsilon = 1e-15
            );
            let expected = q.base_rotation.transpose()
                * Vector3::new(a[(3, k)], a[(4, k)], a[(5, k)]);
            assert_relative_eq!(
                Vector3::new(map.lambda[(3, k)], map.lambda[(4, k)], map.lambda[(5, k)]),
                expected,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn zero_velocity_zero_input_is_stationary() {
        let model = jetbot();
        let q = Configuration::neutral(&model);
        let nu = SystemVelocity::zeros(&model);
        let thrusts = DVector::from_element(4, 50.0);
        let map = momentum_acceleration_map(&model, &q, &nu, &thrusts);
        assert_relative_eq!(map.drift.norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(map.output(&DVector::zeros(8)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn pure_thrust_rate_moves_linear_momentum_through_axes() {
        let model = jetbot();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let (q, _) = random_state(&model, &mut rng);
        let nu = SystemVelocity::zeros(&model);
        let thrusts = DVector::from_element(4, 80.0);
        let map = momentum_acceleration_map(&model, &q, &nu, &thrusts);
        let t_dot = DVector::from_fn(4, |_, _| rng.gen_range(-10.0..10.0));
        let mut u = DVector::zeros(8);
        u.rows_mut(0, 4).copy_from(&t_dot);
        let (a, _) = thrust_matrix(&model, &q);
        let expected = a.rows(0, 3) * &t_dot;
        assert_relative_eq!(
            map.output(&u).fixed_rows::<3>(0).into_owned(),
            Vector3::from_column_slice(expected.as_slice()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn output_is_affine_in_input() {
        let model = jetbot();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (q, nu) = random_state(&model, &mut rng);
        let thrusts = DVector::from_fn(4, |_, _| rng.gen_range(20.0..150.0));
        let map = momentum_acceleration_map(&model, &q, &nu, &thrusts);
        let u = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let defect =
            map.output(&(2.0 * &u)) - 2.0 * map.output(&u) + map.output(&DVector::zeros(8));
        assert_relative_eq!(defect.norm(), 0.0, epsilon = 1e-12);
    }

    /// Chain-rule oracle: flow the state along ν with the commanded ṡ and
    /// Ṫ, and difference the momentum rate directly.
    #[test]
    fn map_matches_directional_derivative_along_flow() {
        let model = jetbot();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let (q, mut nu) = random_state(&model, &mut rng);
            let thrusts = DVector::from_fn(4, |_, _| rng.gen_range(20.0..150.0));
            let t_dot = DVector::from_fn(4, |_, _| rng.gen_range(-20.0..20.0));
            let s_dot = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            nu.joint_velocities = s_dot.clone();

            let map = momentum_acceleration_map(&model, &q, &nu, &thrusts);
            let mut u = DVector::zeros(8);
            u.rows_mut(0, 4).copy_from(&t_dot);
            u.rows_mut(4, 4).copy_from(&s_dot);
            let predicted = map.output(&u);

            let h = 1e-5;
            let eval = |sign: f64| {
                let qh = q.integrate(&nu, sign * h);
                let th = &thrusts + &t_dot * (sign * h);
                output_frame_rate(&model, &qh, &th)
            };
            let fd = (eval(1.0) - eval(-1.0)) / (2.0 * h);
            assert_relative_eq!(predicted, fd, epsilon = 1e-4);
        }
    }

    #[test]
    fn angular_rows_are_body_coordinates() {
        let model = jetbot();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (q, _) = random_state(&model, &mut rng);
        let thrusts = DVector::from_fn(4, |_, _| rng.gen_range(0.0..100.0));
        let rate = momentum_rate(&model, &q, &thrusts);
        let stacked = output_frame_rate(&model, &q, &thrusts);
        let body_angular = stacked.fixed_rows::<3>(3).into_owned();
        assert_relative_eq!(q.base_rotation * body_angular, rate.angular, epsilon = 1e-12);
    }
}
