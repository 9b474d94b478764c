//! Offline reference generator: optimized hover references after a
//! turbine failure.
//!
//! Solves, over `x = (rpy_B, s, T)` with the base position held fixed,
//!
//! ```text
//! min  ½|x − x₀|²_{W_x} + W_Λ / √det(Λ Λᵀ)
//! s.t. |L̇|² = 0,   lb ≤ x ≤ ub,
//!      h_self-coll(x) ≥ 0,   h_jet-coll(x) ≥ 0
//! ```
//!
//! The manipulability term uses the Gram determinant of the wide 6×(n+n_p)
//! map `Λ` (`det(Λ Λᵀ)`); rank-deficient `Λ` maps to a large finite penalty
//! so line searches stay sane. Collision geometry approximates links by
//! spheres; jet exhausts are straight lines fanned at a fixed half-angle
//! around the negated thrust axis, checked against lower-body spheres only
//! with the orthogonal-projector distance form
//! `(p_k − c_i)ᵀ (1₃ − a aᵀ) (p_k − c_i) ≥ ρ_i²`.
//!
//! The solver is an augmented-Lagrangian outer loop (equality plus
//! `max(0,·)` inequality terms, bounds folded in as inequalities) around a
//! BFGS inner solver with backtracking line search and central
//! finite-difference gradients. Everything is deterministic: fixed
//! iteration order, no randomness.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::model::RobotModel;
use crate::momentum;
use crate::multibody::{self, Configuration, SystemVelocity};

#[derive(Debug, Error)]
pub enum RefgenError {
    #[error("problem file: {0}")]
    Io(#[from] std::io::Error),
    #[error("problem file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown link `{0}` in collision geometry")]
    UnknownLink(String),
    #[error("faulty turbine index {index} out of range ({count} thrusters)")]
    FaultIndex { index: usize, count: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Floor under `det(Λ Λᵀ)`; below it the objective saturates at a large
/// finite penalty.
pub const MANIPULABILITY_FLOOR: f64 = 1e-12;

/// A collision sphere attached to a link.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereSpec {
    pub link: String,
    pub center: [f64; 3],
    pub radius: f64,
    /// Lower-body spheres additionally enter the jet-exhaust constraints.
    #[serde(default)]
    pub lower_body: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExhaustGeometry {
    pub cone_half_angle_deg: f64,
    pub lines_per_cone: usize,
    /// Nominal cone extent (m); kept for reporting/rendering, the
    /// constraint uses the full lines (conservative).
    pub cone_length: f64,
}

impl Default for ExhaustGeometry {
    fn default() -> Self {
        Self {
            cone_half_angle_deg: 10.0,
            lines_per_cone: 8,
            cone_length: 2.0,
        }
    }
}

/// On-disk problem description (see `docs/formats.md`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceProblemFile {
    /// Turbines pinned to zero thrust.
    pub fault_mask: Vec<usize>,
    /// Fixed base position during the solve.
    pub base_position: [f64; 3],
    /// Initial attitude (roll, pitch, yaw) and posture; thrusts default to
    /// the least-squares hover solution at `x0` when omitted.
    pub x0_rpy: [f64; 3],
    pub x0_joints: Vec<f64>,
    #[serde(default)]
    pub x0_thrusts: Option<Vec<f64>>,
    /// Diagonal `W_x` blocks and the manipulability weight `W_Λ`.
    pub weight_rpy: f64,
    pub weight_joints: f64,
    pub weight_thrusts: f64,
    pub weight_manipulability: f64,
    /// Symmetric attitude bounds per axis (rad).
    pub rpy_limit: [f64; 3],
    pub spheres: Vec<SphereSpec>,
    #[serde(default)]
    pub exhaust: ExhaustGeometry,
    #[serde(default = "default_equilibrium_tolerance")]
    pub equilibrium_tolerance: f64,
}

fn default_equilibrium_tolerance() -> f64 {
    1e-6
}

/// A resolved, solver-ready problem.
#[derive(Debug, Clone)]
pub struct ReferenceProblem {
    pub x0: DVector<f64>,
    pub weights: DVector<f64>,
    pub weight_manipulability: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub fault_mask: Vec<usize>,
    pub base_position: Vector3<f64>,
    pub spheres: Vec<ResolvedSphere>,
    pub exhaust: ExhaustGeometry,
    pub equilibrium_tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct ResolvedSphere {
    pub link: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
    pub lower_body: bool,
}

/// Split an optimization vector into its `(rpy, s, T)` blocks.
pub fn unpack(model: &RobotModel, x: &DVector<f64>) -> (Vector3<f64>, DVector<f64>, DVector<f64>) {
    let n = model.dof();
    (
        Vector3::new(x[0], x[1], x[2]),
        x.rows(3, n).into_owned(),
        x.rows(3 + n, model.thruster_count()).into_owned(),
    )
}

/// Configuration implied by an optimization vector (ZYX Euler attitude,
/// fixed base position).
pub fn configuration_of(
    model: &RobotModel,
    problem: &ReferenceProblem,
    x: &DVector<f64>,
) -> Configuration {
    let (rpy, joints, _) = unpack(model, x);
    Configuration {
        base_position: problem.base_position,
        base_rotation: math::rotation_from_rpy(&rpy),
        joint_positions: joints,
    }
}

impl ReferenceProblem {
    pub fn from_file(
        path: impl AsRef<std::path::Path>,
        model: &RobotModel,
    ) -> Result<Self, RefgenError> {
        let text = std::fs::read_to_string(path)?;
        let file: ReferenceProblemFile = serde_json::from_str(&text)?;
        Self::resolve(&file, model)
    }

    pub fn resolve(file: &ReferenceProblemFile, model: &RobotModel) -> Result<Self, RefgenError> {
        let n = model.dof();
        let n_p = model.thruster_count();
        let dim = 3 + n + n_p;
        if file.x0_joints.len() != n {
            return Err(RefgenError::Dimension(format!(
                "x0_joints has {} entries, model has {n} joints",
                file.x0_joints.len()
            )));
        }
        for &k in &file.fault_mask {
            if k >= n_p {
                return Err(RefgenError::FaultIndex { index: k, count: n_p });
            }
        }

        let mut lower = DVector::zeros(dim);
        let mut upper = DVector::zeros(dim);
        for axis in 0..3 {
            lower[axis] = -file.rpy_limit[axis];
            upper[axis] = file.rpy_limit[axis];
        }
        let (lo, hi) = model.joint_limits();
        for j in 0..n {
            lower[3 + j] = lo[j];
            upper[3 + j] = hi[j];
        }
        for k in 0..n_p {
            lower[3 + n + k] = 0.0;
            upper[3 + n + k] = if file.fault_mask.contains(&k) {
                0.0
            } else {
                model.thrusters[k].max_thrust
            };
        }

        let mut x0 = DVector::zeros(dim);
        for axis in 0..3 {
            x0[axis] = file.x0_rpy[axis];
        }
        for j in 0..n {
            x0[3 + j] = file.x0_joints[j];
        }
        let thrusts0 = match &file.x0_thrusts {
            Some(values) => {
                if values.len() != n_p {
                    return Err(RefgenError::Dimension(format!(
                        "x0_thrusts has {} entries, model has {n_p} thrusters",
                        values.len()
                    )));
                }
                DVector::from_column_slice(values)
            }
            None => {
                let q = Configuration {
                    base_position: Vector3::from(file.base_position),
                    base_rotation: math::rotation_from_rpy(&Vector3::from(file.x0_rpy)),
                    joint_positions: DVector::from_column_slice(&file.x0_joints),
                };
                crate::plant::hover_thrusts(model, &q)
            }
        };
        for k in 0..n_p {
            x0[3 + n + k] = thrusts0[k].clamp(lower[3 + n + k], upper[3 + n + k]);
        }

        let mut weights = DVector::zeros(dim);
        for axis in 0..3 {
            weights[axis] = file.weight_rpy;
        }
        for j in 0..n {
            weights[3 + j] = file.weight_joints;
        }
        for k in 0..n_p {
            weights[3 + n + k] = file.weight_thrusts;
        }

        let name_to_index: std::collections::HashMap<&str, usize> = model
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        let spheres = file
            .spheres
            .iter()
            .map(|s| {
                name_to_index
                    .get(s.link.as_str())
                    .map(|&link| ResolvedSphere {
                        link,
                        center: Vector3::from(s.center),
                        radius: s.radius,
                        lower_body: s.lower_body,
                    })
                    .ok_or_else(|| RefgenError::UnknownLink(s.link.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            x0,
            weights,
            weight_manipulability: file.weight_manipulability,
            lower,
            upper,
            fault_mask: file.fault_mask.clone(),
            base_position: Vector3::from(file.base_position),
            spheres,
            exhaust: file.exhaust.clone(),
            equilibrium_tolerance: file.equilibrium_tolerance,
        })
    }
}

/// `det(Λ Λᵀ)` of the input-to-momentum-acceleration map at the static
/// state implied by `(q, T)`.
pub fn manipulability_det(model: &RobotModel, q: &Configuration, thrusts: &DVector<f64>) -> f64 {
    let map = momentum::momentum_acceleration_map(model, q, &SystemVelocity::zeros(model), thrusts);
    let gram = &map.lambda * map.lambda.transpose();
    gram.determinant()
}

/// Two-term cost: anchor to `x₀` plus inverse manipulability.
pub fn objective(model: &RobotModel, problem: &ReferenceProblem, x: &DVector<f64>) -> f64 {
    let delta = x - &problem.x0;
    let anchor = 0.5
        * delta
            .iter()
            .zip(problem.weights.iter())
            .map(|(d, w)| w * d * d)
            .sum::<f64>();
    let (_, _, thrusts) = unpack(model, x);
    let q = configuration_of(model, problem, x);
    let det = manipulability_det(model, &q, &thrusts).max(MANIPULABILITY_FLOOR);
    anchor + problem.weight_manipulability / det.sqrt()
}

/// Squared momentum-rate norm `|A(q(x)) T + F_G|²`; zero at static balance.
pub fn equilibrium_constraint(
    model: &RobotModel,
    problem: &ReferenceProblem,
    x: &DVector<f64>,
) -> f64 {
    let (_, _, thrusts) = unpack(model, x);
    let q = configuration_of(model, problem, x);
    momentum::momentum_rate(model, &q, &thrusts)
        .stacked()
        .norm_squared()
}

/// One entry per cross-link sphere pair: `|c_i − c_j|² − (ρ_i + ρ_j)²`.
pub fn self_collision_constraints(
    model: &RobotModel,
    problem: &ReferenceProblem,
    x: &DVector<f64>,
) -> DVector<f64> {
    let q = configuration_of(model, problem, x);
    let kin = multibody::forward_kinematics(model, &q);
    let centers: Vec<Vector3<f64>> = problem
        .spheres
        .iter()
        .map(|s| kin.link_poses[s.link].position + kin.link_poses[s.link].rotation * s.center)
        .collect();
    let mut values = Vec::new();
    for i in 0..problem.spheres.len() {
        for j in (i + 1)..problem.spheres.len() {
            if problem.spheres[i].link == problem.spheres[j].link {
                continue;
            }
            let gap = (centers[i] - centers[j]).norm_squared();
            let radii = problem.spheres[i].radius + problem.spheres[j].radius;
            values.push(gap - radii * radii);
        }
    }
    DVector::from_vec(values)
}

/// Directions of the exhaust cone lines for one thruster: fanned at the
/// configured half-angle around the negated thrust axis.
fn cone_lines(axis: &Vector3<f64>, geometry: &ExhaustGeometry) -> Vec<Vector3<f64>> {
    let exhaust = -axis;
    let reference = if exhaust.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = reference.cross(&exhaust).normalize();
    let e2 = exhaust.cross(&e1);
    let half = geometry.cone_half_angle_deg.to_radians();
    (0..geometry.lines_per_cone)
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / geometry.lines_per_cone as f64;
            (exhaust * half.cos() + (e1 * phi.cos() + e2 * phi.sin()) * half.sin()).normalize()
        })
        .collect()
}

/// One entry per (lower-body sphere, cone line) pair over all active
/// thrusters: `(p_k − c_i)ᵀ (1₃ − a aᵀ) (p_k − c_i) − ρ_i²`.
pub fn jet_collision_constraints(
    model: &RobotModel,
    problem: &ReferenceProblem,
    x: &DVector<f64>,
) -> DVector<f64> {
    let q = configuration_of(model, problem, x);
    let kin = multibody::forward_kinematics(model, &q);
    let mut values = Vec::new();
    for k in 0..model.thruster_count() {
        if problem.fault_mask.contains(&k) {
            continue;
        }
        let nozzle = kin.thrusters[k].point;
        for dir in cone_lines(&kin.thrusters[k].axis, &problem.exhaust) {
            for sphere in problem.spheres.iter().filter(|s| s.lower_body) {
                let center = kin.link_poses[sphere.link].position
                    + kin.link_poses[sphere.link].rotation * sphere.center;
                let rel = nozzle - center;
                let orthogonal = rel - dir * dir.dot(&rel);
                values.push(orthogonal.norm_squared() - sphere.radius * sphere.radius);
            }
        }
    }
    DVector::from_vec(values)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub gradient_tolerance: f64,
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 40,
            inner_iterations: 120,
            initial_penalty: 10.0,
            penalty_growth: 4.0,
            max_penalty: 1e9,
            gradient_tolerance: 1e-7,
            fd_step: 1e-6,
        }
    }
}

/// Solve outcome; `converged = false` flags a max-iterations exit with the
/// best feasible-biased iterate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub outer_iterations: usize,
    pub objective: f64,
    pub equilibrium_residual: f64,
    pub min_self_collision: f64,
    pub min_jet_collision: f64,
    pub bound_violation: f64,
    pub manipulability_det: f64,
    /// `det(Λ Λᵀ)` at the feasibility-only (`W_Λ = 0`) solution that seeds
    /// the full solve.
    pub feasibility_manipulability_det: f64,
}

struct AlState {
    /// Multipliers on the six momentum-rate residual components. The
    /// feasible set of `L̇ = 0` equals that of `|L̇|² = 0`, but the vector
    /// form keeps the quadratic penalty quadratic in the thrusts instead
    /// of quartic, which finite-difference BFGS handles far better.
    eq_multipliers: Vector6<f64>,
    ineq_multipliers: DVector<f64>,
    penalty: f64,
}

/// Inequality constraint stack: collisions then bounds, `h(x) ≥ 0`.
fn inequality_stack(
    model: &RobotModel,
    problem: &ReferenceProblem,
    x: &DVector<f64>,
) -> DVector<f64> {
    let selfc = self_collision_constraints(model, problem, x);
    let jet = jet_collision_constraints(model, problem, x);
    let dim = x.len();
    let mut values = Vec::with_capacity(selfc.len() + jet.len() + 2 * dim);
    values.extend(selfc.iter().copied());
    values.extend(jet.iter().copied());
    for i in 0..dim {
        values.push(x[i] - problem.lower[i]);
        values.push(problem.upper[i] - x[i]);
    }
    DVector::from_vec(values)
}

/// Momentum-rate residual vector at the static state implied by `x`.
fn equilibrium_residual(model: &RobotModel, problem: &ReferenceProblem, x: &DVector<f64>) -> Vector6<f64> {
    let (_, _, thrusts) = unpack(model, x);
    let q = configuration_of(model, problem, x);
    momentum::momentum_rate(model, &q, &thrusts).stacked()
}

fn augmented_lagrangian(
    model: &RobotModel,
    problem: &ReferenceProblem,
    state: &AlState,
    manipulability_weight: f64,
    x: &DVector<f64>,
) -> f64 {
    let mut scaled = problem.clone();
    scaled.weight_manipulability = manipulability_weight;
    let f = objective(model, &scaled, x);
    let g = equilibrium_residual(model, problem, x);
    let h = inequality_stack(model, problem, x);
    let mu = state.penalty;
    let mut value = f + state.eq_multipliers.dot(&g) + 0.5 * mu * g.norm_squared();
    for (i, &hi) in h.iter().enumerate() {
        let lam = state.ineq_multipliers[i];
        let shifted = (lam - mu * hi).max(0.0);
        value += (shifted * shifted - lam * lam) / (2.0 * mu);
    }
    value
}

/// Minimize a smooth function with BFGS + backtracking line search and
/// central finite-difference gradients. Returns the best iterate.
fn bfgs_minimize(
    mut x: DVector<f64>,
    eval: &dyn Fn(&DVector<f64>) -> f64,
    max_iterations: usize,
    gradient_tolerance: f64,
    fd_step: f64,
) -> DVector<f64> {
    let dim = x.len();
    let gradient = |x: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(dim);
        let mut probe = x.clone();
        for i in 0..dim {
            let base = x[i];
            probe[i] = base + fd_step;
            let plus = eval(&probe);
            probe[i] = base - fd_step;
            let minus = eval(&probe);
            probe[i] = base;
            g[i] = (plus - minus) / (2.0 * fd_step);
        }
        g
    };

    let mut inv_hessian = DMatrix::identity(dim, dim);
    let mut value = eval(&x);
    let mut grad = gradient(&x);
    for _ in 0..max_iterations {
        if grad.amax() <= gradient_tolerance {
            break;
        }
        let mut direction = -(&inv_hessian * &grad);
        if grad.dot(&direction) >= 0.0 {
            // Curvature update went stale; restart from steepest descent.
            inv_hessian = DMatrix::identity(dim, dim);
            direction = -grad.clone();
        }
        let slope = grad.dot(&direction);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let candidate = &x + &direction * alpha;
            let candidate_value = eval(&candidate);
            if candidate_value <= value + 1e-4 * alpha * slope {
                accepted = Some((candidate, candidate_value));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, next_value)) = accepted else {
            break;
        };

        let next_grad = gradient(&next);
        let step = &next - &x;
        let grad_delta = &next_grad - &grad;
        let sy = step.dot(&grad_delta);
        if sy > 1e-12 {
            // Standard BFGS inverse update.
            let rho = 1.0 / sy;
            let identity = DMatrix::identity(dim, dim);
            let left = &identity - (&step * grad_delta.transpose()) * rho;
            let right = &identity - (&grad_delta * step.transpose()) * rho;
            inv_hessian = &left * inv_hessian * right + (&step * step.transpose()) * rho;
        }
        x = next;
        value = next_value;
        grad = next_grad;
    }
    x
}

fn constraint_violation(g: &Vector6<f64>, h: &DVector<f64>) -> f64 {
    let ineq: f64 = h.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
    g.amax().max(ineq)
}

fn solve_phase(
    model: &RobotModel,
    problem: &ReferenceProblem,
    config: &SolverConfig,
    manipulability_weight: f64,
    start: &DVector<f64>,
) -> (DVector<f64>, bool, usize) {
    let h0 = inequality_stack(model, problem, start);
    let mut state = AlState {
        eq_multipliers: Vector6::zeros(),
        ineq_multipliers: DVector::zeros(h0.len()),
        penalty: config.initial_penalty,
    };
    let mut x = start.clone();
    let mut previous_violation = f64::INFINITY;
    let mut converged = false;
    let mut outer_used = config.outer_iterations;
    for outer in 0..config.outer_iterations {
        // Looser inner tolerance early keeps the first subproblems cheap.
        let inner_tol = (config.gradient_tolerance * 10.0_f64.powi((4 - outer as i32).max(0)))
            .max(config.gradient_tolerance);
        let eval = |x: &DVector<f64>| {
            augmented_lagrangian(model, problem, &state, manipulability_weight, x)
        };
        x = bfgs_minimize(x, &eval, config.inner_iterations, inner_tol, config.fd_step);

        let g = equilibrium_residual(model, problem, &x);
        let h = inequality_stack(model, problem, &x);
        let violation = constraint_violation(&g, &h);
        if violation <= problem.equilibrium_tolerance.sqrt().min(1e-4)
            && g.norm_squared() <= problem.equilibrium_tolerance
        {
            converged = true;
            outer_used = outer + 1;
            break;
        }

        state.eq_multipliers += g * state.penalty;
        for (i, &hi) in h.iter().enumerate() {
            state.ineq_multipliers[i] = (state.ineq_multipliers[i] - state.penalty * hi).max(0.0);
        }
        if violation > 0.25 * previous_violation {
            state.penalty = (state.penalty * config.penalty_growth).min(config.max_penalty);
        }
        previous_violation = violation;
    }
    (x, converged, outer_used)
}

/// Solve the reference problem: a feasibility-only pass (`W_Λ = 0`) seeds
/// the full manipulability-weighted solve, and the report carries the Gram
/// determinants of both solutions.
pub fn solve_reference_problem(
    model: &RobotModel,
    problem: &ReferenceProblem,
    config: &SolverConfig,
) -> (DVector<f64>, SolveReport) {
    let dim = problem.x0.len();
    let clamped_start = DVector::from_fn(dim, |i, _| {
        problem.x0[i].clamp(problem.lower[i], problem.upper[i])
    });

    let (feasible, _, _) = solve_phase(model, problem, config, 0.0, &clamped_start);
    let (_, _, feas_thrusts) = unpack(model, &feasible);
    let feas_det = manipulability_det(
        model,
        &configuration_of(model, problem, &feasible),
        &feas_thrusts,
    );

    let (mut x, converged, outer) = solve_phase(
        model,
        problem,
        config,
        problem.weight_manipulability,
        &feasible,
    );

    // AL residual bound violations are tiny by now; make them exact.
    for i in 0..dim {
        x[i] = x[i].clamp(problem.lower[i], problem.upper[i]);
    }

    let (_, _, thrusts) = unpack(model, &x);
    let q = configuration_of(model, problem, &x);
    let selfc = self_collision_constraints(model, problem, &x);
    let jet = jet_collision_constraints(model, problem, &x);
    let report = SolveReport {
        converged,
        outer_iterations: outer,
        objective: objective(model, problem, &x),
        equilibrium_residual: equilibrium_constraint(model, problem, &x),
        min_self_collision: selfc.iter().copied().fold(f64::INFINITY, f64::min),
        min_jet_collision: jet.iter().copied().fold(f64::INFINITY, f64::min),
        bound_violation: (0..dim)
            .map(|i| (problem.lower[i] - x[i]).max(x[i] - problem.upper[i]).max(0.0))
            .fold(0.0, f64::max),
        manipulability_det: manipulability_det(model, &q, &thrusts),
        feasibility_manipulability_det: feas_det,
    };
    (x, report)
}

/// Solved references serialized for the controller (`docs/formats.md`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub rpy: [f64; 3],
    pub posture: Vec<f64>,
    pub thrusts: Vec<f64>,
    pub report: SolveReport,
}

impl ReferenceSolution {
    pub fn from_solution(model: &RobotModel, x: &DVector<f64>, report: SolveReport) -> Self {
        let (rpy, posture, thrusts) = unpack(model, x);
        Self {
            rpy: [rpy.x, rpy.y, rpy.z],
            posture: posture.as_slice().to_vec(),
            thrusts: thrusts.as_slice().to_vec(),
            report,
        }
    }

    /// Controller references adopting the optimized attitude, posture and
    /// thrusts (momentum references are supplied by the trajectory).
    pub fn reference_set(&self) -> crate::controller::ReferenceSet {
        crate::controller::ReferenceSet {
            momentum_linear: Vector3::zeros(),
            momentum_linear_rate: Vector3::zeros(),
            momentum_linear_accel: Vector3::zeros(),
            attitude: math::rotation_from_rpy(&Vector3::from(self.rpy)),
            angular_rate_body: Vector3::zeros(),
            posture: DVector::from_column_slice(&self.posture),
            thrusts: Some(DVector::from_column_slice(&self.thrusts)),
        }
    }
}
