//! Dense convex quadratic programming with box constraints.
//!
//! Solves `min ½ xᵀH x + fᵀx  s.t.  lb ≤ x ≤ ub` (entries of `lb`/`ub` may
//! be ±∞) by projected gradient with active-set identification and exact
//! subspace Newton steps on the free coordinates. Box-only constraints keep
//! this simple, robust and dependency-free; the solve is stateless and
//! deterministic for identical inputs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Tikhonov term added to the stacked-task Hessian. Task stacks can be rank
/// deficient (a pinned thrust column, a singular posture), and the
/// regularization is dominated by any sensible task weight.
pub const TASK_REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("infeasible bounds at coordinate {index}: lower {lower} > upper {upper}")]
    InfeasibleBounds { index: usize, lower: f64, upper: f64 },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Best iterate found, still within bounds.
        best: DVector<f64>,
    },
}

/// Box-constrained QP data. `hessian` must be symmetric positive
/// semidefinite (callers building task stacks get a regularized one from
/// [`stack_tasks`]).
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxQp {
    /// Unbounded problem of dimension `d`.
    pub fn unbounded(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let d = gradient.len();
        Self {
            hessian,
            gradient,
            lower: DVector::from_element(d, f64::NEG_INFINITY),
            upper: DVector::from_element(d, f64::INFINITY),
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }
}

/// Solver output: solution, projected-gradient KKT residual, iterations.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn clamp(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lower[i], upper[i]))
}

/// Projected-gradient KKT residual `‖x − clamp(x − ∇q(x))‖_∞`.
fn kkt_residual(problem: &BoxQp, x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    let stepped = clamp(&(x - grad), &problem.lower, &problem.upper);
    (x - stepped).amax()
}

/// Cholesky with escalating jitter; the task regularization normally makes
/// the first attempt succeed.
fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let mut jitter = 0.0;
    loop {
        let mut m = h.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = m.cholesky() {
            return chol.solve(rhs);
        }
        jitter = if jitter == 0.0 { 1e-12 * (1.0 + h.diagonal().amax()) } else { jitter * 10.0 };
        assert!(jitter.is_finite(), "hessian is not factorizable");
    }
}

/// Solve a box QP from a caller-supplied starting point (clamped into the
/// box before use).
pub fn solve_box_qp_from(
    problem: &BoxQp,
    start: &DVector<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<QpSolution, QpError> {
    let d = problem.gradient.len();
    if problem.hessian.nrows() != d
        || problem.hessian.ncols() != d
        || problem.lower.len() != d
        || problem.upper.len() != d
    {
        return Err(QpError::DimensionMismatch {
            context: format!(
                "hessian {}x{}, gradient {}, bounds {}/{}",
                problem.hessian.nrows(),
                problem.hessian.ncols(),
                d,
                problem.lower.len(),
                problem.upper.len()
            ),
        });
    }
    for i in 0..d {
        if problem.lower[i] > problem.upper[i] {
            return Err(QpError::InfeasibleBounds {
                index: i,
                lower: problem.lower[i],
                upper: problem.upper[i],
            });
        }
    }

    let mut x = clamp(start, &problem.lower, &problem.upper);
    let mut residual = f64::INFINITY;
    for iteration in 0..max_iterations {
        let grad = &problem.hessian * &x + &problem.gradient;
        residual = kkt_residual(problem, &x, &grad);
        if residual <= tolerance {
            return Ok(QpSolution {
                x,
                kkt_residual: residual,
                iterations: iteration,
            });
        }

        // Active set with deterministic tie-breaking: a coordinate exactly
        // at a bound with an outward-pushing (or zero) gradient is active.
        let active: Vec<bool> = (0..d)
            .map(|i| {
                (x[i] <= problem.lower[i] && grad[i] >= 0.0)
                    || (x[i] >= problem.upper[i] && grad[i] <= 0.0)
            })
            .collect();
        let free: Vec<usize> = (0..d).filter(|&i| !active[i]).collect();

        let mut direction = DVector::zeros(d);
        if free.is_empty() {
            // Degenerate corner; fall back to a projected gradient step.
            direction = -&grad;
        } else {
            let h_ff = DMatrix::from_fn(free.len(), free.len(), |a, b| {
                problem.hessian[(free[a], free[b])]
            });
            let g_f = DVector::from_fn(free.len(), |a, _| grad[free[a]]);
            let step = solve_spd(&h_ff, &(-g_f));
            for (a, &i) in free.iter().enumerate() {
                direction[i] = step[a];
            }
        }

        // Backtracking Armijo search along the projected arc; the objective
        // decreases monotonically across iterations.
        let objective = problem.objective(&x);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let candidate = clamp(&(&x + &direction * alpha), &problem.lower, &problem.upper);
            let delta = &candidate - &x;
            if delta.amax() == 0.0 {
                break;
            }
            let predicted = grad.dot(&delta);
            if problem.objective(&candidate) <= objective + 1e-4 * predicted {
                x = candidate;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            // No further progress possible at floating-point resolution.
            let grad = &problem.hessian * &x + &problem.gradient;
            residual = kkt_residual(problem, &x, &grad);
            if residual <= tolerance {
                return Ok(QpSolution {
                    x,
                    kkt_residual: residual,
                    iterations: iteration + 1,
                });
            }
            return Err(QpError::NonConvergence {
                iterations: iteration + 1,
                residual,
                best: x,
            });
        }
    }

    Err(QpError::NonConvergence {
        iterations: max_iterations,
        residual,
        best: x,
    })
}

/// Solve a box QP starting from the projection of the origin.
pub fn solve_box_qp(
    problem: &BoxQp,
    tolerance: f64,
    max_iterations: usize,
) -> Result<QpSolution, QpError> {
    let start = DVector::zeros(problem.gradient.len());
    solve_box_qp_from(problem, &start, tolerance, max_iterations)
}

/// One weighted least-squares task `‖J x − b‖²_w`.
#[derive(Debug, Clone)]
pub struct Task {
    pub matrix: DMatrix<f64>,
    pub target: DVector<f64>,
    pub weight: f64,
}

impl Task {
    pub fn new(matrix: DMatrix<f64>, target: DVector<f64>, weight: f64) -> Self {
        Self {
            matrix,
            target,
            weight,
        }
    }
}

/// Stack weighted tasks into QP data: `H = Σ wᵢ JᵢᵀJᵢ + εI`,
/// `f = −Σ wᵢ Jᵢᵀbᵢ`.
pub fn stack_tasks(tasks: &[Task]) -> Result<(DMatrix<f64>, DVector<f64>), QpError> {
    let d = tasks
        .first()
        .map(|t| t.matrix.ncols())
        .ok_or_else(|| QpError::DimensionMismatch {
            context: "empty task list".to_string(),
        })?;
    let mut hessian = DMatrix::identity(d, d) * TASK_REGULARIZATION;
    let mut gradient = DVector::zeros(d);
    for (idx, task) in tasks.iter().enumerate() {
        if task.matrix.ncols() != d || task.matrix.nrows() != task.target.len() {
            return Err(QpError::DimensionMismatch {
                context: format!(
                    "task {idx}: matrix {}x{}, target {}",
                    task.matrix.nrows(),
                    task.matrix.ncols(),
                    task.target.len()
                ),
            });
        }
        let weighted = task.matrix.transpose() * task.weight;
        hessian += &weighted * &task.matrix;
        gradient -= weighted * &task.target;
    }
    Ok((hessian, gradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    /// Exhaustive active-set enumeration oracle, valid for small d: min
    /// objective over all lower/free/upper patterns whose reduced solve
    /// lands feasible.
    fn brute_force(problem: &BoxQp) -> f64 {
        let d = problem.gradient.len();
        let mut best = f64::INFINITY;
        let patterns = 3usize.pow(d as u32);
        'pattern: for code in 0..patterns {
            let mut digits = code;
            let mut fixed = vec![None; d];
            for slot in fixed.iter_mut() {
                *slot = match digits % 3 {
                    0 => None,
                    1 => Some(true),  // lower
                    _ => Some(false), // upper
                };
                digits /= 3;
            }
            let mut x = DVector::zeros(d);
            let free: Vec<usize> = (0..d).filter(|&i| fixed[i].is_none()).collect();
            for i in 0..d {
                match fixed[i] {
                    Some(true) => {
                        if !problem.lower[i].is_finite() {
                            continue 'pattern;
                        }
                        x[i] = problem.lower[i];
                    }
                    Some(false) => {
                        if !problem.upper[i].is_finite() {
                            continue 'pattern;
                        }
                        x[i] = problem.upper[i];
                    }
                    None => {}
                }
            }
            if !free.is_empty() {
                let h = DMatrix::from_fn(free.len(), free.len(), |a, b| {
                    problem.hessian[(free[a], free[b])]
                });
                let mut rhs = DVector::from_fn(free.len(), |a, _| -problem.gradient[free[a]]);
                for (a, &i) in free.iter().enumerate() {
                    for j in 0..d {
                        if fixed[j].is_some() {
                            rhs[a] -= problem.hessian[(i, j)] * x[j];
                        }
                    }
                }
                let solved = match h.lu().solve(&rhs) {
                    Some(s) => s,
                    None => continue 'pattern,
                };
                for (a, &i) in free.iter().enumerate() {
                    x[i] = solved[a];
                }
            }
            let feasible = (0..d)
                .all(|i| x[i] >= problem.lower[i] - 1e-9 && x[i] <= problem.upper[i] + 1e-9);
            if feasible {
                best = best.min(problem.objective(&x));
            }
        }
        best
    }

    #[test]
    fn identity_hessian_zero_gradient_solution_is_zero() {
        let problem = BoxQp {
            hessian: DMatrix::identity(3, 3),
            gradient: DVector::zeros(3),
            lower: DVector::from_element(3, -1.0),
            upper: DVector::from_element(3, 1.0),
        };
        let sol = solve_box_qp(&problem, 1e-10, 50).unwrap();
        assert_relative_eq!(sol.x.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn unconstrained_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_spd(6, &mut rng);
        let f = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
        let problem = BoxQp::unbounded(h.clone(), f.clone());
        let sol = solve_box_qp(&problem, 1e-12, 100).unwrap();
        let direct = h.lu().solve(&(-f)).unwrap();
        assert_relative_eq!(sol.x, direct, epsilon = 1e-10);
    }

    #[test]
    fn infeasible_bounds_are_rejected() {
        let mut problem = BoxQp::unbounded(DMatrix::identity(2, 2), DVector::zeros(2));
        problem.lower[1] = 2.0;
        problem.upper[1] = -1.0;
        assert!(matches!(
            solve_box_qp(&problem, 1e-8, 10),
            Err(QpError::InfeasibleBounds { index: 1, .. })
        ));
    }

    #[test]
    fn matches_brute_force_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..60 {
            let d = rng.gen_range(2..=6);
            let problem = BoxQp {
                hessian: random_spd(d, &mut rng),
                gradient: DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
                lower: DVector::from_fn(d, |_, _| rng.gen_range(-1.0..0.0)),
                upper: DVector::from_fn(d, |_, _| rng.gen_range(0.0..1.0)),
            };
            let sol = solve_box_qp(&problem, 1e-10, 200).unwrap();
            let oracle = brute_force(&problem);
            assert_relative_eq!(
                problem.objective(&sol.x),
                oracle,
                epsilon = 1e-8,
                max_relative = 1e-8
            );
            assert!(sol.kkt_residual <= 1e-10, "trial {trial}");
            for i in 0..d {
                assert!(sol.x[i] >= problem.lower[i] - 1e-12);
                assert!(sol.x[i] <= problem.upper[i] + 1e-12);
            }
        }
    }

    #[test]
    fn complementary_slackness_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 8;
        let problem = BoxQp {
            hessian: random_spd(d, &mut rng),
            gradient: DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0)),
            lower: DVector::from_element(d, -0.2),
            upper: DVector::from_element(d, 0.2),
        };
        let sol = solve_box_qp(&problem, 1e-10, 200).unwrap();
        let grad = &problem.hessian * &sol.x + &problem.gradient;
        for i in 0..d {
            let at_bound = sol.x[i] <= problem.lower[i] + 1e-12
                || sol.x[i] >= problem.upper[i] - 1e-12;
            assert!(at_bound || grad[i].abs() <= 1e-9, "coordinate {i}: {}", grad[i]);
        }
    }

    #[test]
    fn objective_scaling_leaves_argmin_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = 5;
        let problem = BoxQp {
            hessian: random_spd(d, &mut rng),
            gradient: DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
            lower: DVector::from_element(d, -0.5),
            upper: DVector::from_element(d, 0.5),
        };
        let scaled = BoxQp {
            hessian: &problem.hessian * 37.0,
            gradient: &problem.gradient * 37.0,
            lower: problem.lower.clone(),
            upper: problem.upper.clone(),
        };
        let a = solve_box_qp(&problem, 1e-12, 300).unwrap();
        let b = solve_box_qp(&scaled, 1e-10, 300).unwrap();
        assert_relative_eq!(a.x, b.x, epsilon = 1e-9);
    }

    #[test]
    fn deterministic_for_identical_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 7;
        let problem = BoxQp {
            hessian: random_spd(d, &mut rng),
            gradient: DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)),
            lower: DVector::from_element(d, -0.3),
            upper: DVector::from_element(d, 0.3),
        };
        let a = solve_box_qp(&problem, 1e-10, 100).unwrap();
        let b = solve_box_qp(&problem, 1e-10, 100).unwrap();
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn single_identity_task_reproduces_target() {
        let target = DVector::from_column_slice(&[0.4, -0.7, 0.2]);
        let (h, f) = stack_tasks(&[Task::new(DMatrix::identity(3, 3), target.clone(), 1.0)])
            .unwrap();
        let sol = solve_box_qp(&BoxQp::unbounded(h, f), 1e-12, 50).unwrap();
        assert_relative_eq!(sol.x, target, epsilon = 1e-7);
    }

    #[test]
    fn conflicting_scalar_tasks_give_weighted_mean() {
        let one = DMatrix::identity(1, 1);
        let (h, f) = stack_tasks(&[
            Task::new(one.clone(), DVector::from_element(1, 2.0), 3.0),
            Task::new(one, DVector::from_element(1, -1.0), 1.0),
        ])
        .unwrap();
        let sol = solve_box_qp(&BoxQp::unbounded(h, f), 1e-12, 50).unwrap();
        let expected = (3.0 * 2.0 + 1.0 * (-1.0)) / 4.0;
        assert_relative_eq!(sol.x[0], expected, epsilon = 1e-7);
    }

    #[test]
    fn stack_rejects_dimension_mismatch() {
        let result = stack_tasks(&[
            Task::new(DMatrix::identity(2, 2), DVector::zeros(2), 1.0),
            Task::new(DMatrix::identity(3, 3), DVector::zeros(3), 1.0),
        ]);
        assert!(matches!(result, Err(QpError::DimensionMismatch { .. })));
    }

    /// A stack shaped like the flight problem: 6 momentum rows plus n
    /// postural rows, compared against a one-shot normal-equations solve.
    #[test]
    fn task_stack_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = 8;
        let momentum = DMatrix::from_fn(6, d, |_, _| rng.gen_range(-1.0..1.0));
        let momentum_target = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let mut posture = DMatrix::zeros(4, d);
        for j in 0..4 {
            posture[(j, 4 + j)] = 1.0;
        }
        let posture_target = DVector::from_fn(4, |_, _| rng.gen_range(-0.5..0.5));
        let (h, f) = stack_tasks(&[
            Task::new(momentum.clone(), momentum_target.clone(), 2.0),
            Task::new(posture.clone(), posture_target.clone(), 0.1),
        ])
        .unwrap();
        let sol = solve_box_qp(&BoxQp::unbounded(h.clone(), f.clone()), 1e-12, 100).unwrap();

        let normal = h.lu().solve(&(-f)).unwrap();
        assert_relative_eq!(sol.x, normal, epsilon = 1e-8);
    }

    #[test]
    fn monotone_objective_decrease() {
        // Re-solve with increasing iteration caps; the best objective can
        // only improve as iterations accumulate.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let d = 6;
        let problem = BoxQp {
            hessian: random_spd(d, &mut rng),
            gradient: DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
            lower: DVector::from_element(d, -0.4),
            upper: DVector::from_element(d, 0.4),
        };
        let mut previous = f64::INFINITY;
        for cap in 1..10 {
            let value = match solve_box_qp(&problem, 1e-14, cap) {
                Ok(sol) => problem.objective(&sol.x),
                Err(QpError::NonConvergence { best, .. }) => problem.objective(&best),
                Err(other) => panic!("{other}"),
            };
            assert!(value <= previous + 1e-12, "cap {cap}: {value} > {previous}");
            previous = value;
        }
    }
}
