//! Convex subproblems produced by sequential convex programming: quadratic
//! objective, linear equalities/inequalities, variable bounds and convex
//! quadratic inequalities, solved by a sparse primal–dual interior-point method.

mod ipm;
mod program;
pub mod skyline;

use serde::{Deserialize, Serialize};

pub use program::{check_feasibility, ConvexProgram, LinearRow, QuadraticForm, SymSparse, Violations, PSD_TOLERANCE};

use crate::Result;

/// Default feasibility/optimality tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Default interior-point iteration cap per subproblem.
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iterations: usize,
    /// Run a phase-I program when the main iteration fails, to tell
    /// infeasibility apart from slow convergence.
    pub detect_infeasibility: bool,
    pub refinement_steps: usize,
    /// Static KKT regularization.
    pub regularization: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            detect_infeasibility: true,
            refinement_steps: 3,
            regularization: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub objective: f64,
    /// Largest constraint violation of `primal` over all classes (≥ 0).
    pub max_violation: f64,
    pub iterations: usize,
    pub equality_duals: Vec<f64>,
    pub inequality_duals: Vec<f64>,
    pub quadratic_duals: Vec<f64>,
    /// `sᵀλ` at the returned iterate.
    pub duality_gap: f64,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves `program` with default settings and the given tolerance.
pub fn solve(program: &ConvexProgram, warm_start: Option<&[f64]>, tol: f64) -> Result<SolveResult> {
    let settings = SolverSettings { tol, ..SolverSettings::default() };
    solve_with(program, warm_start, &settings)
}

pub fn solve_with(program: &ConvexProgram, warm_start: Option<&[f64]>, settings: &SolverSettings) -> Result<SolveResult> {
    program.check_dimensions()?;
    Ok(ipm::solve(program, warm_start, settings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_with_lower_bound() {
        // minimize x² s.t. x ≥ 1
        let mut p = ConvexProgram::new(1);
        p.objective.hessian.add(0, 0, 2.0);
        p.add_inequality(vec![(0, -1.0)], -1.0);
        let r = solve(&p, None, 1e-8).unwrap();
        assert!(r.is_optimal());
        assert!((r.primal[0] - 1.0).abs() < 1e-6);
        assert!((r.objective - 1.0).abs() < 1e-6);
        assert!(r.duality_gap <= 1e-6);
    }

    #[test]
    fn projection_onto_half_space() {
        // minimize ‖z − z0‖² s.t. a·z ≤ b with a·z0 > b
        let z0 = [2.0, 1.0, -0.5];
        let a = [1.0, 2.0, -1.0];
        let b = 1.0;
        let mut p = ConvexProgram::new(3);
        for (i, &c) in z0.iter().enumerate() {
            p.objective.add_diag_square(i, c, 1.0);
        }
        p.add_inequality(a.iter().copied().enumerate().collect(), b);
        let r = solve(&p, None, 1e-9).unwrap();
        assert!(r.is_optimal());
        let az0: f64 = a.iter().zip(&z0).map(|(x, y)| x * y).sum();
        let aa: f64 = a.iter().map(|x| x * x).sum();
        let shift = (az0 - b) / aa;
        for i in 0..3 {
            assert!((r.primal[i] - (z0[i] - shift * a[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_objective_over_ball() {
        // minimize cᵀz s.t. ‖z − center‖² ≤ r²  →  z = center − r c/‖c‖
        let c = [1.0, -2.0];
        let center = [0.5, 0.5];
        let radius = 2.0;
        let mut p = ConvexProgram::new(2);
        p.objective.linear = c.to_vec();
        let mut ball = QuadraticForm::zero(2);
        ball.add_diag_square(0, center[0], 1.0);
        ball.add_diag_square(1, center[1], 1.0);
        ball.constant -= radius * radius;
        p.quadratic_inequalities.push(ball);
        let r = solve(&p, None, 1e-9).unwrap();
        assert!(r.is_optimal(), "{:?}", r.status);
        let norm = (c[0] * c[0] + c[1] * c[1]).sqrt();
        for i in 0..2 {
            assert!((r.primal[i] - (center[i] - radius * c[i] / norm)).abs() < 1e-5);
        }
    }

    #[test]
    fn equality_constrained_least_squares() {
        // minimize ‖z‖² s.t. z0 + z1 + z2 = 3 → z = (1, 1, 1)
        let mut p = ConvexProgram::new(3);
        for i in 0..3 {
            p.objective.add_diag_square(i, 0.0, 1.0);
        }
        p.add_equality(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 3.0);
        let r = solve(&p, None, 1e-9).unwrap();
        assert!(r.is_optimal());
        for v in &r.primal {
            assert!((v - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn infeasible_is_reported_not_crashed() {
        let mut p = ConvexProgram::new(1);
        p.objective.hessian.add(0, 0, 1.0);
        p.add_inequality(vec![(0, -1.0)], -1.0); // x ≥ 1
        p.add_inequality(vec![(0, 1.0)], 0.0); // x ≤ 0
        let r = solve(&p, None, 1e-6).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);

        let mut p = ConvexProgram::new(2);
        p.add_equality(vec![(0, 1.0), (1, 1.0)], 1.0);
        p.add_equality(vec![(0, 1.0), (1, 1.0)], 2.0);
        let r = solve(&p, None, 1e-6).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn fixed_bounds_become_equalities() {
        let mut p = ConvexProgram::new(2);
        p.objective.add_diag_square(0, 5.0, 1.0);
        p.objective.add_diag_square(1, 5.0, 1.0);
        p.set_bounds(0, 2.0, 2.0);
        p.set_bounds(1, -1.0, 3.0);
        let r = solve(&p, None, 1e-8).unwrap();
        assert!(r.is_optimal());
        assert!((r.primal[0] - 2.0).abs() < 1e-9);
        assert!((r.primal[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_for_identical_inputs() {
        let mut p = ConvexProgram::new(3);
        for i in 0..3 {
            p.objective.add_diag_square(i, i as f64, 1.0 + i as f64);
        }
        p.add_inequality(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 1.0);
        let a = solve(&p, Some(&[0.1, 0.2, 0.3]), 1e-8).unwrap();
        let b = solve(&p, Some(&[0.1, 0.2, 0.3]), 1e-8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_errors_are_rejected() {
        let mut p = ConvexProgram::new(2);
        p.add_inequality(vec![(5, 1.0)], 0.0);
        assert!(solve(&p, None, 1e-6).is_err());
    }
}
