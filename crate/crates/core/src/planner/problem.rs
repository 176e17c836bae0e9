//! Convex subproblems around an SCP iterate.

use nalgebra::{Matrix4, SymmetricEigen, Vector2};

use super::cost::{convenience_bound, obstacles_at, planar_velocity};
use super::{BudgetMode, IdealSolution, InteractionScene, PlannerConfig};
use crate::convex::{ConvexProgram, QuadraticForm};
use crate::dynamics::{linearize, position_hessians, AgentControl, Trajectory};
use crate::Result;

/// Stage-interleaved decision vector: `[x_t (4), u_t (2), ε_t]` for
/// `t = 0..=T`, then `[x_{T+1}, ε_{T+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
}

impl Layout {
    const STAGE: usize = 7;

    pub fn new(horizon: usize) -> Self {
        Self { horizon }
    }

    pub fn x(&self, t: usize, k: usize) -> usize {
        Self::STAGE * t + k
    }

    pub fn u(&self, t: usize, k: usize) -> usize {
        debug_assert!(t <= self.horizon);
        Self::STAGE * t + 4 + k
    }

    pub fn eps(&self, t: usize) -> usize {
        if t <= self.horizon {
            Self::STAGE * t + 6
        } else {
            Self::STAGE * t + 4
        }
    }

    pub fn len(&self) -> usize {
        Self::STAGE * (self.horizon + 1) + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pack(&self, traj: &Trajectory, slacks: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.len()];
        for (t, s) in traj.states.iter().enumerate() {
            for (k, v) in s.to_vector().iter().enumerate() {
                z[self.x(t, k)] = *v;
            }
            z[self.eps(t)] = slacks.get(t).copied().unwrap_or(0.0);
        }
        for (t, u) in traj.controls.iter().enumerate() {
            z[self.u(t, 0)] = u.omega;
            z[self.u(t, 1)] = u.a;
        }
        z
    }

    pub fn controls(&self, z: &[f64]) -> Vec<AgentControl> {
        (0..=self.horizon).map(|t| AgentControl { omega: z[self.u(t, 0)], a: z[self.u(t, 1)] }).collect()
    }
}

/// SCP iterate the subproblem is convexified around.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationPoint {
    pub trajectory: Trajectory,
    pub slacks: Vec<f64>,
    /// Multipliers of the dynamics rows from the previous subproblem, one
    /// per row in `(t, component)` order. When present, the curvature of the
    /// dynamics is added to the objective (clipped to be convex).
    pub dynamics_duals: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BuiltProgram {
    pub program: ConvexProgram,
    pub layout: Layout,
    /// Objective terms that are part of the trust region, so the model
    /// objective can be reported without them.
    pub trust: QuadraticForm,
    pub degenerate_normal: bool,
}

impl BuiltProgram {
    /// Objective without the trust-region term.
    pub fn model_objective(&self, z: &[f64]) -> f64 {
        self.program.objective_value(z) - self.trust.value(z)
    }
}

fn check_point(point: &LinearizationPoint, config: &PlannerConfig) -> Result<()> {
    let traj = &point.trajectory;
    if traj.controls.len() != config.horizon + 1 || traj.states.len() != config.horizon + 2 {
        return Err(crate::Error::Dimension(format!(
            "linearization point has {} controls, horizon needs {}",
            traj.controls.len(),
            config.horizon + 1
        )));
    }
    Ok(())
}

/// Objective, dynamics, initial state, speed/control bounds and walls,
/// shared by both problems.
fn base_program(scene: &InteractionScene, point: &LinearizationPoint, config: &PlannerConfig, trust_weight: f64) -> Result<BuiltProgram> {
    check_point(point, config)?;
    let t_max = config.horizon;
    let lay = Layout::new(t_max);
    let mut prog = ConvexProgram::new(lay.len());
    let goal = scene.goal;
    let r = config.control_weight;
    let f = &mut prog.objective;

    for t in 0..=t_max {
        let m = config.markup_at(t);
        let (i0, i1) = (lay.u(t, 0), lay.u(t, 1));
        f.hessian.add(i0, i0, 2.0 * m * r[0][0]);
        f.hessian.add(i1, i0, 2.0 * m * r[1][0]);
        f.hessian.add(i1, i1, 2.0 * m * r[1][1]);
        f.add_diag_square(lay.x(t, 0), goal.x, m * config.goal_weight);
        f.add_diag_square(lay.x(t, 1), goal.y, m * config.goal_weight);
    }
    f.add_diag_square(lay.x(t_max + 1, 0), goal.x, config.terminal_weight);
    f.add_diag_square(lay.x(t_max + 1, 1), goal.y, config.terminal_weight);

    let mut trust = QuadraticForm::zero(lay.len());
    let traj = &point.trajectory;
    for (t, s) in traj.states.iter().enumerate() {
        for (k, v) in s.to_vector().iter().enumerate() {
            trust.add_diag_square(lay.x(t, k), *v, trust_weight);
        }
    }
    for (t, u) in traj.controls.iter().enumerate() {
        trust.add_diag_square(lay.u(t, 0), u.omega, trust_weight);
        trust.add_diag_square(lay.u(t, 1), u.a, trust_weight);
    }
    for &(i, j, v) in &trust.hessian.entries {
        f.hessian.add(i, j, v);
    }
    if let Some(duals) = point.dynamics_duals.as_deref().filter(|d| d.len() == 4 * (t_max + 1)) {
        for t in 0..=t_max {
            add_dynamics_curvature(f, &lay, t, traj, &duals[4 * t..4 * t + 2], config.dt)?;
        }
    }
    for (a, b) in f.linear.iter_mut().zip(&trust.linear) {
        *a += b;
    }
    f.constant += trust.constant;
    f.hessian.compress();

    let start = scene.start.to_vector();
    for k in 0..4 {
        prog.set_bounds(lay.x(0, k), start[k], start[k]);
    }
    for t in 0..=t_max {
        let lin = linearize(&traj.states[t], &traj.controls[t], config.dt)?;
        for i in 0..4 {
            let mut row = vec![(lay.x(t + 1, i), 1.0)];
            for j in 0..4 {
                if lin.a[(i, j)] != 0.0 {
                    row.push((lay.x(t, j), -lin.a[(i, j)]));
                }
            }
            for j in 0..2 {
                if lin.b[(i, j)] != 0.0 {
                    row.push((lay.u(t, j), -lin.b[(i, j)]));
                }
            }
            prog.add_equality(row, lin.c[i]);
        }
        let lim = &config.limits;
        prog.set_bounds(lay.u(t, 0), lim.omega_bounds.0, lim.omega_bounds.1);
        prog.set_bounds(lay.u(t, 1), lim.a_bounds.0, lim.a_bounds.1);
        prog.set_bounds(lay.x(t + 1, 3), lim.v_bounds.0, lim.v_bounds.1);
    }
    for t in 1..=t_max + 1 {
        for w in &scene.walls {
            let n = w.normal();
            prog.add_inequality(vec![(lay.x(t, 0), -n.x), (lay.x(t, 1), -n.y)], -w.offset);
        }
    }
    Ok(BuiltProgram { program: prog, layout: lay, trust, degenerate_normal: false })
}

/// Adds `½ δᵀ M δ` over `δ = (θ_t, v_t, ω_t, a_t) − current`, where `M` is
/// the PSD part of `−Σ yᵢ ∇²fᵢ` for the position rows of step `t`.
fn add_dynamics_curvature(f: &mut QuadraticForm, lay: &Layout, t: usize, traj: &Trajectory, y: &[f64], dt: f64) -> Result<()> {
    let (s, u) = (&traj.states[t], &traj.controls[t]);
    let [hx, hy] = position_hessians(s, u, dt)?;
    let m = -(hx * y[0] + hy * y[1]);
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let m = eig.eigenvectors * Matrix4::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let idx = [lay.x(t, 2), lay.x(t, 3), lay.u(t, 0), lay.u(t, 1)];
    let center = [s.theta, s.v, u.omega, u.a];
    for r in 0..4 {
        for c in 0..=r {
            f.hessian.add(idx[r], idx[c], m[(r, c)]);
        }
        let mc: f64 = (0..4).map(|c| m[(r, c)] * center[c]).sum();
        f.linear[idx[r]] -= mc;
        f.constant += 0.5 * center[r] * mc;
    }
    Ok(())
}

/// Idealized problem: no other agents, slacks pinned to zero.
pub fn build_ideal_program(
    scene: &InteractionScene,
    point: &LinearizationPoint,
    config: &PlannerConfig,
    trust_weight: f64,
) -> Result<BuiltProgram> {
    let mut built = base_program(scene, point, config, trust_weight)?;
    for t in 0..=config.horizon + 1 {
        built.program.set_bounds(built.layout.eps(t), 0.0, 0.0);
    }
    Ok(built)
}

/// Follower problem against the scene's leader and peripherals, with the
/// inconvenience budget relative to `ideal`.
pub fn build_follower_program(
    scene: &InteractionScene,
    ideal: &IdealSolution,
    point: &LinearizationPoint,
    config: &PlannerConfig,
    trust_weight: f64,
) -> Result<BuiltProgram> {
    let mut built = base_program(scene, point, config, trust_weight)?;
    let lay = built.layout;
    let prog = &mut built.program;
    let traj = &point.trajectory;

    for t in 0..=config.horizon + 1 {
        let e = lay.eps(t);
        prog.set_bounds(e, 0.0, f64::INFINITY);
        prog.objective.add_diag_square(e, 0.0, config.slack_weight_at(t));
        let p_bar = traj.states[t].position();
        for q in obstacles_at(scene, t, config.dt) {
            let diff = p_bar - q;
            let dist = diff.norm();
            let n = if dist > 1e-9 {
                diff / dist
            } else {
                built.degenerate_normal = true;
                Vector2::new(1.0, 0.0)
            };
            // ‖p̄ − q‖ + n̄ᵀ(p − p̄) − d ≥ −ε  ⇔  −n̄ᵀp − ε ≤ −d − n̄ᵀq
            prog.add_inequality(vec![(lay.x(t, 0), -n.x), (lay.x(t, 1), -n.y), (e, -1.0)], -config.collision_radius - n.dot(&q));
        }
    }
    prog.objective.hessian.compress();

    if let Some(budget) = config.budget {
        let mut c = linearized_convenience(traj, &scene.goal, &config.convenience_weights, &lay);
        c.constant -= convenience_bound(ideal.convenience, budget, config.convenience_floor);
        match config.budget_mode {
            BudgetMode::Native => {
                c.hessian.compress();
                prog.quadratic_inequalities.push(c);
            }
            BudgetMode::Linearized => {
                let z_bar = lay.pack(traj, &point.slacks);
                let g = c.gradient(&z_bar);
                // c(z̄) + ∇c(z̄)ᵀ(z − z̄) ≤ 0
                let rhs = g.iter().zip(&z_bar).map(|(a, b)| a * b).sum::<f64>() - c.value(&z_bar);
                let coeffs = g.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
                prog.add_inequality(coeffs, rhs);
            }
        }
    }
    Ok(built)
}

/// Convenience as a convex quadratic in the decision vector; planar
/// velocities are linearized in `(θ, v)` around `traj`.
fn linearized_convenience(traj: &Trajectory, goal: &Vector2<f64>, w: &[f64; 3], lay: &Layout) -> QuadraticForm {
    let mut c = QuadraticForm::zero(lay.len());
    // vel_t ≈ J_t [θ_t, v_t] + k_t
    let lin_vel: Vec<([[f64; 2]; 2], Vector2<f64>)> = traj
        .states
        .iter()
        .map(|s| {
            let (sn, cs) = s.theta.sin_cos();
            let j = [[-s.v * sn, cs], [s.v * cs, sn]];
            let vel = planar_velocity(s);
            let k = Vector2::new(vel.x - j[0][0] * s.theta - j[0][1] * s.v, vel.y - j[1][0] * s.theta - j[1][1] * s.v);
            (j, k)
        })
        .collect();
    for t in 0..traj.states.len() - 1 {
        for k in 0..2 {
            c.add_square(&[(lay.x(t + 1, k), 1.0), (lay.x(t, k), -1.0)], 0.0, w[0]);
            let (j1, k1) = &lin_vel[t + 1];
            let (j0, k0) = &lin_vel[t];
            let row = [(lay.x(t + 1, 2), j1[k][0]), (lay.x(t + 1, 3), j1[k][1]), (lay.x(t, 2), -j0[k][0]), (lay.x(t, 3), -j0[k][1])];
            c.add_square(&row, k1[k] - k0[k], w[1]);
        }
    }
    let last = traj.states.len() - 1;
    c.add_diag_square(lay.x(last, 0), goal.x, w[2]);
    c.add_diag_square(lay.x(last, 1), goal.y, w[2]);
    c
}
