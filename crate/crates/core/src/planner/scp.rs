//! Sequential convex programming with an adaptive trust region.

use std::time::Instant;

use nalgebra::Vector2;

use super::cost::{convenience, convenience_bound, inconvenience_from_values, required_slacks, stage_objective, wall_violation};
use super::problem::{build_follower_program, build_ideal_program, BuiltProgram, LinearizationPoint};
use super::{IdealSolution, InteractionScene, PlanFlags, PlanResult, PlannerConfig, Wall};
use crate::convex::{solve, SolveResult};
use crate::dynamics::{rollout, AgentControl, AgentState, Trajectory};
use crate::Result;

/// Weight of the exact-penalty terms for hard constraints in the merit.
const HARD_PENALTY: f64 = 1e3;
/// A subproblem result is still used if it is this close to feasible.
const USABLE_VIOLATION: f64 = 1e-4;

enum Kind<'a> {
    Ideal,
    Follower(&'a IdealSolution),
}

struct Scp<'a> {
    scene: &'a InteractionScene,
    config: &'a PlannerConfig,
    kind: Kind<'a>,
}

struct Iterate {
    traj: Trajectory,
    slacks: Vec<f64>,
    merit: f64,
}

struct Outcome {
    traj: Trajectory,
    slacks: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
    flags: PlanFlags,
}

impl Scp<'_> {
    fn slacks(&self, traj: &Trajectory) -> Vec<f64> {
        match self.kind {
            Kind::Ideal => vec![0.0; traj.states.len()],
            Kind::Follower(_) => required_slacks(traj, self.scene, self.config),
        }
    }

    fn budget_excess(&self, traj: &Trajectory) -> f64 {
        match (&self.kind, self.config.budget) {
            (Kind::Follower(ideal), Some(b)) => {
                let c = convenience(traj, &self.scene.goal, &self.config.convenience_weights);
                (c - convenience_bound(ideal.convenience, b, self.config.convenience_floor)).max(0.0)
            }
            _ => 0.0,
        }
    }

    fn evaluate(&self, traj: Trajectory) -> Iterate {
        let slacks = self.slacks(&traj);
        let merit = stage_objective(&traj, &self.scene.goal, &slacks, self.config)
            + HARD_PENALTY * (wall_violation(&traj, self.scene) + self.budget_excess(&traj));
        Iterate { traj, slacks, merit }
    }

    fn build(&self, current: &Iterate, duals: Option<Vec<f64>>, trust: f64) -> Result<BuiltProgram> {
        let point = LinearizationPoint { trajectory: current.traj.clone(), slacks: current.slacks.clone(), dynamics_duals: duals };
        match self.kind {
            Kind::Ideal => build_ideal_program(self.scene, &point, self.config, trust),
            Kind::Follower(ideal) => build_follower_program(self.scene, ideal, &point, self.config, trust),
        }
    }

    fn usable(res: &SolveResult) -> bool {
        res.primal.iter().all(|v| v.is_finite()) && (res.is_optimal() || res.max_violation <= USABLE_VIOLATION)
    }

    fn run(&self, init: Trajectory) -> Result<Outcome> {
        let cfg = self.config;
        let mut current = self.evaluate(init);
        let mut history = vec![current.merit];
        let mut flags = PlanFlags::default();
        let mut trust = cfg.trust_weight;
        let trust_floor = 1e-3 * cfg.trust_weight;
        let mut converged = false;
        let mut iterations = 0;
        let mut duals = None;

        while iterations < cfg.scp_iterations {
            iterations += 1;
            let built = self.build(&current, duals.take(), trust)?;
            flags.degenerate_normal |= built.degenerate_normal;
            let warm = built.layout.pack(&current.traj, &current.slacks);
            let res = solve(&built.program, Some(&warm), cfg.solver_tolerance)?;
            if !Self::usable(&res) {
                log::debug!("SCP subproblem {:?} at iteration {iterations}", res.status);
                flags.subproblem_failure = true;
                break;
            }
            duals = Some(res.equality_duals.clone());
            let controls: Vec<AgentControl> = built.layout.controls(&res.primal).into_iter().map(|u| cfg.limits.clamp_control(u)).collect();
            let candidate = self.evaluate(rollout(&self.scene.start, &controls, cfg.dt, &cfg.limits)?);
            let change = candidate.traj.distance(&current.traj);
            let predicted = built.model_objective(&warm) - built.model_objective(&res.primal);
            let actual = current.merit - candidate.merit;

            if candidate.merit <= current.merit {
                if predicted > 0.0 && actual > 0.75 * predicted {
                    trust = (0.25 * trust).max(trust_floor);
                }
                history.push(candidate.merit);
                current = candidate;
                if change < cfg.scp_tolerance {
                    converged = true;
                    break;
                }
            } else {
                trust = (4.0 * trust).max(1e-2);
                if change < cfg.scp_tolerance {
                    converged = true;
                    break;
                }
            }
        }
        flags.not_converged = !converged && !flags.subproblem_failure;
        Ok(Outcome { traj: current.traj, slacks: current.slacks, iterations, history, flags })
    }
}

/// Agent-free trajectory toward `goal` from `start`; SCP starts from a
/// zero-control rollout.
pub fn solve_ideal(start: &AgentState, goal: &Vector2<f64>, walls: &[Wall], config: &PlannerConfig) -> Result<IdealSolution> {
    config.validate()?;
    let scene = InteractionScene { walls: walls.to_vec(), ..InteractionScene::alone(*start, *goal) };
    scene.validate(config)?;
    let init = rollout(start, &vec![AgentControl::ZERO; config.horizon + 1], config.dt, &config.limits)?;
    let scp = Scp { scene: &scene, config, kind: Kind::Ideal };
    let out = scp.run(init)?;
    let convenience = convenience(&out.traj, goal, &config.convenience_weights);
    Ok(IdealSolution { trajectory: out.traj, convenience, converged: !out.flags.any() })
}

/// Follower response to the scene, initialized at the ideal trajectory.
pub fn best_response(scene: &InteractionScene, ideal: &IdealSolution, config: &PlannerConfig) -> Result<PlanResult> {
    let clock = Instant::now();
    config.validate()?;
    scene.validate(config)?;
    let scp = Scp { scene, config, kind: Kind::Follower(ideal) };
    let mut out = scp.run(ideal.trajectory.clone())?;
    let w = &config.convenience_weights;
    let incon = |t: &Trajectory| inconvenience_from_values(convenience(t, &scene.goal, w), ideal.convenience, config.convenience_floor);
    let mut value = incon(&out.traj);

    if let Some(budget) = config.budget {
        if value > budget {
            // the subproblem sees linearized velocities; pull the executed
            // controls toward the ideal ones until the exact value fits
            let blend = |alpha: f64| -> Result<Trajectory> {
                let controls: Vec<AgentControl> = out
                    .traj
                    .controls
                    .iter()
                    .zip(&ideal.trajectory.controls)
                    .map(|(u, v)| AgentControl { omega: (1.0 - alpha) * u.omega + alpha * v.omega, a: (1.0 - alpha) * u.a + alpha * v.a })
                    .collect();
                rollout(&scene.start, &controls, config.dt, &config.limits)
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut best = ideal.trajectory.clone();
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let t = blend(mid)?;
                if incon(&t) <= budget {
                    hi = mid;
                    best = t;
                } else {
                    lo = mid;
                }
            }
            out.slacks = required_slacks(&best, scene, config);
            out.traj = best;
            value = incon(&out.traj);
            out.flags.budget_restored = true;
        }
    }

    Ok(PlanResult {
        trajectory: out.traj,
        slacks: out.slacks,
        inconvenience: value,
        scp_iterations: out.iterations,
        objective_history: out.history,
        solve_time_s: clock.elapsed().as_secs_f64(),
        flags: out.flags,
    })
}
