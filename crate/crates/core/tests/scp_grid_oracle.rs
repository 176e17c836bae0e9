//! Tiny-horizon SCP results against exhaustive search over a 5×5 control grid.

use nalgebra::Vector2;
use prosocial_core::dynamics::{rollout, AgentControl, AgentState, Trajectory};
use prosocial_core::planner::{best_response, solve_ideal, stage_objective, InteractionScene, PlannerConfig};

const OMEGAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
const ACCELS: [f64; 5] = [-1.5, -0.75, 0.0, 0.75, 1.5];

fn config() -> PlannerConfig {
    PlannerConfig { horizon: 3, budget: None, ..PlannerConfig::default() }
}

fn slacks(traj: &Trajectory, leader: Option<&Trajectory>, radius: f64) -> Vec<f64> {
    match leader {
        None => vec![0.0; traj.states.len()],
        Some(l) => traj.positions().zip(l.positions()).map(|(p, q)| (radius - (p - q).norm()).max(0.0)).collect(),
    }
}

fn grid_optimum(start: &AgentState, goal: &Vector2<f64>, leader: Option<&Trajectory>, cfg: &PlannerConfig) -> f64 {
    let steps = cfg.horizon + 1;
    let cells = 25usize.pow(steps as u32);
    let mut best = f64::INFINITY;
    let mut controls = vec![AgentControl::ZERO; steps];
    for k in 0..cells {
        let mut code = k;
        for u in controls.iter_mut() {
            let c = code % 25;
            code /= 25;
            *u = AgentControl { omega: OMEGAS[c % 5], a: ACCELS[c / 5] };
        }
        let traj = rollout(start, &controls, cfg.dt, &cfg.limits).unwrap();
        let eps = slacks(&traj, leader, cfg.collision_radius);
        best = best.min(stage_objective(&traj, goal, &eps, cfg));
    }
    best
}

#[test]
fn ideal_is_no_worse_than_the_grid() {
    let cfg = config();
    let cases = [
        (AgentState::new(0.0, 0.0, 0.5, 0.5), Vector2::new(3.0, 1.0)),
        (AgentState::new(1.0, -1.0, 2.0, 1.2), Vector2::new(-2.0, 4.0)),
        (AgentState::new(0.0, 0.0, 0.0, 0.0), Vector2::new(0.0, 2.0)),
    ];
    for (start, goal) in cases {
        let ideal = solve_ideal(&start, &goal, &[], &cfg).unwrap();
        let ours = stage_objective(&ideal.trajectory, &goal, &[0.0; 5], &cfg);
        let grid = grid_optimum(&start, &goal, None, &cfg);
        assert!(ours <= 1.05 * grid, "scp {ours} vs grid {grid}");
    }
}

#[test]
fn follower_is_no_worse_than_the_grid() {
    let cfg = config();
    let start = AgentState::new(0.0, 0.0, 0.0, 1.0);
    let goal = Vector2::new(3.0, 0.0);
    let leader = rollout(&AgentState::new(1.2, 0.2, std::f64::consts::PI, 0.5), &[AgentControl::ZERO; 4], cfg.dt, &cfg.limits).unwrap();
    let ideal = solve_ideal(&start, &goal, &[], &cfg).unwrap();
    let scene = InteractionScene { leader: Some(leader.clone()), ..InteractionScene::alone(start, goal) };
    let plan = best_response(&scene, &ideal, &cfg).unwrap();
    let ours = stage_objective(&plan.trajectory, &goal, &plan.slacks, &cfg);
    let grid = grid_optimum(&start, &goal, Some(&leader), &cfg);
    assert!(ours <= 1.05 * grid, "scp {ours} vs grid {grid}");
}
