//! Convenience, inconvenience and the exact planning objective.

use nalgebra::Vector2;

use super::{IdealSolution, InteractionScene, PlannerConfig};
use crate::dynamics::{AgentState, Trajectory};

/// `(v cos θ, v sin θ)`
pub fn planar_velocity(s: &AgentState) -> Vector2<f64> {
    s.velocity()
}

/// `w₁ Σ‖p_{t+1} − p_t‖² + w₂ Σ‖vel_{t+1} − vel_t‖² + w₃ ‖p_{T+1} − goal‖²`
pub fn convenience(traj: &Trajectory, goal: &Vector2<f64>, w: &[f64; 3]) -> f64 {
    let mut path = 0.0;
    let mut accel = 0.0;
    for pair in traj.states.windows(2) {
        path += (pair[1].position() - pair[0].position()).norm_squared();
        accel += (planar_velocity(&pair[1]) - planar_velocity(&pair[0])).norm_squared();
    }
    let terminal = (traj.terminal().position() - goal).norm_squared();
    w[0] * path + w[1] * accel + w[2] * terminal
}

pub fn inconvenience_from_values(c: f64, c_ideal: f64, floor: f64) -> f64 {
    (c - c_ideal) / c_ideal.max(floor)
}

/// Relative loss of convenience against the ideal, with a floored denominator.
pub fn inconvenience(traj: &Trajectory, ideal: &IdealSolution, goal: &Vector2<f64>, w: &[f64; 3], floor: f64) -> f64 {
    inconvenience_from_values(convenience(traj, goal, w), ideal.convenience, floor)
}

/// Largest budget-compatible convenience value.
pub(crate) fn convenience_bound(c_ideal: f64, budget: f64, floor: f64) -> f64 {
    c_ideal + budget * c_ideal.max(floor)
}

/// `Σ_t μ^t (uᵀRu + w_goal‖p_t − g‖²) + w_T‖p_{T+1} − g‖² + Σ_t γ0 γ^t ε_t²`
pub fn stage_objective(traj: &Trajectory, goal: &Vector2<f64>, slacks: &[f64], config: &PlannerConfig) -> f64 {
    let r = &config.control_weight;
    let mut total = 0.0;
    for (t, (s, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
        let effort = r[0][0] * u.omega * u.omega + 2.0 * r[0][1] * u.omega * u.a + r[1][1] * u.a * u.a;
        total += config.markup_at(t) * (effort + config.goal_weight * (s.position() - goal).norm_squared());
    }
    total += config.terminal_weight * (traj.terminal().position() - goal).norm_squared();
    for (t, e) in slacks.iter().enumerate() {
        total += config.slack_weight_at(t) * e * e;
    }
    total
}

/// Positions of every obstacle the follower must clear at step `t`.
pub(crate) fn obstacles_at(scene: &InteractionScene, t: usize, dt: f64) -> impl Iterator<Item = Vector2<f64>> + '_ {
    let leader = scene.leader.as_ref().map(|l| l.states[t].position());
    leader.into_iter().chain(scene.peripherals.iter().map(move |p| p.position_at(t as f64 * dt)))
}

/// Smallest slacks that make the exact clearance constraints hold.
pub(crate) fn required_slacks(traj: &Trajectory, scene: &InteractionScene, config: &PlannerConfig) -> Vec<f64> {
    traj.states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let p = s.position();
            obstacles_at(scene, t, config.dt).map(|q| (config.collision_radius - (p - q).norm()).max(0.0)).fold(0.0, f64::max)
        })
        .collect()
}

/// Total wall penetration over steps `1..`.
pub(crate) fn wall_violation(traj: &Trajectory, scene: &InteractionScene) -> f64 {
    traj.states
        .iter()
        .skip(1)
        .map(|s| {
            let p = s.position();
            scene.walls.iter().map(|w| (-w.clearance(&p)).max(0.0)).sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rollout, AgentControl, Limits};
    use approx::assert_abs_diff_eq;

    #[test]
    fn stationary_at_goal_is_free() {
        let s = AgentState::new(3.0, -1.0, 0.4, 0.0);
        let traj = rollout(&s, &[AgentControl::ZERO; 10], 0.1, &Limits::default()).unwrap();
        assert_eq!(convenience(&traj, &Vector2::new(3.0, -1.0), &[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn straight_line_closed_form() {
        let s = AgentState::new(0.0, 0.0, 0.0, 1.0);
        let traj = rollout(&s, &[AgentControl::ZERO; 25], 0.1, &Limits::default()).unwrap();
        let c = convenience(&traj, &Vector2::new(2.5, 0.0), &[1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(c, 25.0 * 0.01, epsilon = 1e-12);
    }

    #[test]
    fn inconvenience_is_relative_and_floored() {
        assert_abs_diff_eq!(inconvenience_from_values(1.2 * 7.5, 7.5, 1e-3), 0.2, epsilon = 1e-12);
        let v = inconvenience_from_values(0.5, 0.0, 1e-3);
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, 500.0, epsilon = 1e-9);
    }

    #[test]
    fn markup_one_weights_stages_equally() {
        let cfg = PlannerConfig { markup: 1.0, ..PlannerConfig::default() };
        assert!((0..30).all(|t| cfg.markup_at(t) == 1.0));
    }

    #[test]
    fn discounted_slack_weight_at_horizon() {
        let cfg = PlannerConfig::default();
        assert_abs_diff_eq!(cfg.slack_weight_at(25), 150.0 * 0.98f64.powi(25), epsilon = 1e-12);
        assert!((cfg.slack_weight_at(25) - 90.5).abs() < 0.05);
    }
}
