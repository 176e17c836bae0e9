//! Interaction-aware trajectory planning.
//!
//! The idealized problem plans toward the goal as if no one else were around;
//! the follower problem responds to a fixed leader trajectory with a softened
//! clearance constraint, a markup on later stage costs and a hard cap on how
//! much less convenient the result may be than the ideal. Both are solved by
//! sequential convex programming with a trust region, and iterated best
//! response alternates robot and human follower problems.

pub mod cost;
mod ibr;
mod problem;
mod scp;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, Limits, Trajectory};
use crate::{Error, Result};

pub use cost::{convenience, inconvenience, inconvenience_from_values, planar_velocity, stage_objective};
pub use ibr::{ibr_plan, plan_step, AgentTask, IbrPlan};
pub use problem::{build_follower_program, build_ideal_program, BuiltProgram, Layout, LinearizationPoint};
pub use scp::{best_response, solve_ideal};

/// How the inconvenience budget enters each convex subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Convex quadratic inequality, enforced by the solver as is.
    #[default]
    Native,
    /// First-order expansion around the SCP iterate (debugging aid).
    Linearized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Number of planned controls minus one; plans have `horizon + 2` states.
    pub horizon: usize,
    pub dt: f64,
    /// Per-step multiplier on stage costs (μ ≥ 1).
    pub markup: f64,
    /// Per-step discount on the slack penalty (γ).
    pub collision_discount: f64,
    /// Slack penalty weight at t = 0 (γ0).
    pub slack_weight: f64,
    /// Inconvenience budget; `None` drops the constraint.
    pub budget: Option<f64>,
    pub budget_mode: BudgetMode,
    /// Initial trust-region weight; adapted during SCP.
    pub trust_weight: f64,
    /// Weights of (path length², velocity change², goal distance²).
    pub convenience_weights: [f64; 3],
    /// Control effort weight on `[ω, a]`, symmetric PSD.
    pub control_weight: [[f64; 2]; 2],
    pub goal_weight: f64,
    pub terminal_weight: f64,
    pub collision_radius: f64,
    pub ibr_iterations: usize,
    pub scp_iterations: usize,
    /// SCP stops once the trajectory moves less than this between iterates.
    pub scp_tolerance: f64,
    /// Floor of the inconvenience denominator.
    pub convenience_floor: f64,
    pub solver_tolerance: f64,
    pub limits: Limits,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            dt: 0.1,
            markup: 1.05,
            collision_discount: 0.98,
            slack_weight: 150.0,
            budget: Some(0.2),
            budget_mode: BudgetMode::Native,
            trust_weight: 5.0,
            convenience_weights: [1.0, 1.0, 1.0],
            control_weight: [[1.0, 0.0], [0.0, 1.0]],
            goal_weight: 0.1,
            terminal_weight: 10.0,
            collision_radius: 1.0,
            ibr_iterations: 3,
            scp_iterations: 10,
            scp_tolerance: 1e-3,
            convenience_floor: 1e-3,
            solver_tolerance: 1e-6,
            limits: Limits::default(),
        }
    }
}

impl PlannerConfig {
    /// Single best response against constant-velocity predictions: no
    /// markup, no budget, stiff slack penalty.
    pub fn optimal_control() -> Self {
        Self { markup: 1.0, budget: None, slack_weight: 1000.0, ibr_iterations: 0, ..Self::default() }
    }

    /// Optimal-control objective iterated with best responses.
    pub fn vanilla_ibr() -> Self {
        Self { ibr_iterations: 3, ..Self::optimal_control() }
    }

    pub fn markup_at(&self, t: usize) -> f64 {
        self.markup.powi(t as i32)
    }

    pub fn slack_weight_at(&self, t: usize) -> f64 {
        self.slack_weight * self.collision_discount.powi(t as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.horizon < 1 {
            return bad("horizon must be >= 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {}", self.dt));
        }
        if !(self.markup >= 1.0 && self.markup.is_finite()) {
            return bad(format!("markup = {} (must be >= 1)", self.markup));
        }
        if !(self.collision_discount > 0.0 && self.collision_discount <= 1.0) {
            return bad(format!("collision_discount = {} (must be in (0, 1])", self.collision_discount));
        }
        let weights = [
            ("slack_weight", self.slack_weight),
            ("trust_weight", self.trust_weight),
            ("goal_weight", self.goal_weight),
            ("terminal_weight", self.terminal_weight),
            ("collision_radius", self.collision_radius),
            ("convenience_weights[0]", self.convenience_weights[0]),
            ("convenience_weights[1]", self.convenience_weights[1]),
            ("convenience_weights[2]", self.convenience_weights[2]),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} = {w} (must be finite and >= 0)"));
            }
        }
        if let Some(b) = self.budget {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("budget = {b}"));
            }
        }
        if !(self.convenience_floor > 0.0) {
            return bad("convenience_floor must be > 0".into());
        }
        if !(self.scp_tolerance > 0.0 && self.solver_tolerance > 0.0) {
            return bad("tolerances must be > 0".into());
        }
        let [[r00, r01], [r10, r11]] = self.control_weight;
        if (r01 - r10).abs() > 1e-12 || r00 < 0.0 || r11 < 0.0 || r00 * r11 - r01 * r01 < -1e-12 {
            return bad(format!("control_weight {:?} is not symmetric PSD", self.control_weight));
        }
        self.limits.validate()
    }
}

/// Half-plane `normal · p ≥ offset` of free space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl Wall {
    /// Wall through `point` whose free side is `normal` (normalized here).
    pub fn through(point: [f64; 2], normal: [f64; 2]) -> Self {
        let n = Vector2::from(normal).normalize();
        Self { normal: [n.x, n.y], offset: n.dot(&Vector2::from(point)) }
    }

    pub fn normal(&self) -> Vector2<f64> {
        Vector2::from(self.normal)
    }

    /// Signed distance into free space (negative inside the wall).
    pub fn clearance(&self, p: &Vector2<f64>) -> f64 {
        self.normal().dot(p) - self.offset
    }
}

/// Nearby non-interacting agent modeled at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peripheral {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl Peripheral {
    pub fn position_at(&self, time: f64) -> Vector2<f64> {
        Vector2::from(self.position) + Vector2::from(self.velocity) * time
    }
}

/// Everything one best response needs besides its own configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionScene {
    pub start: AgentState,
    pub goal: Vector2<f64>,
    /// Fixed trajectory of the other interactive agent, if any.
    pub leader: Option<Trajectory>,
    pub peripherals: Vec<Peripheral>,
    pub walls: Vec<Wall>,
}

impl InteractionScene {
    pub fn alone(start: AgentState, goal: Vector2<f64>) -> Self {
        Self { start, goal, leader: None, peripherals: Vec::new(), walls: Vec::new() }
    }

    pub fn validate(&self, config: &PlannerConfig) -> Result<()> {
        if !self.start.is_finite() || !(self.goal.x.is_finite() && self.goal.y.is_finite()) {
            return Err(Error::NonFinite("scene start or goal".into()));
        }
        if let Some(leader) = &self.leader {
            if leader.states.len() != config.horizon + 2 {
                return Err(Error::Dimension(format!(
                    "leader trajectory has {} states, horizon needs {}",
                    leader.states.len(),
                    config.horizon + 2
                )));
            }
            if !leader.states.iter().all(AgentState::is_finite) {
                return Err(Error::NonFinite("leader trajectory".into()));
            }
        }
        for w in &self.walls {
            if (w.normal().norm() - 1.0).abs() > 1e-9 || !w.offset.is_finite() {
                return Err(Error::InvalidConfig(format!("wall normal {:?} is not unit length", w.normal)));
            }
        }
        for p in &self.peripherals {
            if !p.position.iter().chain(&p.velocity).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("peripheral agent".into()));
            }
        }
        Ok(())
    }
}

/// Agent-free optimum toward the goal and its convenience value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealSolution {
    pub trajectory: Trajectory,
    pub convenience: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanFlags {
    /// SCP hit its iteration cap before the trajectory settled.
    pub not_converged: bool,
    /// A collision normal was undefined (coincident positions) and replaced.
    pub degenerate_normal: bool,
    /// A convex subproblem failed; the previous iterate was kept.
    pub subproblem_failure: bool,
    /// The SCP result exceeded the budget under exact dynamics and was
    /// blended back toward the ideal controls.
    pub budget_restored: bool,
}

impl PlanFlags {
    pub fn merge(&mut self, other: &PlanFlags) {
        self.not_converged |= other.not_converged;
        self.degenerate_normal |= other.degenerate_normal;
        self.subproblem_failure |= other.subproblem_failure;
        self.budget_restored |= other.budget_restored;
    }

    pub fn any(&self) -> bool {
        self.not_converged || self.degenerate_normal || self.subproblem_failure || self.budget_restored
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// Rolled out under exact dynamics from the scene start.
    pub trajectory: Trajectory,
    /// Clearance shortfall `max(0, d − ‖p − p_other‖)` per step.
    pub slacks: Vec<f64>,
    pub inconvenience: f64,
    pub scp_iterations: usize,
    /// Merit value of each accepted SCP iterate, starting with the initialization.
    pub objective_history: Vec<f64>,
    pub solve_time_s: f64,
    pub flags: PlanFlags,
}

impl PlanResult {
    pub(crate) fn from_ideal(ideal: &IdealSolution) -> Self {
        Self {
            trajectory: ideal.trajectory.clone(),
            slacks: vec![0.0; ideal.trajectory.states.len()],
            inconvenience: 0.0,
            scp_iterations: 0,
            objective_history: Vec::new(),
            solve_time_s: 0.0,
            flags: PlanFlags { not_converged: !ideal.converged, ..PlanFlags::default() },
        }
    }
}
