//! Controllers behind one observation → control interface: the
//! interaction-aware planner ("ours"), vanilla iterated best response,
//! single-shot optimal control, the social force model and a
//! constant-velocity reactive avoider.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, AgentControl, AgentState, Limits};
use crate::planner::{
    best_response, ibr_plan, solve_ideal, AgentTask, InteractionScene, Peripheral, PlanFlags, PlanResult, PlannerConfig, Wall,
};
use crate::{Error, Result};

/// What one agent sees at the start of a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub own: AgentState,
    pub goal: Vector2<f64>,
    /// Other interactive agents; the first one is the interaction partner
    /// for planners that model a single human.
    pub others: Vec<AgentState>,
    /// Goals of `others` where known, index-aligned.
    pub other_goals: Vec<Option<Vector2<f64>>>,
    /// Non-interacting agents at their current positions.
    pub peripherals: Vec<Peripheral>,
    pub walls: Vec<Wall>,
    pub dt: f64,
}

impl Observation {
    fn others_as_peripherals(&self, skip: usize) -> Vec<Peripheral> {
        self.others
            .iter()
            .skip(skip)
            .map(|s| {
                let v = s.velocity();
                Peripheral { position: [s.x, s.y], velocity: [v.x, v.y] }
            })
            .chain(self.peripherals.iter().copied())
            .collect()
    }
}

/// Planner diagnostics for one decision; empty for reactive policies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub control: AgentControl,
    pub scp_iterations: usize,
    pub slack_sum: f64,
    pub inconvenience: f64,
    pub flags: PlanFlags,
    /// Robot plan positions (empty for reactive policies).
    #[serde(skip)]
    pub preview: Vec<[f64; 2]>,
    #[serde(skip)]
    pub solve_time_s: f64,
}

impl Decision {
    pub fn reactive(control: AgentControl) -> Self {
        Self { control, ..Self::default() }
    }

    fn from_plan(plan: &PlanResult, extra_iterations: usize, solve_time_s: f64) -> Self {
        Self {
            control: plan.trajectory.controls[0],
            scp_iterations: plan.scp_iterations + extra_iterations,
            slack_sum: plan.slacks.iter().sum(),
            inconvenience: plan.inconvenience,
            flags: plan.flags.clone(),
            preview: plan.trajectory.states.iter().map(|s| [s.x, s.y]).collect(),
            solve_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmParams {
    pub desired_speed: f64,
    /// Relaxation time toward the desired velocity [s].
    pub relaxation: f64,
    /// Agent repulsion amplitude [m/s²] and range [m].
    pub amplitude: f64,
    pub range: f64,
    pub wall_amplitude: f64,
    pub wall_range: f64,
    pub collision_radius: f64,
    /// Turn-rate gain on the angle between force and heading.
    pub steering_gain: f64,
    pub limits: Limits,
}

impl Default for SfmParams {
    fn default() -> Self {
        Self {
            desired_speed: 1.5,
            relaxation: 0.5,
            amplitude: 2.0,
            range: 0.8,
            wall_amplitude: 2.0,
            wall_range: 0.5,
            collision_radius: 1.0,
            steering_gain: 2.0,
            limits: Limits::default(),
        }
    }
}

impl SfmParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.desired_speed,
            self.relaxation,
            self.amplitude,
            self.range,
            self.wall_amplitude,
            self.wall_range,
            self.collision_radius,
            self.steering_gain,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig(format!("social force parameters must be positive: {self:?}")));
        }
        self.limits.validate()
    }
}

/// Net social force on the agent.
pub fn sfm_force(obs: &Observation, params: &SfmParams) -> Vector2<f64> {
    let p = obs.own.position();
    let to_goal = obs.goal - p;
    let desired = if to_goal.norm() > 1e-6 { to_goal.normalize() * params.desired_speed } else { Vector2::zeros() };
    let mut force = (desired - obs.own.velocity()) / params.relaxation;
    let heading = Vector2::new(obs.own.theta.cos(), obs.own.theta.sin());
    let others = obs.others.iter().map(AgentState::position).chain(obs.peripherals.iter().map(|q| q.position_at(0.0)));
    for q in others {
        let away = p - q;
        let dist = away.norm();
        // coincident agents: push backwards, magnitude stays bounded
        let dir = if dist > 1e-9 { away / dist } else { -heading };
        force += dir * params.amplitude * ((params.collision_radius - dist) / params.range).exp();
    }
    for w in &obs.walls {
        force += w.normal() * params.wall_amplitude * (-w.clearance(&p) / params.wall_range).exp();
    }
    force
}

/// Social force mapped onto the unicycle: acceleration from the force
/// component along the heading, turn rate from its bearing.
pub fn sfm_control(obs: &Observation, params: &SfmParams) -> AgentControl {
    let force = sfm_force(obs, params);
    let heading = Vector2::new(obs.own.theta.cos(), obs.own.theta.sin());
    let along = force.dot(&heading);
    let bearing = if force.norm() > 1e-12 { heading.perp(&force).atan2(along) } else { 0.0 };
    params.limits.clamp_control(AgentControl { omega: params.steering_gain * bearing, a: along })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactiveParams {
    /// Constant-velocity look-ahead [s].
    pub horizon_s: f64,
    pub collision_radius: f64,
    pub desired_speed: f64,
    pub heading_gain: f64,
    pub speed_gain: f64,
    /// Speed target shrinks linearly within this distance of the goal [m].
    pub arrival_distance: f64,
    pub limits: Limits,
}

impl Default for ReactiveParams {
    fn default() -> Self {
        Self {
            horizon_s: 2.0,
            collision_radius: 1.0,
            desired_speed: 1.5,
            heading_gain: 2.0,
            speed_gain: 2.0,
            arrival_distance: 1.0,
            limits: Limits::default(),
        }
    }
}

impl ReactiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_s > 0.0 && self.collision_radius > 0.0 && self.arrival_distance > 0.0) {
            return Err(Error::InvalidConfig(format!("reactive parameters must be positive: {self:?}")));
        }
        self.limits.validate()
    }
}

/// Smallest predicted distance to any other agent when holding `control`
/// while everyone else keeps their current velocity.
pub fn predicted_min_distance(obs: &Observation, control: &AgentControl, params: &ReactiveParams) -> Result<f64> {
    let steps = (params.horizon_s / obs.dt).ceil().max(1.0) as usize;
    let own = rollout(&obs.own, &vec![*control; steps], obs.dt, &params.limits)?;
    let others: Vec<Peripheral> = obs.others_as_peripherals(0);
    let mut best = f64::INFINITY;
    for (k, s) in own.states.iter().enumerate() {
        let time = k as f64 * obs.dt;
        for q in &others {
            best = best.min((s.position() - q.position_at(time)).norm());
        }
    }
    Ok(best)
}

fn goal_tracking(obs: &Observation, params: &ReactiveParams) -> AgentControl {
    let to_goal = obs.goal - obs.own.position();
    let dist = to_goal.norm();
    if dist < 1e-6 {
        return params.limits.clamp_control(AgentControl { omega: 0.0, a: -params.speed_gain * obs.own.v });
    }
    let error = wrap_angle(to_goal.y.atan2(to_goal.x) - obs.own.theta);
    let target = params.desired_speed * (dist / params.arrival_distance).min(1.0);
    params.limits.clamp_control(AgentControl { omega: params.heading_gain * error, a: params.speed_gain * (target - obs.own.v) })
}

/// Goal tracking unless a constant-velocity conflict is predicted, in which
/// case the extremal control with the largest predicted clearance is used.
pub fn reactive_cv_control(obs: &Observation, params: &ReactiveParams) -> Result<AgentControl> {
    if predicted_min_distance(obs, &AgentControl::ZERO, params)? >= params.collision_radius {
        return Ok(goal_tracking(obs, params));
    }
    let lim = &params.limits;
    let mut best = (f64::NEG_INFINITY, AgentControl::ZERO);
    // fixed enumeration order keeps ties deterministic
    for omega in [0.0, lim.omega_bounds.0, lim.omega_bounds.1] {
        for a in [lim.a_bounds.0, 0.0, lim.a_bounds.1] {
            let u = AgentControl { omega, a };
            let d = predicted_min_distance(obs, &u, params)?;
            if d > best.0 + 1e-12 {
                best = (d, u);
            }
        }
    }
    Ok(best.1)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r + two_pi
    } else {
        r
    }
}

/// One best response against constant-velocity predictions of everyone else.
pub fn oc_plan(obs: &Observation, config: &PlannerConfig) -> Result<PlanResult> {
    let ideal = solve_ideal(&obs.own, &obs.goal, &obs.walls, config)?;
    let scene = InteractionScene {
        start: obs.own,
        goal: obs.goal,
        leader: None,
        peripherals: obs.others_as_peripherals(0),
        walls: obs.walls.clone(),
    };
    best_response(&scene, &ideal, config)
}

pub fn oc_control(obs: &Observation, config: &PlannerConfig) -> Result<Decision> {
    let clock = std::time::Instant::now();
    let plan = oc_plan(obs, config)?;
    Ok(Decision::from_plan(&plan, 0, clock.elapsed().as_secs_f64()))
}

/// Iterated best response with the first other agent as the partner and the
/// rest as constant-velocity obstacles.
pub fn interactive_control(obs: &Observation, config: &PlannerConfig, partner_model: &PlannerConfig) -> Result<Decision> {
    let Some(partner) = obs.others.first() else {
        return oc_control(obs, config);
    };
    let clock = std::time::Instant::now();
    let robot = AgentTask { state: obs.own, goal: [obs.goal.x, obs.goal.y] };
    // an unknown goal is extrapolated along the partner's heading
    let goal = obs.other_goals.first().copied().flatten().unwrap_or_else(|| {
        let reach = 2.0 * (partner.position() - obs.own.position()).norm().max(1.0);
        partner.position() + Vector2::new(partner.theta.cos(), partner.theta.sin()) * reach
    });
    let human = AgentTask { state: *partner, goal: [goal.x, goal.y] };
    let plan = ibr_plan(&robot, &human, &obs.others_as_peripherals(1), &obs.walls, config, partner_model)?;
    Ok(Decision::from_plan(&plan.robot, 0, clock.elapsed().as_secs_f64()))
}

/// Optimal-control objective with best-response iterations; zero iterations
/// is exactly [`oc_control`].
pub fn vibr_control(obs: &Observation, config: &PlannerConfig) -> Result<Decision> {
    if config.ibr_iterations == 0 {
        return oc_control(obs, config);
    }
    interactive_control(obs, config, config)
}
