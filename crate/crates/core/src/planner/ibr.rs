//! Iterated best response between the robot and its model of the human.

use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::scp::{best_response, solve_ideal};
use super::{IdealSolution, InteractionScene, Peripheral, PlanResult, PlannerConfig, Wall};
use crate::dynamics::{AgentControl, AgentState};
use crate::Result;

/// Current state and goal of one interactive agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentTask {
    pub state: AgentState,
    pub goal: [f64; 2],
}

impl AgentTask {
    pub fn goal(&self) -> Vector2<f64> {
        Vector2::from(self.goal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbrPlan {
    pub robot: PlanResult,
    /// The robot's prediction of the human's response.
    pub human: PlanResult,
    pub robot_ideal: IdealSolution,
    pub human_ideal: IdealSolution,
    pub solve_time_s: f64,
}

/// Alternates robot and human best responses, both initialized at their
/// ideal trajectories for the current step. Depends only on the arguments.
pub fn ibr_plan(
    robot: &AgentTask,
    human: &AgentTask,
    peripherals: &[Peripheral],
    walls: &[Wall],
    robot_config: &PlannerConfig,
    human_config: &PlannerConfig,
) -> Result<IbrPlan> {
    let clock = Instant::now();
    let robot_ideal = solve_ideal(&robot.state, &robot.goal(), walls, robot_config)?;
    let human_ideal = solve_ideal(&human.state, &human.goal(), walls, human_config)?;
    let mut robot_plan = PlanResult::from_ideal(&robot_ideal);
    let mut human_plan = PlanResult::from_ideal(&human_ideal);

    let scene = |task: &AgentTask, leader: &PlanResult| InteractionScene {
        start: task.state,
        goal: task.goal(),
        leader: Some(leader.trajectory.clone()),
        peripherals: peripherals.to_vec(),
        walls: walls.to_vec(),
    };
    for _ in 0..robot_config.ibr_iterations {
        robot_plan = best_response(&scene(robot, &human_plan), &robot_ideal, robot_config)?;
        human_plan = best_response(&scene(human, &robot_plan), &human_ideal, human_config)?;
    }
    Ok(IbrPlan { robot: robot_plan, human: human_plan, robot_ideal, human_ideal, solve_time_s: clock.elapsed().as_secs_f64() })
}

/// One MPC step: plan and return the first robot control.
pub fn plan_step(
    robot: &AgentTask,
    human: &AgentTask,
    peripherals: &[Peripheral],
    walls: &[Wall],
    robot_config: &PlannerConfig,
    human_config: &PlannerConfig,
) -> Result<(AgentControl, IbrPlan)> {
    let plan = ibr_plan(robot, human, peripherals, walls, robot_config, human_config)?;
    Ok((plan.robot.trajectory.controls[0], plan))
}
