//! One human-in-the-loop episode: the tick logic shared by the live server
//! and headless replay.

use std::collections::BTreeMap;

use prosocial_core::dynamics::{AgentControl, Limits};
use prosocial_core::simulation::{EpisodeLog, PolicySpec, Role, Scenario, TickOptions, World};
use serde::{Deserialize, Serialize};

use crate::protocol::{AgentView, WorldState, SCHEMA};
use crate::{HitlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedTick {
    pub tick: usize,
    /// Human command applied at this tick (already clamped).
    pub human: AgentControl,
    /// Agents whose planner overran and held their previous control.
    #[serde(default)]
    pub held: Vec<String>,
}

/// Everything needed to reproduce a session headlessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub schema: u32,
    pub scenario: Scenario,
    pub ticks: Vec<RecordedTick>,
    /// The session ran to the end of the scenario.
    pub complete: bool,
}

impl Recording {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recording serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: Recording = serde_json::from_str(s).map_err(|e| HitlError::Protocol(format!("recording: {e}")))?;
        if rec.schema != SCHEMA {
            return Err(HitlError::Protocol(format!("recording schema {} (expected {SCHEMA})", rec.schema)));
        }
        Ok(rec)
    }
}

pub struct Session {
    world: World,
    human: usize,
    robot: usize,
    human_limits: Limits,
    collision_radius: f64,
    recording: Recording,
    budget_s: Option<f64>,
}

impl Session {
    /// `budget_s` is the planner's wall-time budget per tick; `None` never
    /// discards a plan.
    pub fn new(scenario: Scenario, budget_s: Option<f64>) -> Result<Self> {
        let externals: Vec<usize> =
            scenario.agents.iter().enumerate().filter(|(_, a)| matches!(a.policy, PolicySpec::External)).map(|(i, _)| i).collect();
        let [human] = externals[..] else {
            return Err(HitlError::Scenario(format!("expected exactly one \"external\" agent, found {}", externals.len())));
        };
        let robot = scenario
            .agents
            .iter()
            .position(|a| a.role == Role::Robot && !matches!(a.policy, PolicySpec::External))
            .ok_or_else(|| HitlError::Scenario("no planner-driven robot".into()))?;
        let collision_radius = match &scenario.agents[robot].policy {
            PolicySpec::Ours { planner, .. } | PolicySpec::Vibr { planner } | PolicySpec::Oc { planner } => planner.collision_radius,
            PolicySpec::Sfm { params } => params.collision_radius,
            PolicySpec::ReactiveCv { params } => params.collision_radius,
            PolicySpec::External => 1.0,
        };
        let human_limits = scenario.agents[human].policy.limits();
        let recording = Recording { schema: SCHEMA, scenario: scenario.clone(), ticks: Vec::new(), complete: false };
        Ok(Self { world: World::new(scenario)?, human, robot, human_limits, collision_radius, recording, budget_s })
    }

    pub fn human_id(&self) -> &str {
        &self.world.scenario.agents[self.human].id
    }

    pub fn robot_id(&self) -> &str {
        &self.world.scenario.agents[self.robot].id
    }

    pub fn human_limits(&self) -> &Limits {
        &self.human_limits
    }

    pub fn is_done(&self) -> bool {
        self.world.is_done()
    }

    pub fn tick_index(&self) -> usize {
        self.world.tick
    }

    /// Snapshot of the current world with the given robot preview.
    pub fn state(&self, preview: Vec<[f64; 2]>, overrun: bool) -> WorldState {
        let states = self.world.current_states();
        WorldState {
            tick: self.world.tick,
            time: self.world.time(),
            agents: self
                .world
                .scenario
                .agents
                .iter()
                .zip(&states)
                .map(|(a, s)| AgentView { id: a.id.clone(), role: a.role, x: s.x, y: s.y, theta: s.theta, v: s.v, goal: a.goal })
                .collect(),
            peripherals: self.world.peripherals_now().iter().map(|p| p.position).collect(),
            preview,
            walls: self.world.scenario.walls.clone(),
            collision_radius: self.collision_radius,
            overrun,
            done: self.world.is_done(),
        }
    }

    /// Advances one tick with the given human command (clamped here).
    pub fn tick(&mut self, human: AgentControl) -> Result<WorldState> {
        self.step(human, TickOptions { budget_s: self.budget_s, hold: Vec::new() })
    }

    fn step(&mut self, human: AgentControl, options: TickOptions) -> Result<WorldState> {
        if self.world.is_done() {
            return Err(HitlError::Scenario("session already finished".into()));
        }
        let human = self.human_limits.clamp_control(human);
        let external = BTreeMap::from([(self.human_id().to_string(), human)]);
        let tick = self.world.tick;
        let out = self.world.tick_with(&external, &options)?;
        let held: Vec<String> = out.record.agents.iter().filter(|a| a.overrun).map(|a| a.id.clone()).collect();
        let overrun = out.record.agents[self.robot].overrun;
        self.recording.ticks.push(RecordedTick { tick, human, held });
        self.recording.complete = self.world.is_done();
        let preview = out.previews[self.robot].clone();
        Ok(self.state(preview, overrun))
    }

    pub fn recording(&self) -> &Recording {
        &self.recording
    }

    pub fn finish(self) -> (EpisodeLog, Recording) {
        let (log, _) = self.world.finish();
        (log, self.recording)
    }
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub log: EpisodeLog,
    /// The recording ended before the scenario did.
    pub truncated: bool,
}

/// Re-runs a recorded session without a client or clock.
pub fn replay(recording: &Recording) -> Result<Replay> {
    let mut session = Session::new(recording.scenario.clone(), None)?;
    for (k, t) in recording.ticks.iter().enumerate() {
        if t.tick != k {
            return Err(HitlError::Protocol(format!("recording tick {} at position {k}", t.tick)));
        }
        session.step(t.human, TickOptions { budget_s: None, hold: t.held.clone() })?;
    }
    let truncated = !session.is_done();
    let (log, _) = session.finish();
    Ok(Replay { log, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use prosocial_core::simulation::{generate_headon, HumanModel};

    pub(crate) fn scenario(duration: f64) -> Scenario {
        let mut sc = generate_headon(7, 0.2, &HumanModel::ibr(), &PolicySpec::from_name("ours").unwrap()).unwrap();
        sc.agents[1].policy = PolicySpec::External;
        sc.agents[1].noise = Default::default();
        sc.duration = duration;
        sc
    }

    #[test]
    fn needs_one_external_agent() {
        let mut sc = scenario(1.0);
        sc.agents[1].policy = PolicySpec::from_name("sfm").unwrap();
        assert!(Session::new(sc, None).is_err());
    }

    #[test]
    fn replay_reproduces_the_live_log() {
        let mut s = Session::new(scenario(1.0), None).unwrap();
        let script = [(0.5, 1.0), (2.0, 0.0), (-0.3, -4.0)];
        let mut k = 0;
        while !s.is_done() {
            let (omega, a) = script[k % script.len()];
            let st = s.tick(AgentControl { omega, a }).unwrap();
            assert_eq!(st.tick, k + 1);
            assert_eq!(st.preview.len(), 27);
            k += 1;
        }
        let (live, rec) = s.finish();
        assert!(rec.complete);
        assert!(rec.ticks.iter().all(|t| Limits::default().contains(&t.human)));
        let back = Recording::from_json(&rec.to_json()).unwrap();
        let r = replay(&back).unwrap();
        assert!(!r.truncated);
        assert_eq!(r.log.to_json(), live.to_json());
    }

    #[test]
    fn truncated_and_empty_recordings() {
        let mut s = Session::new(scenario(1.0), None).unwrap();
        s.tick(AgentControl::ZERO).unwrap();
        s.tick(AgentControl { omega: 1.0, a: 0.0 }).unwrap();
        let (live, rec) = s.finish();
        let r = replay(&rec).unwrap();
        assert!(r.truncated);
        assert_eq!(r.log.to_json(), live.to_json());
        assert_eq!(r.log.agents[0].trajectory.states.len(), 3);

        let empty = Recording { ticks: vec![], ..rec };
        let r = replay(&empty).unwrap();
        assert!(r.truncated);
        assert!(r.log.steps.is_empty());
        assert!(r.log.agents.iter().all(|a| a.trajectory.controls.is_empty()));
    }

    #[test]
    fn forced_overrun_holds_the_previous_control() {
        let mut s = Session::new(scenario(1.0), Some(0.0)).unwrap();
        s.tick(AgentControl::ZERO).unwrap();
        let (log, rec) = s.finish();
        assert_eq!(rec.ticks[0].held, vec!["robot".to_string()]);
        assert_eq!(log.steps[0].agents[0].executed, AgentControl::ZERO);
        assert_eq!(replay(&rec).unwrap().log.to_json(), log.to_json());
    }
}
