//! Scenarios, simulated humans and the receding-horizon episode loop.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    interactive_control, oc_control, reactive_cv_control, sfm_control, Decision, Observation, ReactiveParams, SfmParams,
};
use crate::dynamics::{step, AgentControl, AgentState, Limits, Trajectory};
use crate::planner::{Peripheral, PlannerConfig, Wall};
use crate::{Error, Result};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Smallest relative heading used by the head-on generator; exactly
/// symmetric encounters have no preferred passing side.
pub const MIN_HEADING_OFFSET: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Robot,
    Human,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Robot => "robot",
            Role::Human => "human",
        }
    }
}

/// Control law of one agent, tagged by its registered name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Iterated best response with markup and inconvenience budget;
    /// `partner_model` is how this agent models the other's planner.
    Ours {
        #[serde(default)]
        planner: PlannerConfig,
        #[serde(default)]
        partner_model: PlannerConfig,
    },
    Vibr {
        #[serde(default = "PlannerConfig::vanilla_ibr")]
        planner: PlannerConfig,
    },
    Oc {
        #[serde(default = "PlannerConfig::optimal_control")]
        planner: PlannerConfig,
    },
    Sfm {
        #[serde(default)]
        params: SfmParams,
    },
    ReactiveCv {
        #[serde(default)]
        params: ReactiveParams,
    },
    /// Driven from outside the simulator (human-in-the-loop).
    External,
}

impl PolicySpec {
    pub const NAMES: [&'static str; 5] = ["ours", "vibr", "oc", "sfm", "reactive_cv"];

    /// Registered policy with default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "ours" => PolicySpec::Ours { planner: PlannerConfig::default(), partner_model: PlannerConfig::default() },
            "vibr" => PolicySpec::Vibr { planner: PlannerConfig::vanilla_ibr() },
            "oc" => PolicySpec::Oc { planner: PlannerConfig::optimal_control() },
            "sfm" => PolicySpec::Sfm { params: SfmParams::default() },
            "reactive_cv" => PolicySpec::ReactiveCv { params: ReactiveParams::default() },
            "external" => PolicySpec::External,
            other => return Err(Error::InvalidConfig(format!("unknown policy {other:?}; expected one of {:?}", Self::NAMES))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Ours { .. } => "ours",
            PolicySpec::Vibr { .. } => "vibr",
            PolicySpec::Oc { .. } => "oc",
            PolicySpec::Sfm { .. } => "sfm",
            PolicySpec::ReactiveCv { .. } => "reactive_cv",
            PolicySpec::External => "external",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicySpec::Ours { planner, partner_model } => {
                planner.validate()?;
                partner_model.validate()
            }
            PolicySpec::Vibr { planner } | PolicySpec::Oc { planner } => planner.validate(),
            PolicySpec::Sfm { params } => params.validate(),
            PolicySpec::ReactiveCv { params } => params.validate(),
            PolicySpec::External => Ok(()),
        }
    }

    pub fn limits(&self) -> Limits {
        match self {
            PolicySpec::Ours { planner, .. } | PolicySpec::Vibr { planner } | PolicySpec::Oc { planner } => planner.limits,
            PolicySpec::Sfm { params } => params.limits,
            PolicySpec::ReactiveCv { params } => params.limits,
            PolicySpec::External => Limits::default(),
        }
    }

    /// Planner configuration, for policies that have one.
    pub fn planner_mut(&mut self) -> Option<&mut PlannerConfig> {
        match self {
            PolicySpec::Ours { planner, .. } | PolicySpec::Vibr { planner } | PolicySpec::Oc { planner } => Some(planner),
            _ => None,
        }
    }

    pub fn decide(&self, obs: &Observation) -> Result<Decision> {
        match self {
            PolicySpec::Ours { planner, partner_model } => interactive_control(obs, planner, partner_model),
            PolicySpec::Vibr { planner } => crate::baselines::vibr_control(obs, planner),
            PolicySpec::Oc { planner } => oc_control(obs, planner),
            PolicySpec::Sfm { params } => Ok(Decision::reactive(sfm_control(obs, params))),
            PolicySpec::ReactiveCv { params } => Ok(Decision::reactive(reactive_cv_control(obs, params)?)),
            PolicySpec::External => Err(Error::InvalidConfig("external agents are driven by their input".into())),
        }
    }
}

/// Standard deviations of the white noise added to executed controls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlNoise {
    pub omega: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanVariant {
    Ibr,
    Oc,
}

impl HumanVariant {
    pub fn name(&self) -> &'static str {
        match self {
            HumanVariant::Ibr => "ibr",
            HumanVariant::Oc => "oc",
        }
    }
}

/// Simulated human: a planner of its own (with parameters the robot does
/// not know exactly) plus control noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanModel {
    pub variant: HumanVariant,
    pub planner: PlannerConfig,
    /// The human's model of the robot (IBR variant only).
    pub partner_model: PlannerConfig,
    pub noise: ControlNoise,
}

impl HumanModel {
    pub const DEFAULT_NOISE: ControlNoise = ControlNoise { omega: 0.05, a: 0.05 };
    /// Personal-space radius the simulated human keeps; the robot still
    /// plans with its own collision radius.
    pub const COMFORT_RADIUS: f64 = 1.1;

    pub fn ibr() -> Self {
        Self {
            variant: HumanVariant::Ibr,
            planner: PlannerConfig { budget: Some(0.25), collision_radius: Self::COMFORT_RADIUS, ..PlannerConfig::default() },
            partner_model: PlannerConfig { collision_radius: Self::COMFORT_RADIUS, ..PlannerConfig::default() },
            noise: Self::DEFAULT_NOISE,
        }
    }

    pub fn oc() -> Self {
        let planner = PlannerConfig { collision_radius: Self::COMFORT_RADIUS, ..PlannerConfig::optimal_control() };
        Self { variant: HumanVariant::Oc, partner_model: planner.clone(), planner, noise: Self::DEFAULT_NOISE }
    }

    /// IBR humans for even seeds, OC humans for odd seeds.
    pub fn alternating(seed: u64) -> Self {
        if seed.is_multiple_of(2) {
            Self::ibr()
        } else {
            Self::oc()
        }
    }

    pub fn policy(&self) -> PolicySpec {
        match self.variant {
            HumanVariant::Ibr => PolicySpec::Ours { planner: self.planner.clone(), partner_model: self.partner_model.clone() },
            HumanVariant::Oc => PolicySpec::Oc { planner: self.planner.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub role: Role,
    pub start: AgentState,
    pub goal: [f64; 2],
    pub policy: PolicySpec,
    #[serde(default)]
    pub noise: ControlNoise,
}

/// Labels used to group episodes in reports.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpisodeLabel {
    /// Policy of the first robot.
    pub policy: String,
    /// Variant of the first human, or its policy name.
    pub human_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub dt: f64,
    /// Episode length [s]; a whole number of steps.
    pub duration: f64,
    pub seed: u64,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub peripherals: Vec<Peripheral>,
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub label: EpisodeLabel,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "scenario schema_version {} (this build reads {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite() && self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt = {}, duration = {}", self.dt, self.duration)));
        }
        let n = self.duration / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidConfig(format!("duration {} is not a multiple of dt {}", self.duration, self.dt)));
        }
        if self.agents.is_empty() {
            return Err(Error::InvalidConfig("scenario has no agents".into()));
        }
        let mut ids: Vec<&str> = self.agents.iter().map(|a| a.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("agent ids must be unique".into()));
        }
        for a in &self.agents {
            if !a.start.is_finite() || !a.goal.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite(format!("agent {}", a.id)));
            }
            if !(a.noise.omega >= 0.0 && a.noise.a >= 0.0) {
                return Err(Error::InvalidConfig(format!("agent {}: noise must be >= 0", a.id)));
            }
            a.policy.validate()?;
            if let Some(cfg) = policy_planner(&a.policy) {
                if (cfg.dt - self.dt).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!("agent {}: planner dt {} != scenario dt {}", a.id, cfg.dt, self.dt)));
                }
            }
        }
        for w in &self.walls {
            if (w.normal().norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("wall normal {:?} is not unit length", w.normal)));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s).map_err(|e| Error::Io(format!("scenario: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn default_label(&self) -> EpisodeLabel {
        let find = |role: Role| self.agents.iter().find(|a| a.role == role);
        EpisodeLabel {
            policy: find(Role::Robot).map(|a| a.policy.name().to_string()).unwrap_or_default(),
            human_model: find(Role::Human).map(|a| a.policy.name().to_string()).unwrap_or_default(),
        }
    }
}

fn policy_planner(p: &PolicySpec) -> Option<&PlannerConfig> {
    match p {
        PolicySpec::Ours { planner, .. } | PolicySpec::Vibr { planner } | PolicySpec::Oc { planner } => Some(planner),
        _ => None,
    }
}

/// Two agents facing each other 10 m apart; the human's heading is rotated
/// by `relative_heading` about the crossing point, so both straight paths
/// still pass through it. Goals lie 10 m straight ahead.
pub fn generate_headon(seed: u64, relative_heading: f64, human_model: &HumanModel, robot_policy: &PolicySpec) -> Result<Scenario> {
    if !(relative_heading.abs() <= FRAC_PI_4 + 1e-12) {
        return Err(Error::InvalidConfig(format!("relative heading {relative_heading} outside ±π/4")));
    }
    let half = 5.0;
    let speed = 1.0;
    let robot = AgentState::new(0.0, 0.0, 0.0, speed);
    let heading = PI + relative_heading;
    let human = AgentState::new(half + half * relative_heading.cos(), half * relative_heading.sin(), heading, speed);
    let ahead = |s: &AgentState| [s.x + 10.0 * s.theta.cos(), s.y + 10.0 * s.theta.sin()];
    let dt = policy_planner(robot_policy).map_or(0.1, |c| c.dt);
    Ok(Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "headon".into(),
        dt,
        duration: 5.0,
        seed,
        agents: vec![
            AgentSpec {
                id: "robot".into(),
                role: Role::Robot,
                start: robot,
                goal: ahead(&robot),
                policy: robot_policy.clone(),
                noise: ControlNoise::default(),
            },
            AgentSpec {
                id: "human".into(),
                role: Role::Human,
                start: human,
                goal: ahead(&human),
                policy: human_model.policy(),
                noise: human_model.noise,
            },
        ],
        peripherals: Vec::new(),
        walls: Vec::new(),
        label: EpisodeLabel { policy: robot_policy.name().into(), human_model: human_model.variant.name().into() },
    })
}

/// Relative heading for a seed: uniform in ±π/4, kept at least
/// [`MIN_HEADING_OFFSET`] away from zero.
pub fn headon_heading(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h: f64 = rng.random_range(-FRAC_PI_4..=FRAC_PI_4);
    if h.abs() < MIN_HEADING_OFFSET {
        MIN_HEADING_OFFSET.copysign(if h == 0.0 { 1.0 } else { h })
    } else {
        h
    }
}

/// Head-on episode for `seed` with the alternating human model.
pub fn headon_for_seed(seed: u64, robot_policy: &PolicySpec) -> Result<Scenario> {
    generate_headon(seed, headon_heading(seed), &HumanModel::alternating(seed), robot_policy)
}

/// Four constant-velocity bystanders crossing the head-on corridor.
pub fn default_peripherals() -> Vec<Peripheral> {
    vec![
        Peripheral { position: [2.0, 4.0], velocity: [0.3, -0.6] },
        Peripheral { position: [8.0, -4.0], velocity: [-0.3, 0.6] },
        Peripheral { position: [-3.0, -3.0], velocity: [0.8, 0.0] },
        Peripheral { position: [13.0, 3.0], velocity: [-0.8, 0.0] },
    ]
}

/// Planner diagnostics of one agent at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub id: String,
    /// Control chosen by the policy, before noise.
    pub commanded: AgentControl,
    /// Control applied to the dynamics, after noise and clamping.
    pub executed: AgentControl,
    pub scp_iterations: usize,
    pub slack_sum: f64,
    pub inconvenience: f64,
    pub flags: crate::planner::PlanFlags,
    /// The policy failed and the previous control was held.
    pub failed: bool,
    /// The policy exceeded its tick budget (or a replay forced the same
    /// outcome) and the previous control was held.
    #[serde(default)]
    pub overrun: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: usize,
    pub agents: Vec<AgentStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLog {
    pub id: String,
    pub role: Role,
    pub goal: [f64; 2],
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub schema_version: u32,
    pub seed: u64,
    pub label: EpisodeLabel,
    pub scenario: Scenario,
    pub agents: Vec<AgentLog>,
    pub steps: Vec<StepRecord>,
    /// Number of (tick, agent) pairs whose policy failed.
    pub failures: usize,
}

impl EpisodeLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("episode log serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let log: EpisodeLog = serde_json::from_str(s).map_err(|e| Error::Io(format!("episode log: {e}")))?;
        if log.schema_version != LOG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("log schema_version {}", log.schema_version)));
        }
        Ok(log)
    }

    /// `t,agent_id,x,y,theta,v,omega,a`; the final state has empty controls.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["t", "agent_id", "x", "y", "theta", "v", "omega", "a"]).map_err(io)?;
        let n = self.agents.first().map_or(0, |a| a.trajectory.states.len());
        for k in 0..n {
            for a in &self.agents {
                let s = a.trajectory.states[k];
                let t = format!("{:.6}", k as f64 * a.trajectory.dt);
                let (om, ac) =
                    a.trajectory.controls.get(k).map_or((String::new(), String::new()), |u| (u.omega.to_string(), u.a.to_string()));
                w.write_record([t, a.id.clone(), s.x.to_string(), s.y.to_string(), s.theta.to_string(), s.v.to_string(), om, ac])
                    .map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn agent(&self, id: &str) -> Option<&AgentLog> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn role(&self, role: Role) -> Option<&AgentLog> {
        self.agents.iter().find(|a| a.role == role)
    }
}

/// Wall-clock planner time per tick and agent; kept out of [`EpisodeLog`]
/// so logs stay reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTiming {
    pub seed: u64,
    /// `solve_time_s[tick][agent]`
    pub solve_time_s: Vec<Vec<f64>>,
}

/// Mutable simulation state; advanced one tick at a time.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub tick: usize,
    states: Vec<Vec<AgentState>>,
    controls: Vec<Vec<AgentControl>>,
    last: Vec<AgentControl>,
    rngs: Vec<ChaCha8Rng>,
    steps: Vec<StepRecord>,
    failures: usize,
    timing: EpisodeTiming,
}

/// Real-time options for [`World::tick_with`].
#[derive(Debug, Clone, Default)]
pub struct TickOptions {
    /// Planner wall-time budget [s]; slower decisions are discarded and the
    /// agent holds its previous control.
    pub budget_s: Option<f64>,
    /// Agents that hold their previous control regardless of timing; used
    /// to replay recorded overruns.
    pub hold: Vec<String>,
}

/// Result of one tick for callers that stream state.
#[derive(Debug, Clone)]
pub struct TickOutcome {
    pub record: StepRecord,
    /// Plan preview of each agent (empty for reactive or external agents).
    pub previews: Vec<Vec<[f64; 2]>>,
    pub solve_time_s: Vec<f64>,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let n = scenario.agents.len();
        let rngs =
            (0..n).map(|i| ChaCha8Rng::seed_from_u64(scenario.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64))).collect();
        Ok(Self {
            states: scenario.agents.iter().map(|a| vec![a.start]).collect(),
            controls: vec![Vec::new(); n],
            last: vec![AgentControl::ZERO; n],
            rngs,
            steps: Vec::new(),
            failures: 0,
            timing: EpisodeTiming { seed: scenario.seed, solve_time_s: Vec::new() },
            tick: 0,
            scenario,
        })
    }

    pub fn current_states(&self) -> Vec<AgentState> {
        self.states.iter().map(|s| *s.last().expect("at least the start state")).collect()
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.dt
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.scenario.steps()
    }

    pub fn peripherals_now(&self) -> Vec<Peripheral> {
        let t = self.time();
        self.scenario
            .peripherals
            .iter()
            .map(|p| {
                let q = p.position_at(t);
                Peripheral { position: [q.x, q.y], velocity: p.velocity }
            })
            .collect()
    }

    pub fn observation(&self, i: usize) -> Observation {
        let states = self.current_states();
        let own = &self.scenario.agents[i];
        let (others, other_goals) =
            self.scenario.agents.iter().enumerate().filter(|(j, _)| *j != i).map(|(j, a)| (states[j], Some(Vector2::from(a.goal)))).unzip();
        Observation {
            own: states[i],
            goal: Vector2::from(own.goal),
            others,
            other_goals,
            peripherals: self.peripherals_now(),
            walls: self.scenario.walls.clone(),
            dt: self.scenario.dt,
        }
    }

    /// Runs every policy on the current state (external agents take their
    /// entry of `external`, defaulting to zero), then applies all controls
    /// at once.
    pub fn tick(&mut self, external: &BTreeMap<String, AgentControl>) -> Result<TickOutcome> {
        self.tick_with(external, &TickOptions::default())
    }

    pub fn tick_with(&mut self, external: &BTreeMap<String, AgentControl>, options: &TickOptions) -> Result<TickOutcome> {
        let n = self.scenario.agents.len();
        let mut decisions = Vec::with_capacity(n);
        for i in 0..n {
            let spec = &self.scenario.agents[i];
            let limits = spec.policy.limits();
            let decision = match &spec.policy {
                PolicySpec::External => Ok(Decision::reactive(limits.clamp_control(external.get(&spec.id).copied().unwrap_or_default()))),
                p => p.decide(&self.observation(i)),
            };
            decisions.push(decision);
        }
        let states = self.current_states();
        let mut record = StepRecord { tick: self.tick, agents: Vec::with_capacity(n) };
        let mut previews = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        for (i, decision) in decisions.into_iter().enumerate() {
            let spec = &self.scenario.agents[i];
            let limits = spec.policy.limits();
            let (mut decision, failed) = match decision {
                Ok(d) => (d, false),
                Err(e) => {
                    log::warn!("agent {} failed at tick {}: {e}; holding its last control", spec.id, self.tick);
                    self.failures += 1;
                    (Decision::reactive(self.last[i]), true)
                }
            };
            let external_agent = matches!(spec.policy, PolicySpec::External);
            let over_budget = options.budget_s.is_some_and(|b| decision.solve_time_s > b) && !external_agent;
            let overrun = !failed && (over_budget || options.hold.contains(&spec.id));
            if overrun {
                log::warn!("agent {} overran its budget at tick {}; holding its last control", spec.id, self.tick);
                let time = decision.solve_time_s;
                decision = Decision::reactive(self.last[i]);
                decision.solve_time_s = time;
            }
            let commanded = limits.clamp_control(decision.control);
            let mut executed = commanded;
            if spec.noise.omega > 0.0 || spec.noise.a > 0.0 {
                let rng = &mut self.rngs[i];
                let nw = Normal::new(0.0, spec.noise.omega).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                let na = Normal::new(0.0, spec.noise.a).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                executed.omega += nw.sample(rng);
                executed.a += na.sample(rng);
                executed = limits.clamp_control(executed);
            }
            let next = step(&states[i], &executed, self.scenario.dt, &limits)?;
            self.states[i].push(next);
            self.controls[i].push(executed);
            self.last[i] = commanded;
            record.agents.push(AgentStep {
                id: spec.id.clone(),
                commanded,
                executed,
                scp_iterations: decision.scp_iterations,
                slack_sum: decision.slack_sum,
                inconvenience: decision.inconvenience,
                flags: decision.flags,
                failed,
                overrun,
            });
            previews.push(decision.preview);
            times.push(decision.solve_time_s);
        }
        self.timing.solve_time_s.push(times.clone());
        self.steps.push(record.clone());
        self.tick += 1;
        Ok(TickOutcome { record, previews, solve_time_s: times })
    }

    pub fn finish(self) -> (EpisodeLog, EpisodeTiming) {
        let label =
            if self.scenario.label == EpisodeLabel::default() { self.scenario.default_label() } else { self.scenario.label.clone() };
        let agents = self
            .scenario
            .agents
            .iter()
            .zip(self.states)
            .zip(self.controls)
            .map(|((a, states), controls)| AgentLog {
                id: a.id.clone(),
                role: a.role,
                goal: a.goal,
                trajectory: Trajectory { states, controls, dt: self.scenario.dt },
            })
            .collect();
        let log = EpisodeLog {
            schema_version: LOG_SCHEMA_VERSION,
            seed: self.scenario.seed,
            label,
            agents,
            steps: self.steps,
            failures: self.failures,
            scenario: self.scenario,
        };
        (log, self.timing)
    }
}

pub fn run_episode_timed(scenario: &Scenario) -> Result<(EpisodeLog, EpisodeTiming)> {
    let mut world = World::new(scenario.clone())?;
    let none = BTreeMap::new();
    while !world.is_done() {
        world.tick(&none)?;
    }
    Ok(world.finish())
}

pub fn run_episode(scenario: &Scenario) -> Result<EpisodeLog> {
    run_episode_timed(scenario).map(|(log, _)| log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Serial,
    /// Rayon's global pool.
    Auto,
    Threads(usize),
}

#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    /// Successful episodes in seed order.
    pub logs: Vec<EpisodeLog>,
    pub timings: Vec<EpisodeTiming>,
    /// `(seed, error)` of episodes that could not be run.
    pub failures: Vec<(u64, String)>,
}

/// Runs `n` episodes with seeds `seed_base..seed_base + n`.
pub fn run_batch<F>(generator: F, n: usize, seed_base: u64, parallelism: Parallelism) -> Result<BatchResult>
where
    F: Fn(u64) -> Result<Scenario> + Sync,
{
    if n == 0 {
        return Err(Error::Empty("batch needs at least one episode".into()));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|k| seed_base + k).collect();
    let one = |seed: u64| generator(seed).and_then(|sc| run_episode_timed(&sc)).map_err(|e| (seed, e.to_string()));
    let results: Vec<std::result::Result<(EpisodeLog, EpisodeTiming), (u64, String)>> = match parallelism {
        Parallelism::Serial => seeds.iter().map(|&s| one(s)).collect(),
        Parallelism::Auto => seeds.par_iter().map(|&s| one(s)).collect(),
        Parallelism::Threads(k) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build().map_err(|e| Error::InvalidConfig(e.to_string()))?;
            pool.install(|| seeds.par_iter().map(|&s| one(s)).collect())
        }
    };
    let mut out = BatchResult::default();
    for r in results {
        match r {
            Ok((log, timing)) => {
                out.logs.push(log);
                out.timings.push(timing);
            }
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

/// First tick at which the heading differs from the initial heading by more
/// than `threshold`.
pub fn first_heading_deviation(traj: &Trajectory, threshold: f64) -> Option<usize> {
    let theta0 = traj.states[0].theta;
    traj.states.iter().position(|s| (s.theta - theta0).abs() > threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_offset_is_exact_head_on() {
        let sc = generate_headon(0, 0.0, &HumanModel::ibr(), &PolicySpec::from_name("ours").unwrap()).unwrap();
        let (r, h) = (&sc.agents[0], &sc.agents[1]);
        assert_eq!((r.start.x, r.start.y, r.start.theta), (0.0, 0.0, 0.0));
        assert_eq!((h.start.x, h.start.y, h.start.theta), (10.0, 0.0, PI));
        assert_eq!(r.goal, [10.0, 0.0]);
        assert!((h.goal[0]).abs() < 1e-12 && h.goal[1].abs() < 1e-12);
        assert_eq!(sc.steps(), 50);
        let PolicySpec::Ours { planner, .. } = &r.policy else { panic!() };
        assert_eq!(planner.horizon, 25);
        assert_eq!(sc.dt, 0.1);
        assert_eq!(sc.duration, 5.0);
    }

    #[test]
    fn headings_respect_bounds_and_tie_break() {
        for seed in 0..200 {
            let h = headon_heading(seed);
            assert!(h.abs() <= FRAC_PI_4 && h.abs() >= MIN_HEADING_OFFSET);
        }
        assert!(generate_headon(0, 1.0, &HumanModel::oc(), &PolicySpec::from_name("sfm").unwrap()).is_err());
    }

    #[test]
    fn scenario_json_round_trip_and_schema_check() {
        let sc = headon_for_seed(3, &PolicySpec::from_name("reactive_cv").unwrap()).unwrap();
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
        let mut bad = sc.clone();
        bad.schema_version = 99;
        assert!(Scenario::from_json(&bad.to_json()).is_err());
        let mut dup = sc;
        dup.agents[1].id = "robot".into();
        assert!(dup.validate().is_err());
    }

    #[test]
    fn unknown_policy_is_rejected() {
        assert!(PolicySpec::from_name("hj").is_err());
        for n in PolicySpec::NAMES {
            assert_eq!(PolicySpec::from_name(n).unwrap().name(), n);
        }
    }

    #[test]
    fn reactive_episode_is_deterministic_and_well_formed() {
        let sc = headon_for_seed(5, &PolicySpec::from_name("sfm").unwrap()).unwrap();
        let mut sc = sc;
        // cheap human for a unit test
        sc.agents[1].policy = PolicySpec::from_name("reactive_cv").unwrap();
        sc.agents[1].noise = HumanModel::DEFAULT_NOISE;
        let a = run_episode(&sc).unwrap();
        let b = run_episode(&sc).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.agents.iter().all(|g| g.trajectory.states.len() == 51));
        let lim = Limits::default();
        for s in &a.steps {
            for ag in &s.agents {
                assert!(lim.contains(&ag.executed));
            }
        }
        let csv = a.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 51);
    }
}
