use std::f64::consts::FRAC_PI_4;

use nalgebra::Vector2;
use prosocial_core::dynamics::AgentState;
use prosocial_core::metrics::{dist_to_goal, min_dist};
use prosocial_core::simulation::{
    generate_headon, headon_for_seed, run_batch, run_episode, AgentSpec, ControlNoise, HumanModel, Parallelism, PolicySpec, Role, Scenario,
    SCENARIO_SCHEMA_VERSION,
};

fn segments_intersect(p: Vector2<f64>, p2: Vector2<f64>, q: Vector2<f64>, q2: Vector2<f64>) -> bool {
    let (r, s) = (p2 - p, q2 - q);
    let denom = r.perp(&s);
    if denom.abs() < 1e-12 {
        return false;
    }
    let t = (q - p).perp(&s) / denom;
    let u = (q - p).perp(&r) / denom;
    (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)
}

#[test]
fn extreme_heading_offsets_still_cross() {
    for offset in [FRAC_PI_4, -FRAC_PI_4, 0.3] {
        let sc = generate_headon(0, offset, &HumanModel::oc(), &PolicySpec::from_name("sfm").unwrap()).unwrap();
        let seg = |a: &AgentSpec| (a.start.position(), Vector2::from(a.goal));
        let (r, h) = (seg(&sc.agents[0]), seg(&sc.agents[1]));
        assert!(segments_intersect(r.0, r.1, h.0, h.1), "offset {offset}");
        for a in &sc.agents {
            assert!(((Vector2::from(a.goal) - a.start.position()).norm() - 10.0).abs() < 1e-12);
        }
    }
}

#[test]
fn separated_agents_reach_their_goals() {
    let ours = PolicySpec::from_name("ours").unwrap();
    let agent = |id: &str, role, y: f64| AgentSpec {
        id: id.into(),
        role,
        start: AgentState::new(0.0, y, 0.0, 1.0),
        goal: [6.0, y],
        policy: ours.clone(),
        noise: ControlNoise::default(),
    };
    let sc = Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "lanes".into(),
        dt: 0.1,
        duration: 5.0,
        seed: 1,
        agents: vec![agent("a", Role::Robot, 0.0), agent("b", Role::Human, 8.0)],
        peripherals: vec![],
        walls: vec![],
        label: Default::default(),
    };
    let log = run_episode(&sc).unwrap();
    assert_eq!(log.failures, 0);
    for a in &log.agents {
        assert!(dist_to_goal(&a.trajectory, &Vector2::from(a.goal)) < 0.5, "{} ends {:?}", a.id, a.trajectory.terminal());
    }
    assert_eq!(log.label.policy, "ours");
}

#[test]
fn ours_against_ibr_human_keeps_clearance() {
    let sc = generate_headon(0, 0.2, &HumanModel::ibr(), &PolicySpec::from_name("ours").unwrap()).unwrap();
    let a = run_episode(&sc).unwrap();
    let b = run_episode(&sc).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let r = &a.role(Role::Robot).unwrap().trajectory;
    let h = &a.role(Role::Human).unwrap().trajectory;
    assert!(min_dist(r, h).unwrap() >= 1.0);
    assert!(a.steps.iter().all(|s| s.agents[0].inconvenience <= 0.2 + 1e-3));
}

#[test]
fn batch_is_identical_serial_and_parallel() {
    let policy = PolicySpec::from_name("reactive_cv").unwrap();
    let gen = |seed| {
        let mut sc = headon_for_seed(seed, &policy)?;
        sc.agents[1].policy = PolicySpec::from_name("sfm").unwrap();
        Ok(sc)
    };
    let serial = run_batch(gen, 4, 10, Parallelism::Serial).unwrap();
    let parallel = run_batch(gen, 4, 10, Parallelism::Threads(3)).unwrap();
    assert_eq!(serial.logs.len(), 4);
    assert!(serial.failures.is_empty());
    let seeds: Vec<u64> = serial.logs.iter().map(|l| l.seed).collect();
    assert_eq!(seeds, vec![10, 11, 12, 13]);
    for (s, p) in serial.logs.iter().zip(&parallel.logs) {
        assert_eq!(s.to_json(), p.to_json());
    }
    assert!(run_batch(gen, 0, 0, Parallelism::Serial).is_err());
}

#[test]
fn bad_scenarios_are_collected_not_fatal() {
    let policy = PolicySpec::from_name("sfm").unwrap();
    let gen = |seed: u64| {
        let mut sc = headon_for_seed(seed, &policy)?;
        if seed == 1 {
            sc.duration = 0.15;
        }
        sc.duration = sc.duration.min(1.0);
        Ok(sc)
    };
    let out = run_batch(gen, 3, 0, Parallelism::Serial).unwrap();
    assert_eq!(out.logs.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].0, 1);
}
