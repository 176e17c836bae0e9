//! Interaction metrics and batch summaries.
//!
//! - MinDist: closest approach of two agents over the episode.
//! - PI (path irregularity): summed angle between velocity and the direction to the goal.
//! - D2G: final distance to the goal.
//! - ACC: total planar acceleration, `(1/Δt) Σ ‖vel_{t+1} − vel_t‖`.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::simulation::{EpisodeLog, Role};
use crate::{Error, Result};

/// Speeds or goal distances below this make a PI term undefined; it counts as 0.
pub const PI_GUARD: f64 = 1e-6;

pub fn min_dist(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states.len() != b.states.len() {
        return Err(Error::Dimension(format!("trajectories of length {} and {}", a.states.len(), b.states.len())));
    }
    Ok(a.positions().zip(b.positions()).map(|(p, q)| (p - q).norm()).fold(f64::INFINITY, f64::min))
}

pub fn path_irregularity(traj: &Trajectory, goal: &Vector2<f64>) -> f64 {
    traj.states
        .iter()
        .map(|s| {
            let v = s.velocity();
            let d = goal - s.position();
            if v.norm() < PI_GUARD || d.norm() < PI_GUARD {
                0.0
            } else {
                v.perp(&d).abs().atan2(v.dot(&d))
            }
        })
        .sum()
}

pub fn dist_to_goal(traj: &Trajectory, goal: &Vector2<f64>) -> f64 {
    (traj.terminal().position() - goal).norm()
}

pub fn total_acceleration(traj: &Trajectory) -> f64 {
    traj.states.windows(2).map(|w| (w[1].velocity() - w[0].velocity()).norm()).sum::<f64>() / traj.dt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MinDist,
    Pi,
    D2g,
    Acc,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::MinDist => "min_dist",
            Metric::Pi => "pi",
            Metric::D2g => "d2g",
            Metric::Acc => "acc",
        }
    }
}

/// One metric value of one episode; `role` is `None` for pairwise metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub policy: String,
    pub human_model: String,
    pub agent: String,
    pub role: Option<Role>,
    pub metric: Metric,
    pub value: f64,
}

/// Metric rows for one episode, in agent order then metric order.
pub fn episode_metrics(log: &EpisodeLog) -> Result<Vec<MetricRow>> {
    let row = |agent: String, role: Option<Role>, metric: Metric, value: f64| MetricRow {
        seed: log.seed,
        policy: log.label.policy.clone(),
        human_model: log.label.human_model.clone(),
        agent,
        role,
        metric,
        value,
    };
    let mut rows = Vec::new();
    for a in &log.agents {
        let goal = Vector2::from(a.goal);
        rows.push(row(a.id.clone(), Some(a.role), Metric::Pi, path_irregularity(&a.trajectory, &goal)));
        rows.push(row(a.id.clone(), Some(a.role), Metric::D2g, dist_to_goal(&a.trajectory, &goal)));
        rows.push(row(a.id.clone(), Some(a.role), Metric::Acc, total_acceleration(&a.trajectory)));
    }
    for (i, a) in log.agents.iter().enumerate() {
        for b in &log.agents[i + 1..] {
            let d = min_dist(&a.trajectory, &b.trajectory)?;
            rows.push(row(format!("{}|{}", a.id, b.id), None, Metric::MinDist, d));
        }
    }
    Ok(rows)
}

/// Five-number summary with linearly interpolated quartiles (type 7).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Result<Quartiles> {
    if values.is_empty() {
        return Err(Error::Empty("no values to summarize".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Quartiles {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    /// `None` for pairwise metrics.
    pub role: Option<Role>,
    pub metric: Metric,
    pub count: usize,
    #[serde(flatten)]
    pub quartiles: Quartiles,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    /// Sorted by policy, role, metric.
    pub summary: Vec<SummaryRow>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Io(e.to_string()))
    }

    /// `seed,policy,human_model,agent,role,metric,value`, one line per row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "policy", "human_model", "agent", "role", "metric", "value"]).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            let role = r.role.map_or("pair", |r| r.name());
            w.write_record([
                r.seed.to_string().as_str(),
                &r.policy,
                &r.human_model,
                &r.agent,
                role,
                r.metric.name(),
                &format!("{:.17e}", r.value),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Summary values for one policy/role/metric.
    pub fn find(&self, policy: &str, role: Option<Role>, metric: Metric) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.policy == policy && s.role == role && s.metric == metric)
    }
}

/// Summarizes precomputed rows per (policy, role, metric).
pub fn summarize(rows: Vec<MetricRow>) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::Empty("no metric rows".into()));
    }
    let mut groups: BTreeMap<(String, Option<Role>, Metric), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.policy.clone(), r.role, r.metric)).or_default().push(r.value);
    }
    let summary = groups
        .into_iter()
        .map(|((policy, role, metric), values)| {
            Ok(SummaryRow { policy, role, metric, count: values.len(), quartiles: quartiles(&values)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport { rows, summary })
}

pub fn aggregate(logs: &[EpisodeLog]) -> Result<MetricsReport> {
    if logs.is_empty() {
        return Err(Error::Empty("no episode logs".into()));
    }
    let mut rows = Vec::new();
    for log in logs {
        rows.extend(episode_metrics(log)?);
    }
    summarize(rows)
}

/// Median of `|PI_a − PI_b|` over episodes, pairing the robot with the human of each episode.
pub fn pi_gap(rows: &[MetricRow]) -> BTreeMap<String, Vec<f64>> {
    let mut per_episode: BTreeMap<(String, String, u64), [Option<f64>; 2]> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == Metric::Pi) {
        let slot = per_episode.entry((r.policy.clone(), r.human_model.clone(), r.seed)).or_default();
        match r.role {
            Some(Role::Robot) => slot[0] = Some(r.value),
            Some(Role::Human) => slot[1] = Some(r.value),
            None => {}
        }
    }
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((policy, _, _), [a, b]) in per_episode {
        if let (Some(a), Some(b)) = (a, b) {
            out.entry(policy).or_default().push((a - b).abs());
        }
    }
    out
}
