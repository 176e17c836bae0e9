//! Resolved experiment configuration and flat `dotted.key=value` overrides.

use prosocial_core::baselines::{ReactiveParams, SfmParams};
use prosocial_core::planner::PlannerConfig;
use prosocial_core::simulation::{HumanModel, HumanVariant, PolicySpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeParams {
    /// Episode length [s].
    pub duration: f64,
    /// Add four constant-velocity bystanders to the head-on template.
    pub peripherals: bool,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self { duration: 5.0, peripherals: false }
    }
}

/// Every parameter that affects a run; written to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Robot planner of the "ours" policy.
    pub planner: PlannerConfig,
    /// The "ours" robot's model of the human.
    pub partner_model: PlannerConfig,
    pub vibr: PlannerConfig,
    pub oc: PlannerConfig,
    pub sfm: SfmParams,
    pub reactive_cv: ReactiveParams,
    pub human_ibr: HumanModel,
    pub human_oc: HumanModel,
    pub episode: EpisodeParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            partner_model: PlannerConfig::default(),
            vibr: PlannerConfig::vanilla_ibr(),
            oc: PlannerConfig::optimal_control(),
            sfm: SfmParams::default(),
            reactive_cv: ReactiveParams::default(),
            human_ibr: HumanModel::ibr(),
            human_oc: HumanModel::oc(),
            episode: EpisodeParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn policy(&self, name: &str) -> Result<PolicySpec, CliError> {
        Ok(match name {
            "ours" => PolicySpec::Ours { planner: self.planner.clone(), partner_model: self.partner_model.clone() },
            "vibr" => PolicySpec::Vibr { planner: self.vibr.clone() },
            "oc" => PolicySpec::Oc { planner: self.oc.clone() },
            "sfm" => PolicySpec::Sfm { params: self.sfm.clone() },
            "reactive_cv" => PolicySpec::ReactiveCv { params: self.reactive_cv.clone() },
            other => return Err(CliError::Usage(format!("unknown policy {other:?}; expected one of {:?}", PolicySpec::NAMES))),
        })
    }

    pub fn human(&self, variant: HumanVariant) -> &HumanModel {
        match variant {
            HumanVariant::Ibr => &self.human_ibr,
            HumanVariant::Oc => &self.human_oc,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: prosocial_core::Result<()>| r.map_err(|e| CliError::Usage(e.to_string()));
        for name in PolicySpec::NAMES {
            check(self.policy(name)?.validate())?;
        }
        check(self.partner_model.validate())?;
        check(self.human_ibr.policy().validate())?;
        check(self.human_oc.policy().validate())?;
        if !(self.episode.duration > 0.0 && self.episode.duration.is_finite()) {
            return Err(CliError::Usage(format!("episode.duration = {}", self.episode.duration)));
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order. Keys name existing fields;
    /// values are JSON literals, or bare strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let (key, value) = parse_override(item)?;
            let slot = lookup(&mut tree, key)?;
            *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| CliError::Usage(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full dotted key for a sweep parameter; bare names refer to the robot planner.
    pub fn resolve_key(&self, key: &str) -> Result<String, CliError> {
        let full = if key.contains('.') { key.to_string() } else { format!("planner.{key}") };
        let mut tree = serde_json::to_value(self).expect("config serializes");
        lookup(&mut tree, &full)?;
        Ok(full)
    }
}

pub fn parse_override(item: &str) -> Result<(&str, &str), CliError> {
    item.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))
}

fn lookup<'a>(tree: &'a mut Value, key: &str) -> Result<&'a mut Value, CliError> {
    let mut node = tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(move |i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_experimental_constants() {
        let c = ExperimentConfig::default();
        assert_eq!(c.planner.markup, 1.05);
        assert_eq!(c.planner.collision_discount, 0.98);
        assert_eq!(c.planner.slack_weight, 150.0);
        assert_eq!(c.planner.budget, Some(0.2));
        assert_eq!(c.planner.collision_radius, 1.0);
        assert_eq!(c.planner.horizon, 25);
        assert_eq!(c.oc.slack_weight, 1000.0);
        assert_eq!(c.human_ibr.planner.budget, Some(0.25));
    }

    #[test]
    fn overrides_edit_nested_fields() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "planner.markup=1.1".into(),
                "human_oc.noise.omega=0".into(),
                "planner.limits.omega_bounds=[-0.5,0.5]".into(),
                "planner.budget=null".into(),
            ])
            .unwrap();
        assert_eq!(c.planner.markup, 1.1);
        assert_eq!(c.human_oc.noise.omega, 0.0);
        assert_eq!(c.planner.limits.omega_bounds, (-0.5, 0.5));
        assert_eq!(c.planner.budget, None);
        assert_eq!(c.planner.convenience_weights[1], 1.0);
        let c = c.with_overrides(&["planner.convenience_weights.1=2".into()]).unwrap();
        assert_eq!(c.planner.convenience_weights[1], 2.0);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        let c = ExperimentConfig::default();
        for bad in ["planner.nope=1", "markup", "planner.markup=fast", "planner.markup=0.5", "=3"] {
            assert!(matches!(c.with_overrides(&[bad.into()]), Err(CliError::Usage(_))), "{bad}");
        }
        assert_eq!(c.resolve_key("markup").unwrap(), "planner.markup");
        assert!(c.resolve_key("planner.zzz").is_err());
    }
}
