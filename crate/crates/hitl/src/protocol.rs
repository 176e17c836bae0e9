//! Wire messages. Every message is one JSON text frame carrying `type` and
//! `schema`; the workspace README lists them field by field.

use prosocial_core::dynamics::{AgentControl, Limits};
use prosocial_core::planner::Wall;
use prosocial_core::simulation::Role;
use serde::{Deserialize, Serialize};

pub const SCHEMA: u32 = 1;

/// Key-state bits of [`ClientMsg::Input`]`::keys`.
pub const KEY_UP: u8 = 1;
pub const KEY_DOWN: u8 = 2;
pub const KEY_LEFT: u8 = 4;
pub const KEY_RIGHT: u8 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Hello {
        schema: u32,
        #[serde(default)]
        client: String,
    },
    Input {
        schema: u32,
        /// Client clock [ms]; informational only.
        #[serde(default)]
        timestamp: f64,
        #[serde(default)]
        omega: Option<f64>,
        #[serde(default)]
        a: Option<f64>,
        /// Key bitfield; takes precedence over `omega`/`a` when present.
        #[serde(default)]
        keys: Option<u8>,
    },
    /// Client-requested pause (`paused: true`) or resume.
    Pause { schema: u32, paused: bool },
}

impl ClientMsg {
    pub fn schema(&self) -> u32 {
        match self {
            ClientMsg::Hello { schema, .. } | ClientMsg::Input { schema, .. } | ClientMsg::Pause { schema, .. } => *schema,
        }
    }
}

/// Command of an input message, clamped into `limits`; `None` if a value
/// is not finite.
pub fn input_control(omega: Option<f64>, a: Option<f64>, keys: Option<u8>, limits: &Limits) -> Option<AgentControl> {
    let raw = match keys {
        Some(k) => {
            let on = |bit: u8| k & bit != 0;
            let omega = match (on(KEY_LEFT), on(KEY_RIGHT)) {
                (true, false) => limits.omega_bounds.1,
                (false, true) => limits.omega_bounds.0,
                _ => 0.0,
            };
            let a = match (on(KEY_UP), on(KEY_DOWN)) {
                (true, false) => limits.a_bounds.1,
                (false, true) => limits.a_bounds.0,
                _ => 0.0,
            };
            AgentControl { omega, a }
        }
        None => AgentControl { omega: omega.unwrap_or(0.0), a: a.unwrap_or(0.0) },
    };
    (raw.omega.is_finite() && raw.a.is_finite()).then(|| limits.clamp_control(raw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: String,
    pub role: Role,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: usize,
    /// Simulation time after the tick [s].
    pub time: f64,
    pub agents: Vec<AgentView>,
    /// Peripheral agent positions.
    pub peripherals: Vec<[f64; 2]>,
    /// Robot plan positions, `T + 2` points (empty when it holds or has no plan).
    pub preview: Vec<[f64; 2]>,
    pub walls: Vec<Wall>,
    pub collision_radius: f64,
    /// The robot planner overran the tick budget this tick.
    pub overrun: bool,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Hello {
        schema: u32,
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        tick_hz: f64,
        human_id: String,
        robot_id: String,
    },
    State {
        schema: u32,
        #[serde(flatten)]
        state: WorldState,
    },
    Pause {
        schema: u32,
        reason: String,
    },
}

impl ServerMsg {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMsg = serde_json::from_str(r#"{"type":"input","schema":1,"timestamp":5,"keys":5}"#).unwrap();
        let ClientMsg::Input { keys, .. } = m else { panic!() };
        assert_eq!(keys, Some(KEY_UP | KEY_LEFT));
        let m: ClientMsg = serde_json::from_str(r#"{"type":"hello","schema":2}"#).unwrap();
        assert_eq!(m.schema(), 2);
        assert!(serde_json::from_str::<ClientMsg>(r#"{"type":"state","schema":1}"#).is_err());
    }

    #[test]
    fn inputs_are_clamped_and_keys_translated() {
        let lim = Limits::default();
        assert_eq!(input_control(Some(7.0), Some(-9.0), None, &lim), Some(AgentControl { omega: 1.0, a: -1.5 }));
        assert_eq!(input_control(None, None, Some(KEY_UP | KEY_RIGHT), &lim), Some(AgentControl { omega: -1.0, a: 1.5 }));
        assert_eq!(input_control(None, None, Some(KEY_LEFT | KEY_RIGHT | KEY_DOWN), &lim), Some(AgentControl { omega: 0.0, a: -1.5 }));
        assert_eq!(input_control(Some(f64::NAN), None, None, &lim), None);
    }

    #[test]
    fn state_message_is_flat() {
        let msg = ServerMsg::State {
            schema: SCHEMA,
            state: WorldState {
                tick: 3,
                time: 0.4,
                agents: vec![],
                peripherals: vec![],
                preview: vec![],
                walls: vec![],
                collision_radius: 1.0,
                overrun: false,
                done: false,
            },
        };
        let v: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["schema"], 1);
        assert_eq!(v["tick"], 3);
        assert_eq!(serde_json::from_value::<ServerMsg>(v).unwrap(), msg);
    }
}
