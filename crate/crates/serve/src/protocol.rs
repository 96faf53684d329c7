//! Wire protocol: one JSON object per websocket text frame, carrying the
//! protocol version `v` and a `type` tag.

use std::collections::BTreeMap;

use econsim_core::env::{move_action, BUILD, NOOP};
use econsim_core::world::{Direction, ResourceKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hud::Hud;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("protocol version {found} is not supported (server speaks {PROTOCOL_VERSION})")]
    Version { found: u32 },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerAction {
    Noop,
    Up,
    Down,
    Left,
    Right,
    Build,
}

impl PlayerAction {
    /// Index in the environment's agent action space.
    pub fn env_action(self) -> usize {
        match self {
            PlayerAction::Noop => NOOP,
            PlayerAction::Up => move_action(Direction::Up),
            PlayerAction::Down => move_action(Direction::Down),
            PlayerAction::Left => move_action(Direction::Left),
            PlayerAction::Right => move_action(Direction::Right),
            PlayerAction::Build => BUILD,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    Empty,
    Water,
    /// Resource source with the units currently waiting to be gathered.
    Source { resource: ResourceKind, units: u8 },
    House { owner: usize },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellUpdate {
    pub row: usize,
    pub col: usize,
    pub cell: Cell,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub houses: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LobbyStatus {
    Waiting { queued: usize, needed: usize },
    GroupFormed { group: u64, agent: usize },
    Reattached { group: u64, agent: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    /// Client greeting with its session token.
    Hello { token: String },
    Lobby(LobbyStatus),
    EpisodeStart {
        episode: usize,
        episodes: usize,
        agent: usize,
        horizon: usize,
        tax_period: usize,
        tick_ms: u64,
        building_skill: f64,
        height: usize,
        width: usize,
        /// Every non-empty cell.
        cells: Vec<CellUpdate>,
        agents: Vec<AgentView>,
        /// False in qualification sessions, where tax information is hidden.
        taxes_visible: bool,
    },
    /// Changed cells since the previous tick plus the full HUD.
    StateDelta {
        tick: usize,
        cells: Vec<CellUpdate>,
        agents: Vec<AgentView>,
        hud: Hud,
    },
    Action { action: PlayerAction },
    TaxUpdate {
        period: usize,
        cutoffs: Vec<f64>,
        rates: Vec<f64>,
    },
    EpisodeEnd {
        episode: usize,
        coin: f64,
        labor: f64,
        utility: f64,
        bonus_usd: f64,
        /// Whether a further episode follows (otherwise the survey does).
        more: bool,
    },
    /// Server: the questions (and, once answered, the confirmation code).
    /// Client: the answers.
    Survey {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        questions: Vec<String>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        answers: BTreeMap<String, String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        confirmation_code: Option<String>,
    },
    Error { message: String },
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    v: u32,
    #[serde(flatten)]
    msg: Message,
}

pub fn encode(msg: &Message) -> String {
    serde_json::to_string(&Envelope {
        v: PROTOCOL_VERSION,
        msg: msg.clone(),
    })
    .expect("messages serialize")
}

pub fn decode(text: &str) -> Result<Message, ProtocolError> {
    #[derive(Deserialize)]
    struct Version {
        v: u32,
    }
    let Version { v } = serde_json::from_str(text)?;
    if v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version { found: v });
    }
    let env: Envelope = serde_json::from_str(text)?;
    Ok(env.msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_checked() {
        let text = encode(&Message::Hello { token: "t".into() });
        assert_eq!(text, r#"{"v":1,"type":"hello","token":"t"}"#);
        let bumped = text.replace("\"v\":1", "\"v\":2");
        assert!(matches!(decode(&bumped), Err(ProtocolError::Version { found: 2 })));
        assert!(matches!(decode("{\"type\":\"hello\"}"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(decode(r#"{"v":1,"type":"dance"}"#), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn actions_map_onto_the_env_action_space() {
        assert_eq!(PlayerAction::Noop.env_action(), NOOP);
        assert_eq!(PlayerAction::Build.env_action(), BUILD);
        let moves = [PlayerAction::Up, PlayerAction::Down, PlayerAction::Left, PlayerAction::Right];
        let idx: Vec<usize> = moves.iter().map(|m| m.env_action()).collect();
        assert_eq!(idx, vec![1, 2, 3, 4]);
    }
}
