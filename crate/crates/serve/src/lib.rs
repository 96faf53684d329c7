//! Real-time server for human play: lobby, per-group tick loop over the
//! human-mode environment, and a versioned JSON websocket protocol.
//!
//! Message schema: `docs/protocol.md`.

pub mod hud;
pub mod lobby;
pub mod protocol;
pub mod server;
pub mod session;

pub use hud::{profitable_houses_left, Hud, BONUS_PER_UTILITY};
pub use lobby::{GroupPolicy, Lobby, LobbyError, Placement, GROUP_SIZE};
pub use protocol::{decode, encode, Message, PlayerAction, ProtocolError, PROTOCOL_VERSION};
pub use server::{app, serve};
pub use session::{GroupSession, Phase, SessionConfig, SessionError};
