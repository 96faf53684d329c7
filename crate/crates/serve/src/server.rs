//! Websocket front end. One lobby task owns the queue; each formed group
//! gets its own tick task owning its `GroupSession`. Connection handlers
//! only forward inputs and relay outgoing messages.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Json, Response};
use axum::routing::get;
use axum::Router;
use econsim_core::experiment::write_replay;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::time::MissedTickBehavior;
use tracing::{info, warn};

use crate::lobby::{Lobby, LobbyError, Placement};
use crate::protocol::{decode, encode, LobbyStatus, Message};
use crate::session::{GroupSession, Phase, SessionConfig, SessionError};

const TUTORIAL_HTML: &str = include_str!("../static/tutorial.html");

type ConnTx = mpsc::UnboundedSender<ConnEvent>;
type GroupTx = mpsc::UnboundedSender<GroupCmd>;

#[derive(Debug)]
enum ConnEvent {
    Send(Message),
    Seat { agent: usize, group: GroupTx },
}

#[derive(Debug)]
enum GroupCmd {
    Input { agent: usize, action: crate::protocol::PlayerAction },
    Survey { agent: usize, answers: std::collections::BTreeMap<String, String> },
    Attach { agent: usize, conn_id: u64, conn: ConnTx },
    Detach { agent: usize, conn_id: u64 },
}

enum LobbyCmd {
    Join {
        token: String,
        conn_id: u64,
        conn: ConnTx,
        reply: oneshot::Sender<Result<(), LobbyError>>,
    },
    Leave { token: String, conn_id: u64 },
    GroupDone { group: u64 },
}

#[derive(Clone)]
pub struct AppState {
    lobby: mpsc::UnboundedSender<LobbyCmd>,
    next_conn: Arc<AtomicU64>,
    survey: Arc<Vec<String>>,
}

/// Build the router and start the lobby task. Must be called inside a
/// tokio runtime.
pub fn app(cfg: SessionConfig) -> Result<Router, SessionError> {
    cfg.validate()?;
    let lobby = Lobby::new(cfg.group_policy.clone())?;
    let (tx, rx) = mpsc::unbounded_channel();
    let state = AppState {
        lobby: tx.clone(),
        next_conn: Arc::new(AtomicU64::new(0)),
        survey: Arc::new(cfg.survey.clone()),
    };
    tokio::spawn(run_lobby(lobby, cfg, rx, tx));
    Ok(Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/tutorial", get(|| async { Html(TUTORIAL_HTML) }))
        .route("/survey", get(|State(s): State<AppState>| async move { Json(s.survey.as_ref().clone()) }))
        .route("/health", get(|| async { "ok" }))
        .with_state(state))
}

pub async fn serve(listener: TcpListener, cfg: SessionConfig) -> io::Result<()> {
    let router = app(cfg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    info!(addr = ?listener.local_addr()?, "serving");
    axum::serve(listener, router).await
}

async fn run_lobby(
    mut lobby: Lobby,
    cfg: SessionConfig,
    mut rx: mpsc::UnboundedReceiver<LobbyCmd>,
    me: mpsc::UnboundedSender<LobbyCmd>,
) {
    let mut waiting: HashMap<String, (u64, ConnTx)> = HashMap::new();
    let mut groups: HashMap<u64, GroupTx> = HashMap::new();
    while let Some(cmd) = rx.recv().await {
        match cmd {
            LobbyCmd::Join {
                token,
                conn_id,
                conn,
                reply,
            } => match lobby.join(&token) {
                Err(e) => {
                    let _ = reply.send(Err(e));
                }
                Ok(Placement::Waiting { needed, .. }) => {
                    let _ = reply.send(Ok(()));
                    waiting.insert(token, (conn_id, conn));
                    let queued = lobby.waiting().len();
                    for (_, c) in waiting.values() {
                        let _ = c.send(ConnEvent::Send(Message::Lobby(LobbyStatus::Waiting { queued, needed })));
                    }
                }
                Ok(Placement::Reattached { group, agent }) => {
                    let _ = reply.send(Ok(()));
                    match groups.get(&group) {
                        Some(g) => {
                            let _ = conn.send(ConnEvent::Send(Message::Lobby(LobbyStatus::Reattached { group, agent })));
                            let _ = conn.send(ConnEvent::Seat { agent, group: g.clone() });
                            let _ = g.send(GroupCmd::Attach { agent, conn_id, conn });
                        }
                        None => {
                            let _ = conn.send(ConnEvent::Send(Message::Error {
                                message: "group is no longer running".into(),
                            }));
                        }
                    }
                }
                Ok(Placement::GroupFormed { group, members }) => {
                    let _ = reply.send(Ok(()));
                    waiting.insert(token, (conn_id, conn));
                    let conns: Vec<Option<(u64, ConnTx)>> = members.iter().map(|t| waiting.remove(t)).collect();
                    let session = match GroupSession::new(cfg.clone(), group, members) {
                        Ok(s) => s,
                        Err(e) => {
                            warn!(group, error = %e, "could not start group");
                            lobby.release_group(group);
                            continue;
                        }
                    };
                    let (gtx, grx) = mpsc::unbounded_channel();
                    for (agent, c) in conns.iter().enumerate() {
                        if let Some((_, c)) = c {
                            let _ = c.send(ConnEvent::Send(Message::Lobby(LobbyStatus::GroupFormed { group, agent })));
                            let _ = c.send(ConnEvent::Seat { agent, group: gtx.clone() });
                        }
                    }
                    info!(group, "group formed");
                    groups.insert(group, gtx);
                    tokio::spawn(run_group(session, conns, grx, me.clone()));
                }
            },
            LobbyCmd::Leave { token, conn_id } => {
                if waiting.get(&token).is_some_and(|(id, _)| *id == conn_id) {
                    waiting.remove(&token);
                    lobby.leave(&token);
                }
            }
            LobbyCmd::GroupDone { group } => {
                lobby.release_group(group);
                groups.remove(&group);
            }
        }
    }
}

async fn run_group(
    mut session: GroupSession,
    mut conns: Vec<Option<(u64, ConnTx)>>,
    mut rx: mpsc::UnboundedReceiver<GroupCmd>,
    lobby: mpsc::UnboundedSender<LobbyCmd>,
) {
    let send = |conns: &[Option<(u64, ConnTx)>], agent: usize, m: Message| {
        if let Some((_, c)) = &conns[agent] {
            let _ = c.send(ConnEvent::Send(m));
        }
    };
    for (a, m) in session.start() {
        send(&conns, a, m);
    }
    let mut interval = tokio::time::interval(Duration::from_millis(session.config().tick_ms));
    // Burst keeps the long-run average on the nominal rate after a stall.
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    interval.tick().await;
    while session.phase() != Phase::Finished {
        let playing = matches!(session.phase(), Phase::Playing { .. });
        tokio::select! {
            _ = interval.tick(), if playing => {
                for (a, m) in session.tick() {
                    send(&conns, a, m);
                }
            }
            cmd = rx.recv() => match cmd {
                None => break,
                Some(GroupCmd::Input { agent, action }) => session.submit(agent, action),
                Some(GroupCmd::Survey { agent, answers }) => {
                    let reply = session.submit_survey(agent, answers).unwrap_or_else(|| Message::Error {
                        message: "the survey is not open".into(),
                    });
                    send(&conns, agent, reply);
                }
                Some(GroupCmd::Attach { agent, conn_id, conn }) => {
                    conns[agent] = Some((conn_id, conn));
                    for m in session.snapshot(agent) {
                        send(&conns, agent, m);
                    }
                }
                Some(GroupCmd::Detach { agent, conn_id }) => {
                    if conns[agent].as_ref().is_some_and(|(id, _)| *id == conn_id) {
                        conns[agent] = None;
                    }
                }
            }
        }
    }
    if let Some(dir) = session.config().output_dir.clone() {
        if let Err(e) = write_group_outputs(&dir, &session) {
            warn!(group = session.group(), error = %e, "could not write group outputs");
        }
    }
    info!(group = session.group(), "group finished");
    let _ = lobby.send(LobbyCmd::GroupDone { group: session.group() });
}

/// Replays as `group-<g>/episode-<k>-<treatment>.jsonl`, survey answers as
/// `group-<g>/survey.jsonl`. Players appear only under their pseudonyms.
pub fn write_group_outputs(dir: &Path, session: &GroupSession) -> io::Result<()> {
    let dir = dir.join(format!("group-{}", session.group()));
    fs::create_dir_all(&dir)?;
    for (k, rep) in session.replays().iter().enumerate() {
        let path = dir.join(format!("episode-{k}-{}.jsonl", rep.header.treatment));
        write_replay(rep, File::create(path)?)?;
    }
    let mut f = File::create(dir.join("survey.jsonl"))?;
    for rec in session.surveys() {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state)).into_response()
}

async fn send_msg(socket: &mut WebSocket, m: &Message) -> bool {
    socket.send(WsMessage::Text(encode(m).into())).await.is_ok()
}

fn protocol_error(message: impl Into<String>) -> Message {
    Message::Error { message: message.into() }
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let token = loop {
        match socket.recv().await {
            Some(Ok(WsMessage::Text(t))) => match decode(t.as_str()) {
                Ok(Message::Hello { token }) => break token,
                Ok(_) => {
                    if !send_msg(&mut socket, &protocol_error("expected hello")).await {
                        return;
                    }
                }
                Err(e) => {
                    if !send_msg(&mut socket, &protocol_error(e.to_string())).await {
                        return;
                    }
                }
            },
            Some(Ok(WsMessage::Close(_))) | Some(Err(_)) | None => return,
            Some(Ok(_)) => {}
        }
    };
    let conn_id = state.next_conn.fetch_add(1, Ordering::Relaxed);
    let (tx, mut rx) = mpsc::unbounded_channel();
    let (reply_tx, reply_rx) = oneshot::channel();
    let join = LobbyCmd::Join {
        token: token.clone(),
        conn_id,
        conn: tx,
        reply: reply_tx,
    };
    if state.lobby.send(join).is_err() {
        return;
    }
    match reply_rx.await {
        Ok(Ok(())) => {}
        Ok(Err(e)) => {
            send_msg(&mut socket, &protocol_error(e.to_string())).await;
            return;
        }
        Err(_) => return,
    }

    let mut seat: Option<(usize, GroupTx)> = None;
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Some(ConnEvent::Send(m)) => {
                    if !send_msg(&mut socket, &m).await {
                        break;
                    }
                }
                Some(ConnEvent::Seat { agent, group }) => seat = Some((agent, group)),
                None => break,
            },
            msg = socket.recv() => match msg {
                Some(Ok(WsMessage::Text(t))) => {
                    let cmd = match (decode(t.as_str()), &seat) {
                        (Ok(Message::Action { action }), Some((agent, _))) => Ok(GroupCmd::Input { agent: *agent, action }),
                        (Ok(Message::Survey { answers, .. }), Some((agent, _))) => Ok(GroupCmd::Survey { agent: *agent, answers }),
                        (Ok(Message::Action { .. } | Message::Survey { .. }), None) => Err("not seated in a group".to_string()),
                        (Ok(other), _) => Err(format!("unexpected message from client: {}", encode(&other))),
                        (Err(e), _) => Err(e.to_string()),
                    };
                    match cmd {
                        Ok(cmd) => {
                            let (_, g) = seat.as_ref().expect("seated");
                            let _ = g.send(cmd);
                        }
                        Err(e) => {
                            if !send_msg(&mut socket, &protocol_error(e)).await {
                                break;
                            }
                        }
                    }
                }
                Some(Ok(WsMessage::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            }
        }
    }
    let _ = state.lobby.send(LobbyCmd::Leave { token, conn_id });
    if let Some((agent, g)) = seat {
        let _ = g.send(GroupCmd::Detach { agent, conn_id });
    }
}
