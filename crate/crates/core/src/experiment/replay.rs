//! Episode replays as JSON Lines: a versioned header, one record per tick,
//! and an end record with the episode summary. A replay carries the seed,
//! the controller state at episode start and every action, which is enough
//! to re-simulate the episode exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Treatment;
use crate::env::{Env, EnvConfig, EnvError, StepInfo, TaxController};
use crate::learn::EpisodeSummary;

pub const REPLAY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported replay version {0}")]
    Version(u32),
    #[error("replay is missing its {0} record")]
    Missing(&'static str),
    #[error("unexpected {0} record on line {1}")]
    Unexpected(&'static str, usize),
    #[error("re-simulation diverged at tick {tick}")]
    Diverged { tick: usize },
    #[error("re-simulated summary differs from the recorded one")]
    SummaryMismatch,
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub treatment: Treatment,
    pub rate_cap: f64,
    /// Pseudonymous labels for the agents' controllers (human sessions).
    #[serde(default)]
    pub players: Vec<String>,
    pub env: EnvConfig,
    pub controller: TaxController,
}

impl ReplayHeader {
    /// Snapshot of a freshly reset environment.
    pub fn new(env: &Env, config_hash: &str, seed: u64, treatment: Treatment) -> Self {
        Self {
            version: REPLAY_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            treatment,
            rate_cap: env.rate_cap(),
            players: Vec::new(),
            env: env.config().clone(),
            controller: env.controller().clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub actions: Vec<usize>,
    pub planner_action: Option<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub planner_reward: f64,
    /// Per-agent coin and labor after the tick.
    pub coin: Vec<f64>,
    pub labor: Vec<f64>,
    pub info: StepInfo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReplay {
    pub header: ReplayHeader,
    pub ticks: Vec<TickRecord>,
    pub summary: EpisodeSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ReplayHeader),
    Tick(TickRecord),
    End { summary: EpisodeSummary },
}

impl EpisodeReplay {
    /// Run `env` (freshly reset) to the end of the episode, choosing actions
    /// with `choose` and recording everything.
    pub fn record(
        env: &mut Env,
        header: ReplayHeader,
        mut choose: impl FnMut(&Env) -> (Vec<usize>, Option<Vec<usize>>),
    ) -> Self {
        let mut ticks = Vec::with_capacity(env.config().horizon);
        while !env.done() {
            let (actions, planner_action) = choose(env);
            let out = env.step(&actions, planner_action.as_deref());
            ticks.push(TickRecord {
                actions,
                planner_action,
                rewards: out.rewards,
                planner_reward: out.planner_reward,
                coin: env.coin(),
                labor: env.labor(),
                info: out.info,
            });
        }
        Self {
            header,
            ticks,
            summary: EpisodeSummary::of(env),
        }
    }
}

/// Re-simulate a replay from its header and recorded actions.
pub fn replay_actions(rep: &EpisodeReplay) -> Result<EpisodeReplay, ReplayError> {
    let h = &rep.header;
    let mut env = Env::new(h.env.clone(), h.controller.clone(), h.seed)?;
    env.set_rate_cap(h.rate_cap);
    let mut header = ReplayHeader::new(&env, &h.config_hash, h.seed, h.treatment);
    header.players = h.players.clone();
    let mut ticks = rep.ticks.iter();
    Ok(EpisodeReplay::record(&mut env, header, |_| {
        let t = ticks.next().expect("replay covers the whole episode");
        (t.actions.clone(), t.planner_action.clone())
    }))
}

/// Check that re-simulating reproduces every recorded tick exactly.
pub fn verify_replay(rep: &EpisodeReplay) -> Result<(), ReplayError> {
    if rep.ticks.len() != rep.header.env.horizon {
        return Err(ReplayError::Diverged { tick: rep.ticks.len() });
    }
    let again = replay_actions(rep)?;
    if let Some(tick) = again.ticks.iter().zip(&rep.ticks).position(|(a, b)| a != b) {
        return Err(ReplayError::Diverged { tick });
    }
    if again.summary != rep.summary {
        return Err(ReplayError::SummaryMismatch);
    }
    Ok(())
}

pub fn write_replay<W: Write>(rep: &EpisodeReplay, w: W) -> io::Result<()> {
    let mut w = BufWriter::new(w);
    let mut line = |l: &Line| -> io::Result<()> {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")
    };
    line(&Line::Header(rep.header.clone()))?;
    for t in &rep.ticks {
        line(&Line::Tick(t.clone()))?;
    }
    line(&Line::End {
        summary: rep.summary.clone(),
    })?;
    w.flush()
}

pub fn read_replay<R: Read>(r: R) -> Result<EpisodeReplay, ReplayError> {
    let mut header = None;
    let mut ticks = Vec::new();
    let mut summary = None;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|source| ReplayError::Io {
            path: format!("line {n}"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|source| ReplayError::Json { line: n, source })?;
        match (parsed, &header, &summary) {
            (Line::Header(h), None, _) => {
                if h.version != REPLAY_VERSION {
                    return Err(ReplayError::Version(h.version));
                }
                header = Some(h);
            }
            (Line::Header(_), Some(_), _) => return Err(ReplayError::Unexpected("header", n)),
            (_, None, _) => return Err(ReplayError::Missing("header")),
            (_, _, Some(_)) => return Err(ReplayError::Unexpected("trailing", n)),
            (Line::Tick(t), _, None) => ticks.push(t),
            (Line::End { summary: s }, _, None) => summary = Some(s),
        }
    }
    Ok(EpisodeReplay {
        header: header.ok_or(ReplayError::Missing("header"))?,
        ticks,
        summary: summary.ok_or(ReplayError::Missing("end"))?,
    })
}

impl EpisodeReplay {
    pub fn save(&self, path: &Path) -> Result<(), ReplayError> {
        let io_err = |source| ReplayError::Io {
            path: path.display().to_string(),
            source,
        };
        let f = File::create(path).map_err(io_err)?;
        write_replay(self, f).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let f = File::open(path).map_err(|source| ReplayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        read_replay(f)
    }
}
