//! One group's run through its four episodes and the survey. Synchronous and
//! single-owner: the server drives it from the group's tick task, tests
//! drive it directly.

use std::collections::BTreeMap;
use std::path::PathBuf;

use econsim_core::env::{Env, EnvConfig, EnvError, NOOP};
use econsim_core::experiment::{EpisodeReplay, ReplayHeader, TickRecord};
use econsim_core::experiment::{ExperimentConfig, ExperimentError, Treatment};
use econsim_core::learn::EpisodeSummary;
use econsim_core::tax::SaezConfig;
use econsim_core::world::Pos;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hud::{bonus_usd, profitable_houses_left, Hud, TaxHud};
use crate::lobby::{GroupPolicy, GROUP_SIZE};
use crate::protocol::{AgentView, Cell, CellUpdate, Message, PlayerAction};

/// Two-humped stand-in for the camelback schedule, one rate per bracket.
/// Its exact rates were never published, so sessions must set them
/// explicitly; `configs/session.toml` uses these.
pub const CAMELBACK_PLACEHOLDER: [f64; 7] = [0.30, 0.15, 0.30, 0.40, 0.25, 0.10, 0.35];

pub fn default_survey() -> Vec<String> {
    [
        "Describe the strategy you used to decide when to build.",
        "Did the tax schedule change how you played? How?",
        "Did you notice any lag or connection problems?",
        "Any other feedback?",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub env: EnvConfig,
    pub tick_ms: u64,
    /// One episode per entry, played in a per-group random order when
    /// `shuffle` is set.
    pub treatments: Vec<Treatment>,
    pub shuffle: bool,
    pub camelback_rates: Option<Vec<f64>>,
    pub saez: SaezConfig,
    /// Hide all tax information from players.
    pub qualification: bool,
    pub group_policy: GroupPolicy,
    pub seed: u64,
    /// Replays and survey answers are written here when set.
    pub output_dir: Option<PathBuf>,
    pub survey: Vec<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::human_mode(),
            tick_ms: 100,
            treatments: vec![Treatment::Free, Treatment::UsFederal, Treatment::Saez, Treatment::Camelback],
            shuffle: true,
            camelback_rates: None,
            saez: SaezConfig::default(),
            qualification: false,
            group_policy: GroupPolicy::Fill,
            seed: 0,
            output_dir: None,
            survey: default_survey(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("groups have {GROUP_SIZE} players but the environment has {0} agents")]
    GroupSize(usize),
    #[error("no treatments configured")]
    NoTreatments,
    #[error("treatment {0} needs a planner and cannot be played live")]
    Unplayable(Treatment),
    #[error("tick interval must be positive")]
    TickInterval,
    #[error(transparent)]
    Lobby(#[from] crate::lobby::LobbyError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl SessionConfig {
    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            camelback_rates: self.camelback_rates.clone(),
            saez: self.saez.clone(),
            env: self.env.clone(),
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.env.n_agents != GROUP_SIZE {
            return Err(SessionError::GroupSize(self.env.n_agents));
        }
        if self.treatments.is_empty() {
            return Err(SessionError::NoTreatments);
        }
        if self.tick_ms == 0 {
            return Err(SessionError::TickInterval);
        }
        self.env.validate()?;
        let exp = self.experiment();
        for &t in &self.treatments {
            if exp.controller_for(t)?.uses_planner() {
                return Err(SessionError::Unplayable(t));
            }
        }
        Ok(())
    }

    pub fn episode_seconds(&self) -> f64 {
        self.env.horizon as f64 * self.tick_ms as f64 / 1000.0
    }
}

/// Stable pseudonym for a player token, used in everything written to disk.
pub fn pseudonym(session_seed: u64, token: &str) -> String {
    let mut h = Sha256::new();
    h.update(session_seed.to_le_bytes());
    h.update(token.as_bytes());
    format!("player-{}", &hex::encode(h.finalize())[..12])
}

fn confirmation_code(session_seed: u64, group: u64, token: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"confirm");
    h.update(session_seed.to_le_bytes());
    h.update(group.to_le_bytes());
    h.update(token.as_bytes());
    hex::encode(h.finalize())[..10].to_uppercase()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    Playing { episode: usize },
    Survey,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub group: u64,
    pub player: String,
    pub answers: BTreeMap<String, String>,
    pub total_bonus_usd: f64,
}

/// Messages produced by a session call, addressed by agent index.
pub type Outbox = Vec<(usize, Message)>;

pub struct GroupSession {
    cfg: SessionConfig,
    group: u64,
    tokens: Vec<String>,
    players: Vec<String>,
    schedule: Vec<(Treatment, u64)>,
    config_hash: String,
    phase: Phase,
    env: Env,
    header: ReplayHeader,
    ticks: Vec<TickRecord>,
    inputs: Vec<Option<PlayerAction>>,
    cells: Vec<Cell>,
    last_coin_change: Vec<f64>,
    bonus: Vec<f64>,
    replays: Vec<EpisodeReplay>,
    surveys: Vec<Option<SurveyRecord>>,
}

impl GroupSession {
    /// `tokens[i]` plays agent `i`.
    pub fn new(cfg: SessionConfig, group: u64, tokens: Vec<String>) -> Result<Self, SessionError> {
        cfg.validate()?;
        if tokens.len() != GROUP_SIZE {
            return Err(SessionError::GroupSize(tokens.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ group.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut treatments = cfg.treatments.clone();
        if cfg.shuffle {
            treatments.shuffle(&mut rng);
        }
        let schedule: Vec<(Treatment, u64)> = treatments.into_iter().map(|t| (t, rng.random())).collect();
        let players = tokens.iter().map(|t| pseudonym(cfg.seed, t)).collect();
        let exp = cfg.experiment();
        let config_hash = exp.config_hash();
        let (treatment, seed) = schedule[0];
        let env = Env::new(cfg.env.clone(), exp.controller_for(treatment)?, seed)?;
        let mut s = Self {
            header: ReplayHeader::new(&env, &config_hash, seed, treatment),
            cells: Vec::new(),
            inputs: vec![None; GROUP_SIZE],
            last_coin_change: vec![0.0; GROUP_SIZE],
            bonus: vec![0.0; GROUP_SIZE],
            replays: Vec::new(),
            surveys: vec![None; GROUP_SIZE],
            ticks: Vec::new(),
            phase: Phase::Playing { episode: 0 },
            cfg,
            group,
            tokens,
            players,
            schedule,
            config_hash,
            env,
        };
        s.header.players = s.players.clone();
        s.cells = s.grid();
        Ok(s)
    }

    pub fn group(&self) -> u64 {
        self.group
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    /// Treatment and environment seed of every episode, in play order.
    pub fn episodes(&self) -> &[(Treatment, u64)] {
        &self.schedule
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    /// Bonus earned over finished episodes.
    pub fn bonus(&self) -> &[f64] {
        &self.bonus
    }

    /// Opening messages for every player.
    pub fn start(&self) -> Outbox {
        (0..GROUP_SIZE).flat_map(|a| self.snapshot(a).into_iter().map(move |m| (a, m))).collect()
    }

    /// Full state for one player, for the episode start or a reconnect.
    pub fn snapshot(&self, agent: usize) -> Vec<Message> {
        match self.phase {
            Phase::Playing { episode } => {
                let mut out = vec![self.episode_start(episode, agent)];
                if self.env.tick() > 0 {
                    out.extend(self.tax_update());
                    out.push(self.state_delta(agent, self.full_cells()));
                }
                out
            }
            Phase::Survey => vec![self.survey_prompt()],
            Phase::Finished => Vec::new(),
        }
    }

    /// Buffer a player's action for the next tick; later inputs replace
    /// earlier ones. Ignored outside play.
    pub fn submit(&mut self, agent: usize, action: PlayerAction) {
        if matches!(self.phase, Phase::Playing { .. }) && agent < GROUP_SIZE {
            self.inputs[agent] = Some(action);
        }
    }

    pub fn tick(&mut self) -> Outbox {
        let Phase::Playing { episode } = self.phase else {
            return Vec::new();
        };
        let actions: Vec<usize> = self
            .inputs
            .iter_mut()
            .map(|a| a.take().map_or(NOOP, PlayerAction::env_action))
            .collect();
        let coin_before = self.env.coin();
        let out = self.env.step(&actions, None);
        let coin = self.env.coin();
        for (i, (after, before)) in coin.iter().zip(&coin_before).enumerate() {
            if after != before {
                self.last_coin_change[i] = after - before;
            }
        }
        let new_schedule = out.info.schedule_applied.is_some();
        self.ticks.push(TickRecord {
            actions,
            planner_action: None,
            rewards: out.rewards,
            planner_reward: out.planner_reward,
            coin,
            labor: self.env.labor(),
            info: out.info,
        });

        let grid = self.grid();
        let changed: Vec<CellUpdate> = grid
            .iter()
            .zip(&self.cells)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (&cell, _))| self.cell_update(i, cell))
            .collect();
        self.cells = grid;

        let mut outbox = Outbox::new();
        for a in 0..GROUP_SIZE {
            if new_schedule {
                outbox.extend(self.tax_update().map(|m| (a, m)));
            }
            outbox.push((a, self.state_delta(a, changed.clone())));
        }
        if out.done {
            self.finish_episode(episode, &mut outbox);
        }
        outbox
    }

    fn finish_episode(&mut self, episode: usize, outbox: &mut Outbox) {
        let utility = self.env.utilities();
        let coin = self.env.coin();
        let labor = self.env.labor();
        for a in 0..GROUP_SIZE {
            self.bonus[a] += bonus_usd(utility[a]);
        }
        self.replays.push(EpisodeReplay {
            header: self.header.clone(),
            ticks: std::mem::take(&mut self.ticks),
            summary: EpisodeSummary::of(&self.env),
        });
        let more = episode + 1 < self.schedule.len();
        for a in 0..GROUP_SIZE {
            outbox.push((
                a,
                Message::EpisodeEnd {
                    episode,
                    coin: coin[a],
                    labor: labor[a],
                    utility: utility[a],
                    bonus_usd: bonus_usd(utility[a]),
                    more,
                },
            ));
        }
        if more {
            let (treatment, seed) = self.schedule[episode + 1];
            let controller = self.cfg.experiment().controller_for(treatment).expect("validated");
            self.env = Env::new(self.cfg.env.clone(), controller, seed).expect("validated");
            self.header = ReplayHeader::new(&self.env, &self.config_hash, seed, treatment);
            self.header.players = self.players.clone();
            self.inputs = vec![None; GROUP_SIZE];
            self.last_coin_change = vec![0.0; GROUP_SIZE];
            self.cells = self.grid();
            self.phase = Phase::Playing { episode: episode + 1 };
            outbox.extend(self.start());
        } else {
            self.phase = Phase::Survey;
            outbox.extend((0..GROUP_SIZE).map(|a| (a, self.survey_prompt())));
        }
    }

    /// Record a player's answers and hand back their confirmation code.
    /// Resubmitting replaces the answers but keeps the code.
    pub fn submit_survey(&mut self, agent: usize, answers: BTreeMap<String, String>) -> Option<Message> {
        if self.phase != Phase::Survey || agent >= GROUP_SIZE {
            return None;
        }
        self.surveys[agent] = Some(SurveyRecord {
            group: self.group,
            player: self.players[agent].clone(),
            answers,
            total_bonus_usd: self.bonus[agent],
        });
        if self.surveys.iter().all(Option::is_some) {
            self.phase = Phase::Finished;
        }
        Some(Message::Survey {
            questions: Vec::new(),
            answers: BTreeMap::new(),
            confirmation_code: Some(confirmation_code(self.cfg.seed, self.group, &self.tokens[agent])),
        })
    }

    /// Finished episodes, in play order.
    pub fn replays(&self) -> &[EpisodeReplay] {
        &self.replays
    }

    pub fn surveys(&self) -> impl Iterator<Item = &SurveyRecord> {
        self.surveys.iter().flatten()
    }

    fn survey_prompt(&self) -> Message {
        Message::Survey {
            questions: self.cfg.survey.clone(),
            answers: BTreeMap::new(),
            confirmation_code: None,
        }
    }

    fn episode_start(&self, episode: usize, agent: usize) -> Message {
        let world = self.env.world();
        Message::EpisodeStart {
            episode,
            episodes: self.schedule.len(),
            agent,
            horizon: self.cfg.env.horizon,
            tax_period: self.cfg.env.tax_period,
            tick_ms: self.cfg.tick_ms,
            building_skill: world.agents[agent].building_skill,
            height: world.map.height(),
            width: world.map.width(),
            cells: self.full_cells(),
            agents: self.agent_views(),
            taxes_visible: !self.cfg.qualification,
        }
    }

    fn tax_update(&self) -> Option<Message> {
        if self.cfg.qualification {
            return None;
        }
        let s = self.env.schedule();
        Some(Message::TaxUpdate {
            period: self.env.period(),
            cutoffs: s.lower_edges().to_vec(),
            rates: s.rates().to_vec(),
        })
    }

    fn state_delta(&self, agent: usize, cells: Vec<CellUpdate>) -> Message {
        Message::StateDelta {
            tick: self.env.tick(),
            cells,
            agents: self.agent_views(),
            hud: self.hud(agent),
        }
    }

    pub fn hud(&self, agent: usize) -> Hud {
        let env = &self.env;
        let cfg = env.config();
        let a = &env.world().agents[agent];
        let coin = a.total_coin();
        let utility = env.utilities()[agent];
        let income = env.period_income()[agent];
        let remaining = cfg.horizon - env.tick();
        let tax = (!self.cfg.qualification).then(|| {
            let s = env.schedule();
            TaxHud {
                cutoffs: s.lower_edges().to_vec(),
                rates: s.rates().to_vec(),
                active_bracket: s.bracket_of(income),
                marginal_rate: s.marginal_rate_at(income),
                profitable_houses_left: profitable_houses_left(
                    coin,
                    income,
                    env.world().build_payout * a.building_skill,
                    s,
                    cfg.labor.build,
                    cfg.eta,
                ),
            }
        });
        Hud {
            tick: env.tick(),
            ticks_remaining: remaining,
            seconds_remaining: remaining as f64 * self.cfg.tick_ms as f64 / 1000.0,
            coin,
            labor: a.labor,
            utility,
            last_coin_change: self.last_coin_change[agent],
            bonus_usd: bonus_usd(utility),
            ticks_left_in_period: cfg.tax_period - env.tick() % cfg.tax_period,
            period_income: income,
            wood: a.inventory.wood,
            stone: a.inventory.stone,
            tax,
        }
    }

    fn agent_views(&self) -> Vec<AgentView> {
        self.env
            .world()
            .agents
            .iter()
            .map(|a| AgentView {
                id: a.id,
                row: a.pos.row,
                col: a.pos.col,
                houses: a.houses_built,
            })
            .collect()
    }

    fn grid(&self) -> Vec<Cell> {
        let map = &self.env.world().map;
        let mut cells = Vec::with_capacity(map.height() * map.width());
        for row in 0..map.height() {
            for col in 0..map.width() {
                let pos = Pos::new(row, col);
                cells.push(if map.is_water(pos) {
                    Cell::Water
                } else if let Some(owner) = map.house_owner(pos) {
                    Cell::House { owner }
                } else if let Some(resource) = map.source_kind(pos) {
                    Cell::Source {
                        resource,
                        units: map.resource_units(pos),
                    }
                } else {
                    Cell::Empty
                });
            }
        }
        cells
    }

    fn cell_update(&self, i: usize, cell: Cell) -> CellUpdate {
        let w = self.env.world().map.width();
        CellUpdate {
            row: i / w,
            col: i % w,
            cell,
        }
    }

    fn full_cells(&self) -> Vec<CellUpdate> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != Cell::Empty)
            .map(|(i, &c)| self.cell_update(i, c))
            .collect()
    }
}
