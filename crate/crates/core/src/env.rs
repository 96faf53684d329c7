//! Episode orchestration: the tick loop, action spaces and masks,
//! observation encoding, rewards and tax-period scheduling.
//!
//! Tick order: at a period start the tax rates for the period are fixed
//! (from the planner action sampled on that same tick, or from the
//! configured controller); then resources respawn, agents act in a fresh
//! uniformly random order, resting orders age and expire, and on the last
//! tick of a period taxes are settled. Rewards are utility and welfare
//! differences, so they telescope exactly over an episode.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{
    trade_action_decode, MarketParams, Observer, OrderBook, Trade, PRICE_LEVELS, TRADE_ACTIONS,
};
use crate::metrics::{self, WelfareWeights};
use crate::tax::{
    settle_period, PeriodLedger, SaezController, TaxError, TaxSchedule, US_FEDERAL_CUTOFFS,
};
use crate::world::{
    assign_skills_and_spawns, load_map, spawn_resources, AgentState, Direction, LaborCosts, MoveOutcome, Pos,
    ResourceKind, World, WorldError, WorldMap, DEFAULT_BUILDING_SKILLS, DEFAULT_MAP,
};

pub const NOOP: usize = 0;
pub const BUILD: usize = 5;
pub const TRADE_OFFSET: usize = 6;
pub const AGENT_ACTIONS: usize = TRADE_OFFSET + TRADE_ACTIONS;
/// Rate levels 0, 0.05, ..., 1.0 per bracket, after the per-head NO-OP.
pub const RATE_LEVELS: usize = 21;
pub const PLANNER_HEAD_ACTIONS: usize = RATE_LEVELS + 1;

/// Move actions 1..=4 are up, down, left, right.
pub fn move_action(dir: Direction) -> usize {
    1 + Direction::ALL.iter().position(|&d| d == dir).expect("listed")
}

pub fn rate_of_planner_action(a: usize) -> Option<f64> {
    (1..=RATE_LEVELS).contains(&a).then(|| (a - 1) as f64 * 0.05)
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Tax(#[from] TaxError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerObjective {
    EqTimesProd,
    Utilitarian,
    Rawlsian,
    InverseIncome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub horizon: usize,
    pub tax_period: usize,
    /// Inline map text; the bundled quadrant map when absent.
    pub map: Option<String>,
    pub respawn_probability: f64,
    pub max_resource_health: u8,
    pub labor: LaborCosts,
    pub build_payout: f64,
    pub building_skills: Vec<f64>,
    /// Defaults to 1.0 (no bonus) for every agent.
    pub collection_skills: Option<Vec<f64>>,
    pub market: MarketParams,
    pub trading_enabled: bool,
    pub tax_cutoffs: Vec<f64>,
    pub eta: f64,
    pub window_radius: usize,
    pub coin_scale: f64,
    pub labor_scale: f64,
    pub planner_objective: PlannerObjective,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            horizon: 1000,
            tax_period: 100,
            map: None,
            respawn_probability: 0.01,
            max_resource_health: 1,
            labor: LaborCosts::default(),
            build_payout: 10.0,
            building_skills: DEFAULT_BUILDING_SKILLS.to_vec(),
            collection_skills: None,
            market: MarketParams::default(),
            trading_enabled: true,
            tax_cutoffs: US_FEDERAL_CUTOFFS.to_vec(),
            eta: metrics::DEFAULT_ETA,
            window_radius: 5,
            coin_scale: 100.0,
            labor_scale: 10.0,
            planner_objective: PlannerObjective::EqTimesProd,
        }
    }
}

impl EnvConfig {
    /// Rule variant used for human play: no trading, only building costs
    /// labor (15), 3000 ticks in periods of 300, cutoffs scaled down by 3.
    pub fn human_mode() -> Self {
        Self {
            horizon: 3000,
            tax_period: 300,
            labor: LaborCosts {
                movement: 0.0,
                gather: 0.0,
                trade: 0.0,
                build: 15.0,
            },
            trading_enabled: false,
            tax_cutoffs: US_FEDERAL_CUTOFFS.iter().map(|m| m / 3.0).collect(),
            ..Self::default()
        }
    }

    pub fn periods(&self) -> usize {
        self.horizon / self.tax_period
    }

    pub fn brackets(&self) -> usize {
        self.tax_cutoffs.len()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.n_agents < 2 {
            return bad("at least two agents are required");
        }
        if self.tax_period == 0 || self.horizon == 0 || self.horizon % self.tax_period != 0 {
            return bad("the tax period must divide the horizon");
        }
        if !(0.0..=1.0).contains(&self.respawn_probability) {
            return bad("respawn probability outside [0, 1]");
        }
        if self.eta <= 0.0 || self.eta == 1.0 {
            return bad("eta must be positive and different from 1");
        }
        if self.building_skills.len() != self.n_agents {
            return bad("one building skill per agent is required");
        }
        if let Some(c) = &self.collection_skills {
            if c.len() != self.n_agents {
                return bad("one collection skill per agent is required");
            }
        }
        let l = &self.labor;
        if [l.movement, l.gather, l.trade, l.build].iter().any(|c| *c < 0.0) {
            return bad("labor costs must be nonnegative");
        }
        TaxSchedule::zero(&self.tax_cutoffs).with_rates(vec![0.0; self.brackets()])?;
        Ok(())
    }

    fn collection(&self) -> Vec<f64> {
        self.collection_skills.clone().unwrap_or_else(|| vec![1.0; self.n_agents])
    }

    pub fn agent_layout(&self) -> ObsLayout {
        let side = 2 * self.window_radius + 1;
        let n = self.n_agents;
        let b = self.brackets();
        ObsLayout {
            height: side,
            width: side,
            channels: AGENT_CHANNELS,
            // inventory 6, private 3, market 4*11 own + 4*11 others + 2 avg
            // + 2*11 trade counts, tax b + 1 + 2 + n + 1, time 1
            vector: 6 + 3 + 4 * PRICE_LEVELS * 2 + 2 + 2 * PRICE_LEVELS + b + 4 + n + 1,
        }
    }

    pub fn planner_layout(&self, map: &WorldMap) -> ObsLayout {
        let n = self.n_agents;
        let b = self.brackets();
        ObsLayout {
            height: map.height(),
            width: map.width(),
            channels: 5 + 2 * n,
            // public states 6n, market 4*11 + 2 + 2*11, tax b + 2 + 2n, time 1
            vector: 6 * n + 4 * PRICE_LEVELS + 2 + 2 * PRICE_LEVELS + b + 2 + 2 * n + 1,
        }
    }

    pub fn load_map(&self) -> Result<WorldMap, EnvError> {
        Ok(load_map(self.map.as_deref().unwrap_or(DEFAULT_MAP))?)
    }
}

/// Channels of the agent's egocentric window.
pub const AGENT_CHANNELS: usize = 10;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub vector: usize,
}

impl ObsLayout {
    pub fn spatial_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Spatial block stored row-major as `[row][col][channel]`, plus a flat
/// vector of non-spatial features.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub spatial: Vec<f64>,
    pub vector: Vec<f64>,
}

/// How the period's tax rates are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxController {
    Free,
    Fixed(TaxSchedule),
    Saez(Box<SaezController>),
    /// Rates from the planner action at each period start.
    Planner,
    /// Every bracket drawn uniformly from the rate levels under the cap.
    RandomRates,
    /// One schedule per period (replays of recorded episodes).
    Scripted(Vec<TaxSchedule>),
}

impl TaxController {
    pub fn uses_planner(&self) -> bool {
        matches!(self, TaxController::Planner)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildEvent {
    pub agent: usize,
    pub pos: Pos,
    pub coin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub tick: usize,
    /// Schedule fixed for the period starting on this tick.
    pub schedule_applied: Option<TaxSchedule>,
    pub trades: Vec<Trade>,
    pub builds: Vec<BuildEvent>,
    pub settlement: Option<PeriodLedger>,
    /// Agents whose submitted action was masked (executed as NO-OP).
    pub masked_actions: Vec<usize>,
    pub planner_masked_heads: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub planner_reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug)]
pub struct Env {
    cfg: EnvConfig,
    base_map: WorldMap,
    world: World,
    book: OrderBook,
    controller: TaxController,
    schedule: TaxSchedule,
    rng: ChaCha8Rng,
    t: usize,
    rate_cap: f64,
    period_income: Vec<f64>,
    ledgers: Vec<PeriodLedger>,
    last_utility: Vec<f64>,
    last_welfare: f64,
    initial_utility: Vec<f64>,
    initial_welfare: f64,
    order: Vec<usize>,
}

impl Env {
    pub fn new(cfg: EnvConfig, controller: TaxController, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let base_map = cfg.load_map()?;
        if base_map.spawn_points().len() < cfg.n_agents {
            return Err(WorldError::TooManyAgents {
                agents: cfg.n_agents,
                spawns: base_map.spawn_points().len(),
            }
            .into());
        }
        let schedule = TaxSchedule::zero(&cfg.tax_cutoffs);
        let mut env = Self {
            world: World::new(base_map.clone(), Vec::new(), cfg.labor.clone(), cfg.build_payout),
            book: OrderBook::new(cfg.market.clone()),
            base_map,
            controller,
            schedule,
            rng: ChaCha8Rng::seed_from_u64(seed),
            t: 0,
            rate_cap: 1.0,
            period_income: Vec::new(),
            ledgers: Vec::new(),
            last_utility: Vec::new(),
            last_welfare: 0.0,
            initial_utility: Vec::new(),
            initial_welfare: 0.0,
            order: (0..cfg.n_agents).collect(),
            cfg,
        };
        env.reset(seed)?;
        Ok(env)
    }

    /// Start a new episode: fresh map, zero inventories, labor and rates,
    /// skills and spawn points drawn from the seed.
    pub fn reset(&mut self, seed: u64) -> Result<(), EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let setups = assign_skills_and_spawns(
            self.cfg.n_agents,
            &self.cfg.building_skills,
            &self.cfg.collection(),
            self.base_map.spawn_points(),
            &mut self.rng,
        )?;
        let agents = setups
            .iter()
            .enumerate()
            .map(|(i, s)| AgentState::new(i, s.start, s.building_skill, s.collection_skill))
            .collect();
        self.world = World::new(self.base_map.clone(), agents, self.cfg.labor.clone(), self.cfg.build_payout);
        self.book = OrderBook::new(self.cfg.market.clone());
        self.schedule = TaxSchedule::zero(&self.cfg.tax_cutoffs);
        self.t = 0;
        self.period_income = vec![0.0; self.cfg.n_agents];
        self.ledgers.clear();
        self.last_utility = self.utilities();
        self.last_welfare = self.welfare();
        self.initial_utility = self.last_utility.clone();
        self.initial_welfare = self.last_welfare;
        Ok(())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    pub fn controller(&self) -> &TaxController {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut TaxController {
        &mut self.controller
    }

    pub fn schedule(&self) -> &TaxSchedule {
        &self.schedule
    }

    pub fn tick(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.cfg.horizon
    }

    pub fn is_period_start(&self) -> bool {
        self.t % self.cfg.tax_period == 0 && !self.done()
    }

    pub fn period(&self) -> usize {
        self.t / self.cfg.tax_period
    }

    pub fn period_income(&self) -> &[f64] {
        &self.period_income
    }

    pub fn ledgers(&self) -> &[PeriodLedger] {
        &self.ledgers
    }

    pub fn rate_cap(&self) -> f64 {
        self.rate_cap
    }

    /// Highest rate the planner (and the random-rate controller) may choose.
    pub fn set_rate_cap(&mut self, cap: f64) {
        self.rate_cap = cap.clamp(0.0, 1.0);
    }

    pub fn agent_layout(&self) -> ObsLayout {
        self.cfg.agent_layout()
    }

    pub fn planner_layout(&self) -> ObsLayout {
        self.cfg.planner_layout(&self.base_map)
    }

    /// Total coin (free plus escrowed) per agent.
    pub fn coin(&self) -> Vec<f64> {
        self.world.agents.iter().map(AgentState::total_coin).collect()
    }

    pub fn labor(&self) -> Vec<f64> {
        self.world.agents.iter().map(|a| a.labor).collect()
    }

    pub fn utilities(&self) -> Vec<f64> {
        let eta = self.cfg.eta;
        self.world
            .agents
            .iter()
            .map(|a| metrics::utility(a.total_coin(), a.labor, eta))
            .collect()
    }

    /// Planner objective evaluated on the current state.
    pub fn welfare(&self) -> f64 {
        let coin = self.coin();
        let mode = match self.cfg.planner_objective {
            PlannerObjective::EqTimesProd => return metrics::swf_eq_times_prod(&coin),
            PlannerObjective::Utilitarian => WelfareWeights::Utilitarian,
            PlannerObjective::Rawlsian => WelfareWeights::Rawlsian,
            PlannerObjective::InverseIncome => WelfareWeights::InverseIncome,
        };
        metrics::swf_weighted(&coin, &self.labor(), mode, self.cfg.eta)
    }

    pub fn initial_utility(&self) -> &[f64] {
        &self.initial_utility
    }

    pub fn initial_welfare(&self) -> f64 {
        self.initial_welfare
    }

    /// Feasible agent actions given the current state.
    pub fn agent_mask(&self, agent: usize) -> Vec<bool> {
        let mut mask = vec![false; AGENT_ACTIONS];
        mask[NOOP] = true;
        for dir in Direction::ALL {
            mask[move_action(dir)] = matches!(self.world.move_target(agent, dir), Ok(Ok(_)));
        }
        mask[BUILD] = self.world.can_build(agent).is_ok();
        if self.cfg.trading_enabled {
            for k in 0..TRADE_ACTIONS {
                let tpl = trade_action_decode(k).expect("in range");
                mask[TRADE_OFFSET + k] = self.book.check(&self.world, agent, tpl).is_ok();
            }
        }
        mask
    }

    /// Planner masks, one per bracket head. Away from period starts only the
    /// NO-OP is permitted; at a period start, rates above the cap are masked.
    pub fn planner_mask(&self) -> Vec<Vec<bool>> {
        let start = self.is_period_start();
        let head: Vec<bool> = (0..PLANNER_HEAD_ACTIONS)
            .map(|a| match rate_of_planner_action(a) {
                None => true,
                Some(rate) => start && rate <= self.rate_cap + 1e-9,
            })
            .collect();
        vec![head; self.cfg.brackets()]
    }

    pub fn step(&mut self, agent_actions: &[usize], planner_action: Option<&[usize]>) -> StepOutcome {
        assert!(!self.done(), "step called after the episode ended");
        assert_eq!(agent_actions.len(), self.cfg.n_agents, "one action per agent");
        let t = self.t;
        let m = self.cfg.tax_period;
        let mut info = StepInfo {
            tick: t,
            ..StepInfo::default()
        };

        if t % m == 0 {
            let mut schedule = self.next_schedule(planner_action, &mut info);
            // the annealing cap binds every controller, not just the planner
            if schedule.rates().iter().any(|&r| r > self.rate_cap) {
                let capped = schedule.rates().iter().map(|&r| r.min(self.rate_cap)).collect();
                schedule = schedule.with_rates(capped).expect("capped rates lie in [0, 1]");
            }
            self.schedule = schedule.clone();
            info.schedule_applied = Some(schedule);
        } else if let Some(pa) = planner_action {
            info.planner_masked_heads = (0..pa.len()).filter(|&h| pa[h] != NOOP).collect();
        }

        spawn_resources(
            &mut self.world.map,
            self.cfg.respawn_probability,
            self.cfg.max_resource_health,
            &mut self.rng,
        );

        let masks: Vec<Vec<bool>> = (0..self.cfg.n_agents).map(|i| self.agent_mask(i)).collect();
        self.order.shuffle(&mut self.rng);
        for k in 0..self.order.len() {
            let i = self.order[k];
            let a = agent_actions[i];
            if a >= AGENT_ACTIONS || !masks[i][a] {
                if a != NOOP {
                    info.masked_actions.push(i);
                }
                continue;
            }
            self.apply_agent_action(i, a, &mut info);
        }
        info.masked_actions.sort_unstable();

        self.book.step_expire(&mut self.world);

        if t % m == m - 1 {
            let ledger = self.settle();
            info.settlement = Some(ledger);
        }
        self.t += 1;

        let utility = self.utilities();
        let welfare = self.welfare();
        let rewards = utility.iter().zip(&self.last_utility).map(|(u, p)| u - p).collect();
        let planner_reward = welfare - self.last_welfare;
        self.last_utility = utility;
        self.last_welfare = welfare;
        StepOutcome {
            rewards,
            planner_reward,
            done: self.done(),
            info,
        }
    }

    fn next_schedule(&mut self, planner_action: Option<&[usize]>, info: &mut StepInfo) -> TaxSchedule {
        let cutoffs = &self.cfg.tax_cutoffs;
        match &mut self.controller {
            TaxController::Free => TaxSchedule::zero(cutoffs),
            TaxController::Fixed(s) => s.clone(),
            TaxController::Saez(c) => c.next_schedule(&self.schedule),
            TaxController::Scripted(list) => list
                .get(self.t / self.cfg.tax_period)
                .cloned()
                .unwrap_or_else(|| TaxSchedule::zero(cutoffs)),
            TaxController::RandomRates => {
                let levels = (0..RATE_LEVELS)
                    .filter(|&k| k as f64 * 0.05 <= self.rate_cap + 1e-9)
                    .count();
                let rates = (0..cutoffs.len())
                    .map(|_| self.rng.random_range(0..levels) as f64 * 0.05)
                    .collect();
                self.schedule.with_rates(rates).expect("rate levels lie in [0, 1]")
            }
            TaxController::Planner => {
                let mask = self.planner_mask();
                let mut rates = self.schedule.rates().to_vec();
                if let Some(pa) = planner_action {
                    for (h, &a) in pa.iter().enumerate().take(rates.len()) {
                        match rate_of_planner_action(a) {
                            Some(r) if mask[h][a] => rates[h] = r,
                            Some(_) => info.planner_masked_heads.push(h),
                            None if a == NOOP => {}
                            None => info.planner_masked_heads.push(h),
                        }
                    }
                }
                self.schedule.with_rates(rates).expect("rate levels lie in [0, 1]")
            }
        }
    }

    fn apply_agent_action(&mut self, i: usize, a: usize, info: &mut StepInfo) {
        match a {
            NOOP => {}
            1..=4 => {
                let dir = Direction::ALL[a - 1];
                let out = self.world.move_agent(i, dir, &mut self.rng).expect("valid agent");
                debug_assert!(matches!(out, MoveOutcome::Moved { .. } | MoveOutcome::Blocked(_)));
            }
            BUILD => {
                let pos = self.world.agents[i].pos;
                if let Ok(Ok(coin)) = self.world.build(i) {
                    self.period_income[i] += coin;
                    info.builds.push(BuildEvent { agent: i, pos, coin });
                }
            }
            _ => {
                let tpl = trade_action_decode(a - TRADE_OFFSET).expect("in range");
                if let Ok(Some(trade)) = self.book.submit(&mut self.world, i, tpl, self.t as u64) {
                    let price = f64::from(trade.price);
                    self.period_income[trade.buyer] -= price;
                    self.period_income[trade.seller] += price;
                    info.trades.push(trade);
                }
            }
        }
    }

    fn settle(&mut self) -> PeriodLedger {
        let ledger = settle_period(self.period(), &self.period_income, &self.schedule);
        for (i, adj) in ledger.adjustments().enumerate() {
            if adj < 0.0 {
                self.book.release_bids(&mut self.world, i, -adj);
            }
            let coin = &mut self.world.agents[i].inventory.coin;
            *coin += adj;
            // rounding can leave a dust-sized negative balance
            if *coin < 0.0 {
                debug_assert!(*coin > -1e-9);
                *coin = 0.0;
            }
        }
        if let TaxController::Saez(c) = &mut self.controller {
            c.observe(&ledger);
        }
        self.period_income.iter_mut().for_each(|z| *z = 0.0);
        self.ledgers.push(ledger.clone());
        ledger
    }

    fn tax_features(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.schedule.rates());
        let m = self.cfg.tax_period as f64;
        out.push((self.t % self.cfg.tax_period) as f64 / m);
        out.push(if self.is_period_start() { 1.0 } else { 0.0 });
    }

    fn previous_incomes(&self) -> (Vec<f64>, Vec<f64>) {
        match self.ledgers.last() {
            Some(l) => (l.incomes.clone(), l.marginal_rates.clone()),
            None => (vec![0.0; self.cfg.n_agents], vec![0.0; self.cfg.n_agents]),
        }
    }

    fn market_features(&self, observer: Observer, out: &mut Vec<f64>) {
        let obs = self.book.observation(observer);
        let blocks: &[&crate::market::LevelCounts] = match observer {
            Observer::Agent(_) => &[&obs.own, &obs.others],
            Observer::Planner => &[&obs.others],
        };
        for block in blocks {
            for res in block.iter() {
                for side in res.iter() {
                    out.extend(side.iter().map(|&c| f64::from(c)));
                }
            }
        }
        out.extend(obs.average_price.iter().map(|p| p / f64::from(self.cfg.market.max_price.max(1))));
        for res in &obs.trade_counts {
            out.extend(res.iter().map(|&c| f64::from(c)));
        }
    }

    /// Egocentric window plus the agent's own state, the market and the tax
    /// block. Vector layout: own wood, stone, coin, escrowed wood, stone,
    /// coin; building skill, collection skill, labor; own and others' order
    /// counts by (resource, side, price); average prices; trade counts by
    /// (resource, price); bracket rates, period progress, period-start flag,
    /// marginal rate at own period income, own period income, sorted
    /// previous-period incomes; episode progress.
    pub fn agent_obs(&self, agent: usize) -> Observation {
        let layout = self.agent_layout();
        let r = self.cfg.window_radius as isize;
        let me = &self.world.agents[agent];
        let map = &self.world.map;
        let mut spatial = vec![0.0; layout.spatial_len()];
        let c = layout.channels;
        for dr in -r..=r {
            for dc in -r..=r {
                let (row, col) = (me.pos.row as isize + dr, me.pos.col as isize + dc);
                if !map.contains(row, col) {
                    continue;
                }
                let p = Pos::new(row as usize, col as usize);
                let base = (((dr + r) as usize) * layout.width + (dc + r) as usize) * c;
                let cell = &mut spatial[base..base + c];
                cell[0] = f64::from(u8::from(map.is_water(p)));
                match map.source_kind(p) {
                    Some(ResourceKind::Wood) => cell[1] = 1.0,
                    Some(ResourceKind::Stone) => cell[2] = 1.0,
                    None => {}
                }
                if let Some((kind, units)) = map.resource_at(p) {
                    cell[3 + kind.index()] = f64::from(units);
                }
                match map.house_owner(p) {
                    Some(o) if o == agent => cell[5] = 1.0,
                    Some(_) => cell[6] = 1.0,
                    None => {}
                }
                match self.world.agent_at(p) {
                    Some(o) if o == agent => cell[7] = 1.0,
                    Some(_) => cell[8] = 1.0,
                    None => {}
                }
                cell[9] = 1.0;
            }
        }

        let cs = self.cfg.coin_scale;
        let mut v = Vec::with_capacity(layout.vector);
        let (inv, esc) = (&me.inventory, &me.escrow);
        v.extend([
            f64::from(inv.wood),
            f64::from(inv.stone),
            inv.coin / cs,
            f64::from(esc.wood),
            f64::from(esc.stone),
            esc.coin / cs,
            me.building_skill,
            me.collection_skill,
            me.labor / self.cfg.labor_scale,
        ]);
        self.market_features(Observer::Agent(agent), &mut v);
        self.tax_features(&mut v);
        let z = self.period_income[agent];
        v.push(self.schedule.marginal_rate_at(z.max(0.0)));
        v.push(z / cs);
        let (mut prev, _) = self.previous_incomes();
        prev.sort_by(f64::total_cmp);
        v.extend(prev.iter().map(|z| z / cs));
        v.push(self.t as f64 / self.cfg.horizon as f64);
        debug_assert_eq!(v.len(), layout.vector);
        Observation { spatial, vector: v }
    }

    /// Full map, every agent's public state (no skills or labor), the
    /// cumulative market, and the tax block with per-agent previous incomes
    /// and marginal rates. Channels: water, wood source, stone source, wood,
    /// stone, one position layer per agent, one house layer per agent.
    pub fn planner_obs(&self) -> Observation {
        let layout = self.planner_layout();
        let n = self.cfg.n_agents;
        let c = layout.channels;
        let map = &self.world.map;
        let mut spatial = vec![0.0; layout.spatial_len()];
        for row in 0..map.height() {
            for col in 0..map.width() {
                let p = Pos::new(row, col);
                let base = (row * layout.width + col) * c;
                let cell = &mut spatial[base..base + c];
                cell[0] = f64::from(u8::from(map.is_water(p)));
                match map.source_kind(p) {
                    Some(ResourceKind::Wood) => cell[1] = 1.0,
                    Some(ResourceKind::Stone) => cell[2] = 1.0,
                    None => {}
                }
                if let Some((kind, units)) = map.resource_at(p) {
                    cell[3 + kind.index()] = f64::from(units);
                }
                if let Some(o) = map.house_owner(p) {
                    cell[5 + n + o] = 1.0;
                }
            }
        }
        for a in &self.world.agents {
            spatial[(a.pos.row * layout.width + a.pos.col) * c + 5 + a.id] = 1.0;
        }

        let cs = self.cfg.coin_scale;
        let mut v = Vec::with_capacity(layout.vector);
        for a in &self.world.agents {
            v.extend([
                f64::from(a.inventory.wood),
                f64::from(a.inventory.stone),
                a.inventory.coin / cs,
                f64::from(a.escrow.wood),
                f64::from(a.escrow.stone),
                a.escrow.coin / cs,
            ]);
        }
        self.market_features(Observer::Planner, &mut v);
        self.tax_features(&mut v);
        let (prev, rates) = self.previous_incomes();
        v.extend(prev.iter().map(|z| z / cs));
        v.extend(rates);
        v.push(self.t as f64 / self.cfg.horizon as f64);
        debug_assert_eq!(v.len(), layout.vector);
        Observation { spatial, vector: v }
    }
}
