//! The gridworld: map layers, resource respawn, movement, gathering and
//! building, plus per-agent labor accounting.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The quadrant layout shipped with the crate (four quadrants split by water).
pub const DEFAULT_MAP: &str = include_str!("../maps/quadrants_25x25.txt");

/// Payout multipliers used for the four-agent game: means of the quartiles of
/// a clipped Pareto(a = 4) distribution.
pub const DEFAULT_BUILDING_SKILLS: [f64; 4] = [1.13, 1.33, 1.65, 2.22];

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("map is missing the `rows cols` header line")]
    MissingHeader,
    #[error("malformed map header `{0}`")]
    BadHeader(String),
    #[error("map row {row} has {found} cells, expected {expected}")]
    NonRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("map declares {expected} rows but has {found}")]
    RowCount { expected: usize, found: usize },
    #[error("unknown map character {ch:?} at ({row}, {col})")]
    UnknownChar { row: usize, col: usize, ch: char },
    #[error("invalid agent id {0}")]
    InvalidAgent(usize),
    #[error("{agents} agents requested but the map only has {spawns} spawn points")]
    TooManyAgents { agents: usize, spawns: usize },
    #[error("expected {expected} skill values, got {found}")]
    SkillCount { expected: usize, found: usize },
    #[error("skill {value} outside [{lo}, {hi}]")]
    SkillRange { value: f64, lo: f64, hi: f64 },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Wood,
    Stone,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 2] = [ResourceKind::Wood, ResourceKind::Stone];

    pub fn index(self) -> usize {
        match self {
            ResourceKind::Wood => 0,
            ResourceKind::Stone => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceKind::Wood => f.write_str("wood"),
            ResourceKind::Stone => f.write_str("stone"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

/// Static terrain plus the mutable resource and house layers.
///
/// Map files are a `rows cols` header followed by one line per row using
/// `.` empty, `W` water, `T` wood source, `S` stone source and `A` spawn point
/// (an empty cell where an agent may start). Lines starting with `#` are
/// comments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    height: usize,
    width: usize,
    water: Vec<bool>,
    source: Vec<Option<ResourceKind>>,
    resource: Vec<u8>,
    house: Vec<Option<usize>>,
    spawn_points: Vec<Pos>,
}

impl WorldMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spawn_points(&self) -> &[Pos] {
        &self.spawn_points
    }

    fn idx(&self, pos: Pos) -> usize {
        pos.row * self.width + pos.col
    }

    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn is_water(&self, pos: Pos) -> bool {
        self.water[self.idx(pos)]
    }

    pub fn source_kind(&self, pos: Pos) -> Option<ResourceKind> {
        self.source[self.idx(pos)]
    }

    pub fn resource_units(&self, pos: Pos) -> u8 {
        self.resource[self.idx(pos)]
    }

    /// Resource kind and units present at `pos`, if any.
    pub fn resource_at(&self, pos: Pos) -> Option<(ResourceKind, u8)> {
        let i = self.idx(pos);
        match (self.source[i], self.resource[i]) {
            (Some(kind), n) if n > 0 => Some((kind, n)),
            _ => None,
        }
    }

    pub fn house_owner(&self, pos: Pos) -> Option<usize> {
        self.house[self.idx(pos)]
    }

    pub fn set_resource(&mut self, pos: Pos, units: u8) {
        let i = self.idx(pos);
        debug_assert!(self.source[i].is_some() || units == 0);
        self.resource[i] = units;
    }

    pub fn source_cells(&self) -> impl Iterator<Item = (Pos, ResourceKind)> + '_ {
        let w = self.width;
        self.source
            .iter()
            .enumerate()
            .filter_map(move |(i, s)| s.map(|k| (Pos::new(i / w, i % w), k)))
    }

    /// Total resource units lying on the map, by kind.
    pub fn resource_totals(&self) -> [u64; 2] {
        let mut totals = [0u64; 2];
        for (s, &n) in self.source.iter().zip(&self.resource) {
            if let Some(kind) = s {
                totals[kind.index()] += u64::from(n);
            }
        }
        totals
    }

    pub fn house_count(&self) -> usize {
        self.house.iter().filter(|h| h.is_some()).count()
    }

    pub fn houses(&self) -> impl Iterator<Item = (Pos, usize)> + '_ {
        let w = self.width;
        self.house
            .iter()
            .enumerate()
            .filter_map(move |(i, h)| h.map(|o| (Pos::new(i / w, i % w), o)))
    }
}

/// Parse a map description. See [`WorldMap`] for the format.
pub fn load_map(text: &str) -> Result<WorldMap, WorldError> {
    let mut lines = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim_start().starts_with('#'));
    let header = loop {
        match lines.next() {
            Some(l) if l.trim().is_empty() => continue,
            Some(l) => break l,
            None => return Err(WorldError::MissingHeader),
        }
    };
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| WorldError::BadHeader(header.to_string()))?;
    let [height, width] = dims[..] else {
        return Err(WorldError::BadHeader(header.to_string()));
    };
    if height == 0 || width == 0 {
        return Err(WorldError::BadHeader(header.to_string()));
    }

    let n = height * width;
    let mut map = WorldMap {
        height,
        width,
        water: vec![false; n],
        source: vec![None; n],
        resource: vec![0; n],
        house: vec![None; n],
        spawn_points: Vec::new(),
    };

    let rows: Vec<&str> = lines.filter(|l| !l.is_empty()).collect();
    if rows.len() != height {
        return Err(WorldError::RowCount {
            expected: height,
            found: rows.len(),
        });
    }
    for (row, line) in rows.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(WorldError::NonRectangular {
                row,
                expected: width,
                found,
            });
        }
        for (col, ch) in line.chars().enumerate() {
            let i = row * width + col;
            match ch {
                '.' => {}
                'W' => map.water[i] = true,
                'T' => map.source[i] = Some(ResourceKind::Wood),
                'S' => map.source[i] = Some(ResourceKind::Stone),
                'A' => map.spawn_points.push(Pos::new(row, col)),
                _ => return Err(WorldError::UnknownChar { row, col, ch }),
            }
        }
    }
    Ok(map)
}

/// Each empty source cell independently gains one unit with probability `p`.
/// Cells are visited in row-major order so a seeded `rng` gives a
/// reproducible result.
pub fn spawn_resources<R: Rng + ?Sized>(map: &mut WorldMap, p: f64, max_health: u8, rng: &mut R) {
    for i in 0..map.source.len() {
        if map.source[i].is_some() && map.resource[i] == 0 && max_health > 0 {
            if rng.random::<f64>() < p {
                map.resource[i] = 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaborCosts {
    #[serde(rename = "move")]
    pub movement: f64,
    pub gather: f64,
    pub trade: f64,
    pub build: f64,
}

impl Default for LaborCosts {
    fn default() -> Self {
        Self {
            movement: 0.21,
            gather: 0.21,
            trade: 0.05,
            build: 2.1,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub wood: u32,
    pub stone: u32,
    pub coin: f64,
}

impl Inventory {
    pub fn get(&self, kind: ResourceKind) -> u32 {
        match kind {
            ResourceKind::Wood => self.wood,
            ResourceKind::Stone => self.stone,
        }
    }

    pub fn get_mut(&mut self, kind: ResourceKind) -> &mut u32 {
        match kind {
            ResourceKind::Wood => &mut self.wood,
            ResourceKind::Stone => &mut self.stone,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub pos: Pos,
    /// Holdings free to spend.
    pub inventory: Inventory,
    /// Holdings committed to open market orders.
    pub escrow: Inventory,
    pub labor: f64,
    pub building_skill: f64,
    pub collection_skill: f64,
    pub houses_built: u32,
}

impl AgentState {
    pub fn new(id: usize, pos: Pos, building_skill: f64, collection_skill: f64) -> Self {
        Self {
            id,
            pos,
            inventory: Inventory::default(),
            escrow: Inventory::default(),
            labor: 0.0,
            building_skill,
            collection_skill,
            houses_built: 0,
        }
    }

    /// Coin owned, including coin escrowed behind open bids.
    pub fn total_coin(&self) -> f64 {
        self.inventory.coin + self.escrow.coin
    }

    pub fn total_resource(&self, kind: ResourceKind) -> u32 {
        self.inventory.get(kind) + self.escrow.get(kind)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocked {
    OutOfBounds,
    Water,
    Agent(usize),
    House(usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MoveOutcome {
    Moved {
        to: Pos,
        gathered: Option<(ResourceKind, u32)>,
    },
    Blocked(Blocked),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("needs one wood and one stone")]
    InsufficientResources,
    #[error("cannot build on a source cell")]
    SourceCell,
    #[error("a house already stands here")]
    Occupied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub map: WorldMap,
    pub agents: Vec<AgentState>,
    pub labor: LaborCosts,
    /// Coin per house at building skill 1.
    pub build_payout: f64,
}

impl World {
    pub fn new(map: WorldMap, agents: Vec<AgentState>, labor: LaborCosts, build_payout: f64) -> Self {
        Self {
            map,
            agents,
            labor,
            build_payout,
        }
    }

    pub fn agent(&self, id: usize) -> Result<&AgentState, WorldError> {
        self.agents.get(id).ok_or(WorldError::InvalidAgent(id))
    }

    pub fn agent_at(&self, pos: Pos) -> Option<usize> {
        self.agents.iter().position(|a| a.pos == pos)
    }

    /// Why `agent_id` could not step in `dir`, or the destination if it can.
    pub fn move_target(&self, agent_id: usize, dir: Direction) -> Result<Result<Pos, Blocked>, WorldError> {
        let agent = self.agent(agent_id)?;
        let (dr, dc) = dir.delta();
        let (r, c) = (agent.pos.row as isize + dr, agent.pos.col as isize + dc);
        if !self.map.contains(r, c) {
            return Ok(Err(Blocked::OutOfBounds));
        }
        let to = Pos::new(r as usize, c as usize);
        if self.map.is_water(to) {
            return Ok(Err(Blocked::Water));
        }
        if let Some(other) = self.agent_at(to) {
            return Ok(Err(Blocked::Agent(other)));
        }
        match self.map.house_owner(to) {
            Some(owner) if owner != agent_id => Ok(Err(Blocked::House(owner))),
            _ => Ok(Ok(to)),
        }
    }

    /// Step one cell. Blocked moves change nothing and cost no labor; a
    /// successful move onto a populated source cell also gathers.
    pub fn move_agent<R: Rng + ?Sized>(
        &mut self,
        agent_id: usize,
        dir: Direction,
        rng: &mut R,
    ) -> Result<MoveOutcome, WorldError> {
        let to = match self.move_target(agent_id, dir)? {
            Ok(to) => to,
            Err(b) => return Ok(MoveOutcome::Blocked(b)),
        };
        let cost = self.labor.movement;
        let agent = &mut self.agents[agent_id];
        agent.pos = to;
        agent.labor += cost;
        let gathered = self.gather(agent_id, rng)?;
        Ok(MoveOutcome::Moved { to, gathered })
    }

    /// Collect the resource under the agent: one unit plus a bonus unit with
    /// probability `collection_skill - 1`. No-op on an unpopulated cell.
    pub fn gather<R: Rng + ?Sized>(
        &mut self,
        agent_id: usize,
        rng: &mut R,
    ) -> Result<Option<(ResourceKind, u32)>, WorldError> {
        let pos = self.agent(agent_id)?.pos;
        let Some((kind, _)) = self.map.resource_at(pos) else {
            return Ok(None);
        };
        self.map.set_resource(pos, 0);
        let gather_cost = self.labor.gather;
        let agent = &mut self.agents[agent_id];
        let bonus_p = (agent.collection_skill - 1.0).clamp(0.0, 1.0);
        let mut units = 1;
        if rng.random::<f64>() < bonus_p {
            units += 1;
        }
        *agent.inventory.get_mut(kind) += units;
        agent.labor += gather_cost;
        Ok(Some((kind, units)))
    }

    pub fn can_build(&self, agent_id: usize) -> Result<(), BuildError> {
        let agent = &self.agents[agent_id];
        if agent.inventory.wood < 1 || agent.inventory.stone < 1 {
            return Err(BuildError::InsufficientResources);
        }
        if self.map.source_kind(agent.pos).is_some() {
            return Err(BuildError::SourceCell);
        }
        if self.map.house_owner(agent.pos).is_some() {
            return Err(BuildError::Occupied);
        }
        Ok(())
    }

    /// Spend one wood and one stone to place a house; returns the coin earned.
    pub fn build(&mut self, agent_id: usize) -> Result<Result<f64, BuildError>, WorldError> {
        self.agent(agent_id)?;
        if let Err(e) = self.can_build(agent_id) {
            return Ok(Err(e));
        }
        let pos = self.agents[agent_id].pos;
        let i = self.map.idx(pos);
        self.map.house[i] = Some(agent_id);
        let payout = self.build_payout;
        let build_cost = self.labor.build;
        let agent = &mut self.agents[agent_id];
        agent.inventory.wood -= 1;
        agent.inventory.stone -= 1;
        let coin = payout * agent.building_skill;
        agent.inventory.coin += coin;
        agent.labor += build_cost;
        agent.houses_built += 1;
        Ok(Ok(coin))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSetup {
    pub building_skill: f64,
    pub collection_skill: f64,
    pub start: Pos,
}

/// Shuffle the fixed skill multiset over agents and give each agent a
/// distinct, randomly chosen spawn point. `building[i]` and `collection[i]`
/// travel together.
pub fn assign_skills_and_spawns<R: Rng + ?Sized>(
    n_agents: usize,
    building: &[f64],
    collection: &[f64],
    spawn_points: &[Pos],
    rng: &mut R,
) -> Result<Vec<AgentSetup>, WorldError> {
    if spawn_points.len() < n_agents {
        return Err(WorldError::TooManyAgents {
            agents: n_agents,
            spawns: spawn_points.len(),
        });
    }
    for skills in [building, collection] {
        if skills.len() != n_agents {
            return Err(WorldError::SkillCount {
                expected: n_agents,
                found: skills.len(),
            });
        }
    }
    for &b in building {
        if !(1.0..=3.0).contains(&b) {
            return Err(WorldError::SkillRange { value: b, lo: 1.0, hi: 3.0 });
        }
    }
    for &c in collection {
        if !(1.0..=2.0).contains(&c) {
            return Err(WorldError::SkillRange { value: c, lo: 1.0, hi: 2.0 });
        }
    }

    let mut order: Vec<usize> = (0..n_agents).collect();
    order.shuffle(rng);
    let mut spawns = spawn_points.to_vec();
    spawns.shuffle(rng);
    Ok(order
        .into_iter()
        .zip(spawns)
        .map(|(k, start)| AgentSetup {
            building_skill: building[k],
            collection_skill: collection[k],
            start,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empty(h: usize, w: usize) -> WorldMap {
        let row = ".".repeat(w);
        let text = format!("{h} {w}\n{}", vec![row; h].join("\n"));
        load_map(&text).unwrap()
    }

    fn world_with(map: WorldMap, positions: &[Pos]) -> World {
        let agents = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| AgentState::new(i, p, 1.0, 1.0))
            .collect();
        World::new(map, agents, LaborCosts::default(), 10.0)
    }

    #[test]
    fn default_map_has_four_water_separated_quadrants() {
        let map = load_map(DEFAULT_MAP).unwrap();
        assert_eq!((map.height(), map.width()), (25, 25));
        assert_eq!(map.spawn_points().len(), 4);
        let water_row = (0..25).filter(|&c| map.is_water(Pos::new(12, c))).count();
        let water_col = (0..25).filter(|&r| map.is_water(Pos::new(r, 12))).count();
        assert!(water_row >= 20 && water_row < 25);
        assert!(water_col >= 20 && water_col < 25);

        let quadrant_sources = |r0: usize, c0: usize| {
            let mut kinds = [0usize; 2];
            for (p, k) in map.source_cells() {
                if (r0..r0 + 12).contains(&p.row) && (c0..c0 + 12).contains(&p.col) {
                    kinds[k.index()] += 1;
                }
            }
            kinds
        };
        let tl = quadrant_sources(0, 0);
        let tr = quadrant_sources(0, 13);
        let bl = quadrant_sources(13, 0);
        let br = quadrant_sources(13, 13);
        assert!(tl[0] > 0 && tl[1] == 0);
        assert!(tr[0] == 0 && tr[1] > 0);
        assert!(bl[0] > 0 && bl[1] > 0);
        assert_eq!(br, [0, 0]);
    }

    #[test]
    fn empty_grid_has_no_water_or_sources() {
        let map = empty(2, 2);
        assert_eq!(map.source_cells().count(), 0);
        for r in 0..2 {
            for c in 0..2 {
                assert!(!map.is_water(Pos::new(r, c)));
            }
        }
    }

    #[test]
    fn water_row_sets_mask_exactly_on_that_row() {
        let map = load_map("3 4\n....\nWWWW\n....").unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(map.is_water(Pos::new(r, c)), r == 1);
            }
        }
    }

    #[test]
    fn load_map_rejects_bad_input() {
        assert_eq!(
            load_map("2 3\n...\n.."),
            Err(WorldError::NonRectangular { row: 1, expected: 3, found: 2 })
        );
        assert_eq!(
            load_map("1 2\n.x"),
            Err(WorldError::UnknownChar { row: 0, col: 1, ch: 'x' })
        );
        assert_eq!(load_map(""), Err(WorldError::MissingHeader));
        assert!(matches!(load_map("two 2\n.."), Err(WorldError::BadHeader(_))));
        assert_eq!(load_map("2 1\n."), Err(WorldError::RowCount { expected: 2, found: 1 }));
    }

    #[test]
    fn spawn_probability_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut map = load_map(DEFAULT_MAP).unwrap();
        let before = map.clone();
        spawn_resources(&mut map, 0.0, 1, &mut rng);
        assert_eq!(map, before);
        spawn_resources(&mut map, 1.0, 1, &mut rng);
        for (p, _) in map.source_cells() {
            assert_eq!(map.resource_units(p), 1);
        }
        // populated cells are left alone
        let again = map.clone();
        spawn_resources(&mut map, 1.0, 1, &mut rng);
        assert_eq!(map, again);
    }

    #[test]
    fn spawn_rate_matches_configured_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut map = load_map("1 1\nT").unwrap();
        let trials = 10_000;
        let mut hits = 0;
        for _ in 0..trials {
            map.set_resource(Pos::new(0, 0), 0);
            spawn_resources(&mut map, 0.01, 1, &mut rng);
            hits += usize::from(map.resource_units(Pos::new(0, 0)));
        }
        let frac = hits as f64 / trials as f64;
        assert!((frac - 0.01).abs() <= 0.003, "spawn fraction {frac}");
    }

    #[test]
    fn moves_respect_water_agents_and_foreign_houses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let map = load_map("3 3\n.W.\n...\n...").unwrap();
        let mut world = world_with(map, &[Pos::new(0, 0), Pos::new(1, 1)]);
        assert_eq!(
            world.move_agent(0, Direction::Right, &mut rng).unwrap(),
            MoveOutcome::Blocked(Blocked::Water)
        );
        assert_eq!(
            world.move_agent(0, Direction::Up, &mut rng).unwrap(),
            MoveOutcome::Blocked(Blocked::OutOfBounds)
        );
        assert_eq!(world.agents[0].labor, 0.0);
        world.move_agent(0, Direction::Down, &mut rng).unwrap();
        assert_eq!(
            world.move_agent(0, Direction::Right, &mut rng).unwrap(),
            MoveOutcome::Blocked(Blocked::Agent(1))
        );

        // agent 1 builds at (1,1) then leaves; agent 0 cannot enter, agent 1 can
        world.agents[1].inventory = Inventory { wood: 1, stone: 1, coin: 0.0 };
        world.build(1).unwrap().unwrap();
        world.move_agent(1, Direction::Down, &mut rng).unwrap();
        assert_eq!(
            world.move_agent(0, Direction::Right, &mut rng).unwrap(),
            MoveOutcome::Blocked(Blocked::House(1))
        );
        world.move_agent(1, Direction::Up, &mut rng).unwrap();
        assert_eq!(world.agents[1].pos, Pos::new(1, 1));
    }

    #[test]
    fn move_right_costs_move_labor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut world = world_with(empty(8, 8), &[Pos::new(3, 3)]);
        let out = world.move_agent(0, Direction::Right, &mut rng).unwrap();
        assert_eq!(out, MoveOutcome::Moved { to: Pos::new(3, 4), gathered: None });
        assert_eq!(world.agents[0].labor, 0.21);
        assert_eq!(world.move_agent(3, Direction::Up, &mut rng), Err(WorldError::InvalidAgent(3)));
    }

    #[test]
    fn gather_bonus_follows_collection_skill() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = load_map("1 2\n.T").unwrap();
        for (skill, expect_min, expect_max) in [(1.0, 1, 1), (2.0, 2, 2)] {
            let mut world = world_with(map.clone(), &[Pos::new(0, 0)]);
            world.agents[0].collection_skill = skill;
            for _ in 0..50 {
                world.agents[0].pos = Pos::new(0, 0);
                world.map.set_resource(Pos::new(0, 1), 1);
                let before = world.agents[0].inventory.wood;
                let out = world.move_agent(0, Direction::Right, &mut rng).unwrap();
                let got = world.agents[0].inventory.wood - before;
                assert!(got >= expect_min && got <= expect_max);
                assert_eq!(out, MoveOutcome::Moved { to: Pos::new(0, 1), gathered: Some((ResourceKind::Wood, got)) });
                assert_eq!(world.map.resource_units(Pos::new(0, 1)), 0);
            }
        }

        let mut world = world_with(map, &[Pos::new(0, 1)]);
        world.agents[0].collection_skill = 1.2;
        let trials = 20_000;
        let mut bonus = 0;
        for _ in 0..trials {
            world.map.set_resource(Pos::new(0, 1), 1);
            let (_, n) = world.gather(0, &mut rng).unwrap().unwrap();
            bonus += n - 1;
        }
        let frac = f64::from(bonus) / trials as f64;
        assert!((frac - 0.2).abs() < 0.015, "bonus fraction {frac}");
        // labor charged once per successful gather
        assert!((world.agents[0].labor - 0.21 * trials as f64).abs() < 1e-6);
        assert_eq!(world.gather(0, &mut rng).unwrap(), None);
    }

    #[test]
    fn build_pays_ten_times_skill() {
        let map = load_map("1 3\n.T.").unwrap();
        let mut world = world_with(map, &[Pos::new(0, 0)]);
        world.agents[0].building_skill = 2.5;
        assert_eq!(world.build(0).unwrap(), Err(BuildError::InsufficientResources));
        world.agents[0].inventory = Inventory { wood: 2, stone: 2, coin: 0.0 };
        assert_eq!(world.build(0).unwrap(), Ok(25.0));
        assert_eq!(world.agents[0].labor, 2.1);
        assert_eq!(world.build(0).unwrap(), Err(BuildError::Occupied));
        world.agents[0].pos = Pos::new(0, 1);
        assert_eq!(world.build(0).unwrap(), Err(BuildError::SourceCell));
        world.agents[0].pos = Pos::new(0, 2);
        world.agents[0].building_skill = 1.0;
        assert_eq!(world.build(0).unwrap(), Ok(10.0));
        assert_eq!(world.agents[0].inventory, Inventory { wood: 0, stone: 0, coin: 35.0 });
        assert_eq!(world.map.house_count(), 2);
    }

    #[test]
    fn skill_assignment_is_a_shuffle_of_the_fixed_set() {
        let map = load_map(DEFAULT_MAP).unwrap();
        let ones = [1.0; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let setup = assign_skills_and_spawns(4, &DEFAULT_BUILDING_SKILLS, &ones, map.spawn_points(), &mut rng).unwrap();
        let mut payouts: Vec<f64> = setup.iter().map(|s| (s.building_skill * 100.0).round() / 10.0).collect();
        payouts.sort_by(f64::total_cmp);
        assert_eq!(payouts, vec![11.3, 13.3, 16.5, 22.2]);
        let mut starts: Vec<Pos> = setup.iter().map(|s| s.start).collect();
        starts.sort_by_key(|p| (p.row, p.col));
        starts.dedup();
        assert_eq!(starts.len(), 4);

        let again = assign_skills_and_spawns(
            4,
            &DEFAULT_BUILDING_SKILLS,
            &ones,
            map.spawn_points(),
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap();
        assert_eq!(setup, again);

        assert_eq!(
            assign_skills_and_spawns(5, &[1.0; 5], &[1.0; 5], map.spawn_points(), &mut rng),
            Err(WorldError::TooManyAgents { agents: 5, spawns: 4 })
        );
    }

    #[test]
    fn top_skill_lands_uniformly() {
        let map = load_map(DEFAULT_MAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..1000 {
            let s = assign_skills_and_spawns(4, &DEFAULT_BUILDING_SKILLS, &[1.0; 4], map.spawn_points(), &mut rng).unwrap();
            let top = s.iter().position(|a| a.building_skill == 2.22).unwrap();
            counts[top] += 1;
        }
        for c in counts {
            let frac = c as f64 / 1000.0;
            assert!((frac - 0.25).abs() <= 0.04, "{counts:?}");
        }
    }
}
