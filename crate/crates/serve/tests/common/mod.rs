#![allow(dead_code)]

use econsim_core::env::EnvConfig;
use econsim_core::world::{ResourceKind, World};
use econsim_serve::protocol::PlayerAction;
use econsim_serve::session::{SessionConfig, CAMELBACK_PLACEHOLDER};
use rand::Rng;

pub fn short_config(horizon: usize, period: usize, tick_ms: u64) -> SessionConfig {
    SessionConfig {
        env: EnvConfig {
            horizon,
            tax_period: period,
            ..EnvConfig::human_mode()
        },
        tick_ms,
        seed: 11,
        camelback_rates: Some(CAMELBACK_PLACEHOLDER.to_vec()),
        ..SessionConfig::default()
    }
}

pub fn tokens(prefix: &str) -> Vec<String> {
    (0..4).map(|i| format!("{prefix}-{i}")).collect()
}

/// Build when possible, otherwise walk toward the nearest source of a
/// missing resource; an occasional random step unsticks it.
pub fn bot_action<R: Rng>(world: &World, agent: usize, rng: &mut R) -> PlayerAction {
    let a = &world.agents[agent];
    let random_step = [PlayerAction::Up, PlayerAction::Down, PlayerAction::Left, PlayerAction::Right][rng.random_range(0..4)];
    if a.inventory.wood > 0 && a.inventory.stone > 0 {
        // houses go on plain ground only
        let free = world.map.source_kind(a.pos).is_none() && world.map.house_owner(a.pos).is_none();
        return if free { PlayerAction::Build } else { random_step };
    }
    if rng.random_bool(0.2) {
        return random_step;
    }
    let want = if a.inventory.wood == 0 {
        ResourceKind::Wood
    } else {
        ResourceKind::Stone
    };
    let target = world
        .map
        .source_cells()
        .filter(|&(p, k)| k == want && world.map.resource_units(p) > 0)
        .map(|(p, _)| p)
        .min_by_key(|p| p.row.abs_diff(a.pos.row) + p.col.abs_diff(a.pos.col));
    match target {
        Some(p) if p.row < a.pos.row => PlayerAction::Up,
        Some(p) if p.row > a.pos.row => PlayerAction::Down,
        Some(p) if p.col < a.pos.col => PlayerAction::Left,
        Some(p) if p.col > a.pos.col => PlayerAction::Right,
        _ => PlayerAction::Noop,
    }
}
