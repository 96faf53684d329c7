//! Fixtures shared by the benchmarks.

use econsim_core::env::Env;
use econsim_core::market::{OrderTemplate, Side};
use econsim_core::world::{load_map, AgentState, Inventory, LaborCosts, Pos, ResourceKind, World};
use rand::Rng;

/// Uniformly random permitted action per agent.
pub fn random_actions<R: Rng + ?Sized>(env: &Env, rng: &mut R) -> Vec<usize> {
    (0..env.config().n_agents)
        .map(|i| {
            let m = env.agent_mask(i);
            let ok: Vec<usize> = (0..m.len()).filter(|&a| m[a]).collect();
            ok[rng.random_range(0..ok.len())]
        })
        .collect()
}

/// A strip of land with `n` rich agents, so no order is ever unaffordable.
pub fn market_world(n: usize) -> World {
    let map = load_map(&format!("1 {n}\n{}", ".".repeat(n))).expect("valid map");
    let agents = (0..n)
        .map(|i| {
            let mut a = AgentState::new(i, Pos::new(0, i), 1.0, 1.0);
            a.inventory = Inventory {
                wood: 1_000_000,
                stone: 1_000_000,
                coin: 1e9,
            };
            a
        })
        .collect();
    World::new(map, agents, LaborCosts::default(), 10.0)
}

pub fn order_stream<R: Rng + ?Sized>(len: usize, agents: usize, rng: &mut R) -> Vec<(usize, OrderTemplate)> {
    (0..len)
        .map(|_| {
            let t = OrderTemplate {
                side: if rng.random_bool(0.5) { Side::Bid } else { Side::Ask },
                resource: if rng.random_bool(0.5) { ResourceKind::Wood } else { ResourceKind::Stone },
                price: rng.random_range(0..=10),
            };
            (rng.random_range(0..agents), t)
        })
        .collect()
}
