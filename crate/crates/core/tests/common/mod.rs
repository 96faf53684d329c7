//! Oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use econsim_core::env::Env;
use econsim_core::market::{OrderTemplate, Side};
use econsim_core::world::ResourceKind;
use rand::Rng;

/// Tax owed by summing each bracket's slice of `z` times its rate.
pub fn bracket_sum_tax(edges: &[f64], rates: &[f64], z: f64) -> f64 {
    let mut tax = 0.0;
    for j in 0..edges.len() {
        let lo = edges[j];
        let hi = edges.get(j + 1).copied().unwrap_or(f64::INFINITY);
        if z > lo {
            tax += rates[j] * (z.min(hi) - lo);
        }
    }
    tax
}

/// Tax on an integer income, one coin at a time: coin `k` (covering
/// `[k, k+1)`) is taxed at the rate of the bracket holding `k`. Exact when
/// every cutoff is an integer.
pub fn per_coin_tax(edges: &[f64], rates: &[f64], z: u32) -> f64 {
    (0..z)
        .map(|k| {
            let j = edges.iter().rposition(|&e| e <= k as f64).unwrap();
            rates[j]
        })
        .sum()
}

/// Pairwise-difference Gini computed on integers: returns the exact
/// numerator and denominator of `sum |x_i - x_j| / (2 n sum x)`.
pub fn pairwise_gini_ratio(x: &[u64]) -> (u64, u64) {
    let n = x.len() as u64;
    let num: u64 = x.iter().flat_map(|&a| x.iter().map(move |&b| a.abs_diff(b))).sum();
    (num, 2 * n * x.iter().sum::<u64>())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleTrade {
    pub resource: u8,
    pub price: u8,
    pub buyer: usize,
    pub seller: usize,
    pub bid_sequence: u64,
    pub ask_sequence: u64,
}

#[derive(Clone, Copy)]
struct Resting {
    seq: u64,
    owner: usize,
    side: Side,
    resource: ResourceKind,
    price: u8,
}

/// Brute-force continuous double auction over a list of resting orders:
/// each accepted arrival scans every resting order on the other side,
/// takes the best price (oldest first among equals) and trades at the
/// resting price. No expiry; orders past the per-resource cap are refused.
pub fn brute_force_match(stream: &[(usize, OrderTemplate)], cap: usize) -> Vec<OracleTrade> {
    let mut book: Vec<Resting> = Vec::new();
    let mut trades = Vec::new();
    let mut seq = 0;
    for &(owner, t) in stream {
        let open = book.iter().filter(|o| o.owner == owner && o.resource == t.resource).count();
        if open >= cap {
            continue;
        }
        let me = Resting {
            seq,
            owner,
            side: t.side,
            resource: t.resource,
            price: t.price,
        };
        seq += 1;
        let mut candidates: Vec<usize> = (0..book.len())
            .filter(|&i| {
                let o = &book[i];
                o.resource == t.resource
                    && o.side != t.side
                    && match t.side {
                        Side::Bid => o.price <= t.price,
                        Side::Ask => o.price >= t.price,
                    }
            })
            .collect();
        candidates.sort_by(|&a, &b| {
            let (x, y) = (&book[a], &book[b]);
            let by_price = match t.side {
                Side::Bid => x.price.cmp(&y.price),
                Side::Ask => y.price.cmp(&x.price),
            };
            by_price.then(x.seq.cmp(&y.seq))
        });
        match candidates.first() {
            None => book.push(me),
            Some(&i) => {
                let other = book.remove(i);
                let (bid, ask) = if t.side == Side::Bid { (me, other) } else { (other, me) };
                trades.push(OracleTrade {
                    resource: t.resource as u8,
                    price: other.price,
                    buyer: bid.owner,
                    seller: ask.owner,
                    bid_sequence: bid.seq,
                    ask_sequence: ask.seq,
                });
            }
        }
    }
    trades
}

/// Uniformly random permitted action for every agent.
pub fn random_agent_actions<R: Rng + ?Sized>(env: &Env, rng: &mut R) -> Vec<usize> {
    (0..env.config().n_agents)
        .map(|i| {
            let m = env.agent_mask(i);
            let ok: Vec<usize> = (0..m.len()).filter(|&a| m[a]).collect();
            ok[rng.random_range(0..ok.len())]
        })
        .collect()
}

/// Uniformly random permitted action on every planner head.
pub fn random_planner_action<R: Rng + ?Sized>(env: &Env, rng: &mut R) -> Vec<usize> {
    env.planner_mask()
        .iter()
        .map(|m| {
            let ok: Vec<usize> = (0..m.len()).filter(|&a| m[a]).collect();
            ok[rng.random_range(0..ok.len())]
        })
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
