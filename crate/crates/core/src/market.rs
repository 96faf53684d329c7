//! Continuous double auction for single units of wood and stone.
//!
//! Incoming orders are matched against the best resting counter-order (lowest
//! ask for a bid, highest bid for an ask; oldest first on ties) and execute
//! at the resting order's price. Orders never partially fill and leave the
//! book only by matching or expiring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{ResourceKind, World};

/// Number of trade actions: 2 sides x 2 resources x 11 price levels.
pub const TRADE_ACTIONS: usize = 44;
pub const PRICE_LEVELS: usize = 11;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Bid => 0,
            Side::Ask => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub max_price: u8,
    pub max_order_duration: u32,
    pub max_open_orders: usize,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            max_price: 10,
            max_order_duration: 50,
            max_open_orders: 5,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub owner: usize,
    pub side: Side,
    pub resource: ResourceKind,
    pub price: u8,
    pub age: u32,
    pub sequence: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub resource: ResourceKind,
    pub price: u8,
    pub tick: u64,
    pub buyer: usize,
    pub seller: usize,
    pub bid_sequence: u64,
    pub ask_sequence: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderTemplate {
    pub side: Side,
    pub resource: ResourceKind,
    pub price: u8,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Error)]
pub enum OrderReject {
    #[error("price {0} above the maximum")]
    InvalidPrice(u8),
    #[error("agent {0} does not exist")]
    InvalidAgent(usize),
    #[error("open-order cap reached")]
    CapExceeded,
    #[error("not enough free coin")]
    InsufficientCoin,
    #[error("no free unit of the resource")]
    InsufficientResource,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Error)]
#[error("trade action index {0} out of range")]
pub struct BadTradeAction(pub usize);

/// Map a trade action in `0..44` to its order template. Ordering is
/// side-major (bids first), then resource (wood first), then price ascending.
pub fn trade_action_decode(index: usize) -> Result<OrderTemplate, BadTradeAction> {
    if index >= TRADE_ACTIONS {
        return Err(BadTradeAction(index));
    }
    let side = if index / 22 == 0 { Side::Bid } else { Side::Ask };
    let resource = ResourceKind::from_index((index / PRICE_LEVELS) % 2).expect("two kinds");
    Ok(OrderTemplate {
        side,
        resource,
        price: (index % PRICE_LEVELS) as u8,
    })
}

pub fn trade_action_encode(t: OrderTemplate) -> usize {
    t.side.index() * 22 + t.resource.index() * PRICE_LEVELS + usize::from(t.price)
}

/// Counts by `[resource][side][price]`.
pub type LevelCounts = [[[u32; PRICE_LEVELS]; 2]; 2];

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Observer {
    Agent(usize),
    Planner,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketObservation {
    /// The observer's own resting orders; all zero for the planner.
    pub own: LevelCounts,
    /// Everyone else's orders for agents, everyone's for the planner.
    pub others: LevelCounts,
    /// Mean executed price per resource over the episode (0 with no trades).
    pub average_price: [f64; 2],
    /// Executed trades per resource and price level.
    pub trade_counts: [[u32; PRICE_LEVELS]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderBook {
    params: MarketParams,
    /// Resting orders per resource, in arrival order.
    bids: [Vec<Order>; 2],
    asks: [Vec<Order>; 2],
    history: Vec<Trade>,
    next_sequence: u64,
}

impl OrderBook {
    pub fn new(params: MarketParams) -> Self {
        Self {
            params,
            bids: [Vec::new(), Vec::new()],
            asks: [Vec::new(), Vec::new()],
            history: Vec::new(),
            next_sequence: 0,
        }
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn history(&self) -> &[Trade] {
        &self.history
    }

    pub fn open_orders(&self) -> impl Iterator<Item = &Order> {
        self.bids.iter().chain(self.asks.iter()).flatten()
    }

    pub fn open_count(&self, owner: usize, resource: ResourceKind) -> usize {
        let r = resource.index();
        self.bids[r]
            .iter()
            .chain(&self.asks[r])
            .filter(|o| o.owner == owner)
            .count()
    }

    /// Would `submit` accept this order? (Matching aside.)
    pub fn check(&self, world: &World, owner: usize, t: OrderTemplate) -> Result<(), OrderReject> {
        if t.price > self.params.max_price {
            return Err(OrderReject::InvalidPrice(t.price));
        }
        let agent = world.agents.get(owner).ok_or(OrderReject::InvalidAgent(owner))?;
        if self.open_count(owner, t.resource) >= self.params.max_open_orders {
            return Err(OrderReject::CapExceeded);
        }
        match t.side {
            Side::Bid if agent.inventory.coin < f64::from(t.price) => Err(OrderReject::InsufficientCoin),
            Side::Ask if agent.inventory.get(t.resource) < 1 => Err(OrderReject::InsufficientResource),
            _ => Ok(()),
        }
    }

    /// Accept, escrow and charge trade labor for an order, then match it
    /// immediately if the book holds a valid counter-order. Rejections leave
    /// all state untouched.
    pub fn submit(
        &mut self,
        world: &mut World,
        owner: usize,
        t: OrderTemplate,
        tick: u64,
    ) -> Result<Option<Trade>, OrderReject> {
        self.check(world, owner, t)?;
        let labor = world.labor.trade;
        let agent = &mut world.agents[owner];
        match t.side {
            Side::Bid => {
                agent.inventory.coin -= f64::from(t.price);
                agent.escrow.coin += f64::from(t.price);
            }
            Side::Ask => {
                *agent.inventory.get_mut(t.resource) -= 1;
                *agent.escrow.get_mut(t.resource) += 1;
            }
        }
        agent.labor += labor;

        let order = Order {
            owner,
            side: t.side,
            resource: t.resource,
            price: t.price,
            age: 0,
            sequence: self.next_sequence,
        };
        self.next_sequence += 1;

        let r = t.resource.index();
        let best = match t.side {
            // lowest ask, oldest first
            Side::Bid => self.asks[r]
                .iter()
                .enumerate()
                .filter(|(_, a)| a.price <= t.price)
                .min_by_key(|(_, a)| (a.price, a.sequence))
                .map(|(i, _)| i),
            // highest bid, oldest first
            Side::Ask => self.bids[r]
                .iter()
                .enumerate()
                .filter(|(_, b)| b.price >= t.price)
                .min_by_key(|(_, b)| (std::cmp::Reverse(b.price), b.sequence))
                .map(|(i, _)| i),
        };

        let Some(i) = best else {
            match t.side {
                Side::Bid => self.bids[r].push(order),
                Side::Ask => self.asks[r].push(order),
            }
            return Ok(None);
        };
        let (bid, ask) = match t.side {
            Side::Bid => (order, self.asks[r].remove(i)),
            Side::Ask => (self.bids[r].remove(i), order),
        };
        let resting = if bid.sequence < ask.sequence { bid } else { ask };
        let trade = Trade {
            resource: t.resource,
            price: resting.price,
            tick,
            buyer: bid.owner,
            seller: ask.owner,
            bid_sequence: bid.sequence,
            ask_sequence: ask.sequence,
        };
        settle(world, &bid, &trade);
        self.history.push(trade);
        Ok(Some(trade))
    }

    /// Age every resting order by one tick and drop those older than the
    /// maximum duration, refunding their escrow.
    pub fn step_expire(&mut self, world: &mut World) -> Vec<Order> {
        let max_age = self.params.max_order_duration;
        let mut expired = Vec::new();
        for list in self.bids.iter_mut().chain(self.asks.iter_mut()) {
            for o in list.iter_mut() {
                o.age += 1;
            }
            list.retain(|o| {
                if o.age > max_age {
                    expired.push(*o);
                    false
                } else {
                    true
                }
            });
        }
        for o in &expired {
            refund(world, o);
        }
        expired
    }

    /// Cancel the agent's newest bids until at least `coin` is free, refunding
    /// escrow. Used when a tax bill exceeds free coin.
    pub fn release_bids(&mut self, world: &mut World, owner: usize, coin: f64) -> Vec<Order> {
        let mut released = Vec::new();
        while world.agents[owner].inventory.coin < coin {
            let newest = self
                .bids
                .iter()
                .enumerate()
                .flat_map(|(r, list)| list.iter().enumerate().map(move |(i, o)| (r, i, o.sequence, o.owner)))
                .filter(|&(_, _, _, o)| o == owner)
                .max_by_key(|&(_, _, seq, _)| seq);
            let Some((r, i, _, _)) = newest else { break };
            let o = self.bids[r].remove(i);
            refund(world, &o);
            released.push(o);
        }
        released
    }

    pub fn observation(&self, observer: Observer) -> MarketObservation {
        let mut obs = MarketObservation::default();
        for o in self.open_orders() {
            let slot = match observer {
                Observer::Agent(id) if o.owner == id => &mut obs.own,
                _ => &mut obs.others,
            };
            slot[o.resource.index()][o.side.index()][usize::from(o.price)] += 1;
        }
        let mut sums = [0u64; 2];
        for t in &self.history {
            let r = t.resource.index();
            obs.trade_counts[r][usize::from(t.price)] += 1;
            sums[r] += u64::from(t.price);
        }
        for r in 0..2 {
            let n: u32 = obs.trade_counts[r].iter().sum();
            obs.average_price[r] = if n == 0 { 0.0 } else { sums[r] as f64 / f64::from(n) };
        }
        obs
    }

    /// Highest resting bid and lowest resting ask for a resource.
    pub fn best_prices(&self, resource: ResourceKind) -> (Option<u8>, Option<u8>) {
        let r = resource.index();
        (
            self.bids[r].iter().map(|o| o.price).max(),
            self.asks[r].iter().map(|o| o.price).min(),
        )
    }
}

fn settle(world: &mut World, bid: &Order, trade: &Trade) {
    let price = f64::from(trade.price);
    let buyer = &mut world.agents[trade.buyer];
    buyer.escrow.coin -= f64::from(bid.price);
    buyer.inventory.coin += f64::from(bid.price) - price;
    *buyer.inventory.get_mut(trade.resource) += 1;
    let seller = &mut world.agents[trade.seller];
    *seller.escrow.get_mut(trade.resource) -= 1;
    seller.inventory.coin += price;
}

fn refund(world: &mut World, o: &Order) {
    let agent = &mut world.agents[o.owner];
    match o.side {
        Side::Bid => {
            agent.escrow.coin -= f64::from(o.price);
            agent.inventory.coin += f64::from(o.price);
        }
        Side::Ask => {
            *agent.escrow.get_mut(o.resource) -= 1;
            *agent.inventory.get_mut(o.resource) += 1;
        }
    }
}
